"""Synthetic multi-task scenes: soft blobs rendered to an image, with labels
for every task derived from the same latent scene.

Per sample, blob centers / widths / amplitudes are drawn from a stream keyed by
(seed, sample index), so any sample can be regenerated independently. Labels
live at the feature resolution (image_size / label_stride):

* segment       argmax of blob ownership fields, one class per blob
* depth         normalized sum of the radial fields
* boundary      1 where a 3x3 neighborhood of the segmentation spans >= 2 classes
* mirror_depth  the depth field evaluated with every blob center point-mirrored
                through the scene center; predicting it at a pixel requires
                content from the opposite side of the map, which a single
                causal scan direction cannot see for half the positions
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import KNOWN_TASK_NAMES
from .tensor import Rng

__all__ = ["SyntheticSample", "gen_dataset", "boundary_from_segmentation",
           "EVAL_INDEX_OFFSET"]

EVAL_INDEX_OFFSET = 2 ** 32

# distinct, fixed class colors; tiled if a scene has more blobs than entries
_PALETTE = np.array([
    [0.9, 0.2, 0.1],
    [0.1, 0.8, 0.3],
    [0.2, 0.3, 0.9],
    [0.9, 0.8, 0.1],
    [0.7, 0.1, 0.8],
    [0.1, 0.9, 0.9],
    [0.9, 0.5, 0.2],
    [0.5, 0.5, 0.5],
])


@dataclass
class SyntheticSample:
    image: np.ndarray                 # [3, H0, W0]
    labels: dict[str, np.ndarray]     # class maps [h,w] or real maps [K,h,w]
    provenance: tuple[int, int]       # (dataset seed, sample index)


def _radial_fields(centers, sigmas, amps, height, width):
    """Per-blob Gaussian bumps evaluated at pixel centers: [n_blobs, h, w]."""
    rows = (np.arange(height) + 0.5) / height
    cols = (np.arange(width) + 0.5) / width
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    d2 = ((rr[None] - centers[:, 0, None, None]) ** 2
          + (cc[None] - centers[:, 1, None, None]) ** 2)
    return amps[:, None, None] * np.exp(-d2 / (2.0 * sigmas[:, None, None] ** 2))


def boundary_from_segmentation(seg: np.ndarray) -> np.ndarray:
    """1 where the clipped 3x3 neighborhood contains more than one class."""
    h, w = seg.shape
    out = np.zeros((h, w), dtype=np.int64)
    padded = np.pad(seg, 1, mode="edge")
    for di in range(3):
        for dj in range(3):
            out |= (padded[di:di + h, dj:dj + w] != seg).astype(np.int64)
    return out


def _make_sample(seed: int, index: int, image_size: int, label_size: int,
                 num_classes: int, task_names: tuple[str, ...]) -> SyntheticSample:
    rng = Rng(seed, index)
    nb = num_classes
    centers = rng.uniform(0.15, 0.85, (nb, 2))
    sigmas = rng.uniform(0.10, 0.25, nb)
    amps = rng.uniform(0.7, 1.3, nb)

    fields = _radial_fields(centers, sigmas, amps, label_size, label_size)
    seg = fields.argmax(axis=0)
    depth = fields.sum(axis=0) / nb

    labels: dict[str, np.ndarray] = {}
    for name in task_names:
        if name == "segment":
            labels[name] = seg.copy()
        elif name == "depth":
            labels[name] = depth[None].copy()
        elif name == "boundary":
            labels[name] = boundary_from_segmentation(seg)
        elif name == "mirror_depth":
            mirrored = _radial_fields(1.0 - centers, sigmas, amps,
                                      label_size, label_size)
            labels[name] = (mirrored.sum(axis=0) / nb)[None]
        else:
            raise ValueError(f"unknown task {name!r}")

    img_fields = _radial_fields(centers, sigmas, amps, image_size, image_size)
    weights = img_fields / np.maximum(img_fields.sum(axis=0, keepdims=True), 1e-12)
    palette = _PALETTE[np.arange(nb) % len(_PALETTE)]
    image = np.einsum("nhw,nc->chw", weights, palette)
    image += 0.4 * (img_fields.sum(axis=0) / nb)[None]
    image += 0.05 * rng.normal((3, image_size, image_size))
    return SyntheticSample(image=image, labels=labels, provenance=(seed, index))


def gen_dataset(seed: int, count: int, shape: int | tuple[int, int], *,
                tasks: tuple[str, ...] = ("segment", "depth", "boundary"),
                num_classes: int = 4, label_stride: int = 4,
                index_offset: int = 0) -> list[SyntheticSample]:
    """Deterministic list of samples; sample i depends only on (seed, offset+i)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if isinstance(shape, tuple):
        if shape[0] != shape[1]:
            raise ValueError(f"scenes are square, got {shape}")
        image_size = shape[0]
    else:
        image_size = int(shape)
    if image_size < label_stride or image_size % label_stride:
        raise ValueError(
            f"image size {image_size} incompatible with label stride {label_stride}")
    label_size = image_size // label_stride
    if label_size < 1:
        raise ValueError("degenerate label resolution")
    for name in tasks:
        if name not in KNOWN_TASK_NAMES:
            raise ValueError(f"unknown task {name!r}")
    return [_make_sample(seed, index_offset + i, image_size, label_size,
                         num_classes, tuple(tasks))
            for i in range(count)]
