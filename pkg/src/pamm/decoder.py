"""Stage fusion with learned per-position weights, prediction heads, and the
small multi-stage backbone that feeds the stack.

Fusion concatenates the S stage maps along channels, runs a per-position
two-layer perceptron down to S logits, softmaxes them over the stage axis, and
takes the convex combination. Heads are 1x1 convolutions sized to each task's
target channels.
"""

from __future__ import annotations

import math

import numpy as np

from .experts import Linear
from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    concat,
    conv2d,
    gelu,
    reshape,
    softmax,
    sum_,
)

__all__ = ["StageFuser", "ConvHead", "ToyBackbone", "fuse_stages", "conv_head"]


class StageFuser:
    """Per-task stage-weighting network: S*C channels -> S logits per position."""

    def __init__(self, stages: int, channels: int, rng: Rng, nonlinear: bool = True):
        if stages < 1:
            raise ValueError("need at least one stage")
        in_dim = stages * channels
        hidden = max(1, in_dim // 2)
        self.stages = stages
        self.channels = channels
        self.nonlinear = nonlinear
        self.fc1 = Linear.init(hidden, in_dim, rng)
        self.fc2 = Linear.init(stages, hidden, rng)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = self.fc1.parameters(f"{prefix}.fc1")
        out.update(self.fc2.parameters(f"{prefix}.fc2"))
        return out


def fuse_stages(stages: list[Tensor], fuser: StageFuser) -> Tensor:
    """Convex per-position combination of equally shaped stage maps."""
    if len(stages) != fuser.stages:
        raise ShapeError(f"fuser built for {fuser.stages} stages, got {len(stages)}")
    shape = stages[0].shape
    for s in stages:
        if s.shape != shape:
            raise ShapeError(f"stage shapes disagree: {s.shape} vs {shape}")
    cat = concat(stages, axis=0)                        # [S*C,H,W]
    hidden = fuser.fc1(cat)
    if fuser.nonlinear:
        hidden = gelu(hidden)
    logits = fuser.fc2(hidden)                          # [S,H,W]
    weights = softmax(logits, axis=0)
    stacked = concat([reshape(s, (1,) + shape) for s in stages], axis=0)
    weighted = reshape(weights, (fuser.stages, 1) + shape[1:]) * stacked
    return sum_(weighted, axis=0)


def stage_weights(stages: list[Tensor], fuser: StageFuser) -> Tensor:
    """The softmax weight maps alone, for inspection and tests: [S,H,W]."""
    cat = concat(stages, axis=0)
    hidden = fuser.fc1(cat)
    if fuser.nonlinear:
        hidden = gelu(hidden)
    return softmax(fuser.fc2(hidden), axis=0)


class ConvHead:
    """1x1 convolution mapping the fused feature to a task's target channels."""

    def __init__(self, out_channels: int, in_channels: int, rng: Rng):
        scale = 1.0 / math.sqrt(in_channels)
        self.w = Tensor(rng.normal((out_channels, in_channels, 1, 1)) * scale,
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_channels), requires_grad=True)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def conv_head(tf: Tensor, head: ConvHead) -> Tensor:
    """Decode the fused task feature into logits / raw regression values."""
    if tf.ndim != 3 or tf.shape[0] != head.w.shape[1]:
        raise ShapeError(
            f"head expects {head.w.shape[1]} input channels, got map {tf.shape}")
    return conv2d(tf, head.w) + reshape(head.b, (-1, 1, 1))


class ToyBackbone:
    """Patch embedding plus residual channel-mixing layers with tapped stages.

    Stands in for a pretrained feature extractor at desk scale: a stride-p
    convolution embeds the image, then ``depth`` per-position mixing layers run
    and the layers listed in ``taps`` (1-based) are exposed as stage features.
    """

    def __init__(self, width: int, depth: int, patch_stride: int,
                 taps: tuple[int, ...], rng: Rng, in_channels: int = 3):
        if not taps:
            raise ValueError("need at least one tap")
        if any(t < 1 or t > depth for t in taps):
            raise ValueError(f"taps {taps} outside 1..{depth}")
        if list(taps) != sorted(taps):
            raise ValueError(f"taps must be ascending, got {taps}")
        self.width = width
        self.depth = depth
        self.patch_stride = patch_stride
        self.taps = tuple(taps)
        scale = 1.0 / math.sqrt(in_channels * patch_stride * patch_stride)
        self.patch_w = Tensor(
            rng.normal((width, in_channels, patch_stride, patch_stride)) * scale,
            requires_grad=True)
        self.patch_b = Tensor(np.zeros(width), requires_grad=True)
        self.layers = [Linear.init(width, width, rng) for _ in range(depth)]

    def forward(self, image: Tensor) -> list[Tensor]:
        if image.ndim != 3:
            raise ShapeError(f"backbone expects [C,H,W] image, got {image.shape}")
        _, h, w = image.shape
        p = self.patch_stride
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch stride {p}")
        x = conv2d(image, self.patch_w, stride=p) + reshape(self.patch_b, (-1, 1, 1))
        out = []
        for i, layer in enumerate(self.layers, start=1):
            x = x + gelu(layer(x))
            if i in self.taps:
                out.append(x)
        return out

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.patch.w": self.patch_w, f"{prefix}.patch.b": self.patch_b}
        for i, layer in enumerate(self.layers):
            out.update(layer.parameters(f"{prefix}.mix{i}"))
        return out


def backbone_forward(image: Tensor, backbone: ToyBackbone) -> list[Tensor]:
    return backbone.forward(image)
