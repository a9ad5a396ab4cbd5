"""Evaluation metrics and the multi-task aggregate gain."""

from __future__ import annotations

import numpy as np

from .config import TaskSpec

__all__ = ["compute_miou", "compute_rmse", "compute_delta_g", "majority_class"]


def compute_miou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> float:
    """Mean, over classes present in gt, of intersection-over-union."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}")
    for arr, name in ((pred, "pred"), (gt, "gt")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(
                f"{name} contains classes outside [0, {num_classes})")
    ious = []
    for c in range(num_classes):
        in_gt = gt == c
        if not in_gt.any():
            continue
        in_pred = pred == c
        inter = np.logical_and(in_pred, in_gt).sum()
        union = np.logical_or(in_pred, in_gt).sum()
        ious.append(inter / union)
    return float(np.mean(ious))


def compute_rmse(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}")
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


def compute_delta_g(ours: dict[str, float], base: dict[str, float],
                    specs: list[TaskSpec]) -> float:
    """Signed average per-task relative gain over a baseline, in percent.

    Lower-is-better metrics flip sign, so an improvement is always positive:
    delta_g = (100 / T) * sum_i (-1)^{l_i} * (M_i - B_i) / B_i.
    """
    names = {s.name for s in specs}
    if set(ours) < names or set(base) < names:
        raise ValueError(
            f"metric dicts must cover tasks {sorted(names)}; got ours="
            f"{sorted(ours)}, base={sorted(base)}")
    total = 0.0
    for spec in specs:
        b = base[spec.name]
        if b == 0.0:
            raise ValueError(f"baseline metric for {spec.name} is zero")
        sign = -1.0 if spec.lower_is_better else 1.0
        total += sign * (ours[spec.name] - b) / b
    return 100.0 * total / len(specs)


def majority_class(label_maps: list[np.ndarray], num_classes: int) -> int:
    counts = np.zeros(num_classes, dtype=np.int64)
    for m in label_maps:
        counts += np.bincount(np.asarray(m).reshape(-1), minlength=num_classes)
    return int(counts.argmax())
