"""Finite-difference verification of every parameter group in the full stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config, ConfigError
from .data import gen_dataset
from .model import MultiTaskModel
from .tensor import NumericError, Rng, compute_grads, no_grad
from .train import GRADCHECK_STREAM, INIT_STREAM, sample_loss

__all__ = ["GroupResult", "GradCheckReport", "grad_check"]

FD_STEP = 1e-5
TOLERANCE = 1e-4
COORDS_PER_GROUP = 200
# Scaling the loss scales analytic and difference gradients identically, but
# pushes the difference quotient's float64 roundoff (|loss| * eps / 2h, about
# 1e-11 for a unit loss) safely below the clamped denominator tolerance
# (1e-8 * 1e-4), so near-zero gradients do not fail on evaluation noise.
LOSS_SCALE = 1.0 / 256.0


@dataclass
class GroupResult:
    size: int
    checked: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


@dataclass
class GradCheckReport:
    groups: dict[str, GroupResult]
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups.values())

    @property
    def worst(self) -> float:
        return max(g.max_rel_err for g in self.groups.values())

    def lines(self) -> list[str]:
        out = []
        for name, g in sorted(self.groups.items()):
            mark = "ok  " if g.passed else "FAIL"
            out.append(f"{mark} {name}: max rel err {g.max_rel_err:.3e} "
                       f"({g.checked}/{g.size} coords)")
        verdict = "PASS" if self.passed else "FAIL"
        out.append(f"{verdict}: worst relative error {self.worst:.3e} "
                   f"(tolerance {self.tolerance})")
        return out


def grad_check(config: Config) -> GradCheckReport:
    """Compare analytic gradients of the multi-task loss against central
    differences for a random subsample of coordinates in every group.

    Runs the training-mode forward, so routing noise must be disabled: with it
    on, the loss is not a deterministic function and differences are undefined.
    """
    config.validate()
    if config.experts.noise and config.experts.enabled:
        raise ConfigError(
            "gradient check refuses to run with routing noise enabled; "
            "set experts.noise = false for a deterministic forward")
    seed = config.train.seed
    model = MultiTaskModel(config, Rng(seed, INIT_STREAM))
    sample = gen_dataset(seed, 1, config.data.image_size,
                         tasks=tuple(s.name for s in config.tasks),
                         num_classes=config.data.num_classes,
                         label_stride=config.backbone.patch_stride)[0]
    specs = config.tasks

    def loss_fn():
        return sample_loss(model, sample, specs, training=True,
                           rng=None) * LOSS_SCALE

    def loss_value() -> float:
        with no_grad():
            return float(loss_fn().data)

    params = model.parameters()
    names = list(params)
    tensors = [params[n] for n in names]
    analytic = compute_grads(loss_fn(), tensors)
    for name, g in zip(names, analytic):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite analytic gradient in group {name}")

    coord_rng = Rng(seed, GRADCHECK_STREAM)
    groups: dict[str, GroupResult] = {}
    for name, tensor, grad in zip(names, tensors, analytic):
        flat = tensor.data.reshape(-1)
        size = flat.size
        if size <= COORDS_PER_GROUP:
            coords = np.arange(size)
        else:
            scores = coord_rng.uniform(0.0, 1.0, size)
            coords = np.sort(np.argsort(scores)[:COORDS_PER_GROUP])
        worst = 0.0
        gflat = grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + FD_STEP
            plus = loss_value()
            flat[i] = orig - FD_STEP
            minus = loss_value()
            flat[i] = orig
            fd = (plus - minus) / (2.0 * FD_STEP)
            denom = max(abs(gflat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(gflat[i] - fd) / denom)
        groups[name] = GroupResult(size=size, checked=len(coords),
                                   max_rel_err=worst)
    return GradCheckReport(groups=groups)
