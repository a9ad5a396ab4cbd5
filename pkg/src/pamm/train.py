"""Training loop, losses, Adam, evaluation, and the serializable run report.

Randomness is partitioned into fixed streams of one seed: sample i of the
train split uses stream i, the eval split starts at 2**32, model init lives at
2**33, and routing noise for (step, sample j) at 2**34 + step * 2**16 + j.
Runs are bitwise reproducible for a given config and seed, single- or
multi-worker, because per-sample gradients are always reduced in sample order.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, TaskSpec
from .data import EVAL_INDEX_OFFSET, SyntheticSample, gen_dataset
from .metrics import compute_delta_g, compute_miou, compute_rmse, majority_class
from .model import MultiTaskModel
from .tensor import (
    NumericError,
    Rng,
    Tensor,
    absolute,
    compute_grads,
    log_softmax,
    mean_,
    no_grad,
    sum_,
)

__all__ = [
    "Adam", "RunReport", "train", "evaluate", "sample_loss",
    "cross_entropy_loss", "l1_loss", "constant_baseline",
    "INIT_STREAM", "NOISE_STREAM_BASE", "GRADCHECK_STREAM",
]

INIT_STREAM = 2 ** 33
NOISE_STREAM_BASE = 2 ** 34
GRADCHECK_STREAM = 2 ** 35
_NOISE_STEP_STRIDE = 2 ** 16


def cross_entropy_loss(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean pixelwise cross entropy; target holds integer class indices."""
    k, h, w = logits.shape
    onehot = np.zeros((k, h, w))
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    onehot[target, rows, cols] = 1.0
    picked = sum_(log_softmax(logits, axis=0) * Tensor(onehot))
    return picked * (-1.0 / (h * w))


def l1_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    return mean_(absolute(pred - Tensor(target)))


def sample_loss(model: MultiTaskModel, sample: SyntheticSample,
                specs: list[TaskSpec], training: bool,
                rng: Rng | None = None,
                aux: list[Tensor] | None = None) -> Tensor:
    preds = model.forward(Tensor(sample.image), training=training, rng=rng, aux=aux)
    total = None
    for spec in specs:
        pred = preds[spec.name]
        target = sample.labels[spec.name]
        term = (cross_entropy_loss(pred, target) if spec.kind == "classification"
                else l1_loss(pred, target))
        total = term if total is None else total + term
    return total


class Adam:
    """Adaptive-moment optimizer over a fixed, ordered parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / bias1
            vhat = self.v[name] / bias2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _predict_arrays(model: MultiTaskModel, samples: list[SyntheticSample],
                    specs: list[TaskSpec]) -> dict[str, list[np.ndarray]]:
    out: dict[str, list[np.ndarray]] = {s.name: [] for s in specs}
    with no_grad():
        for sample in samples:
            preds = model.forward(Tensor(sample.image), training=False)
            for spec in specs:
                arr = preds[spec.name].data
                out[spec.name].append(arr.argmax(axis=0)
                                      if spec.kind == "classification" else arr)
    return out


def evaluate(model: MultiTaskModel, samples: list[SyntheticSample],
             specs: list[TaskSpec]) -> dict[str, float]:
    """Per-task metrics aggregated over the whole split."""
    preds = _predict_arrays(model, samples, specs)
    metrics: dict[str, float] = {}
    for spec in specs:
        stacked_pred = np.stack(preds[spec.name])
        stacked_gt = np.stack([s.labels[spec.name] for s in samples])
        if spec.kind == "classification":
            metrics[spec.name] = compute_miou(stacked_pred, stacked_gt,
                                              spec.channels)
        else:
            metrics[spec.name] = compute_rmse(stacked_pred, stacked_gt)
    return metrics


def constant_baseline(train_samples: list[SyntheticSample],
                      eval_samples: list[SyntheticSample],
                      specs: list[TaskSpec]) -> dict[str, float]:
    """Majority-class / train-mean predictor evaluated on the eval split."""
    metrics: dict[str, float] = {}
    for spec in specs:
        gts = [s.labels[spec.name] for s in eval_samples]
        if spec.kind == "classification":
            cls = majority_class([s.labels[spec.name] for s in train_samples],
                                 spec.channels)
            pred = np.full_like(np.stack(gts), cls)
            metrics[spec.name] = compute_miou(pred, np.stack(gts), spec.channels)
        else:
            mean_val = float(np.mean([s.labels[spec.name] for s in train_samples]))
            stacked = np.stack(gts)
            metrics[spec.name] = compute_rmse(np.full_like(stacked, mean_val),
                                              stacked)
    return metrics


@dataclass
class RunReport:
    config: dict
    seed: int
    final_metrics: dict[str, float]
    trajectories: dict[str, list[list[float]]]
    train_losses: list[float]
    baseline: dict
    delta_g: float
    wall_clock_sec: float
    schema: int = 1

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "config": self.config,
            "seed": self.seed,
            "final_metrics": self.final_metrics,
            "trajectories": self.trajectories,
            "train_losses": self.train_losses,
            "baseline": self.baseline,
            "delta_g": self.delta_g,
            "wall_clock_sec": self.wall_clock_sec,
        }

    @staticmethod
    def from_dict(raw: dict) -> "RunReport":
        return RunReport(
            config=raw["config"], seed=raw["seed"],
            final_metrics=raw["final_metrics"], trajectories=raw["trajectories"],
            train_losses=raw["train_losses"], baseline=raw["baseline"],
            delta_g=raw["delta_g"], wall_clock_sec=raw["wall_clock_sec"],
            schema=raw["schema"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @staticmethod
    def load(path: str | Path) -> "RunReport":
        return RunReport.from_dict(json.loads(Path(path).read_text()))


def _dataset_splits(config: Config):
    names = tuple(s.name for s in config.tasks)
    common = dict(tasks=names, num_classes=config.data.num_classes,
                  label_stride=config.backbone.patch_stride)
    train_set = gen_dataset(config.train.seed, config.data.train_count,
                            config.data.image_size, **common)
    eval_set = gen_dataset(config.train.seed, config.data.eval_count,
                           config.data.image_size,
                           index_offset=EVAL_INDEX_OFFSET, **common)
    return train_set, eval_set


def train(config: Config, progress: bool = False) -> RunReport:
    """Deterministic single-process training; returns the run report."""
    config.validate()
    start = time.perf_counter()
    specs = config.tasks
    seed = config.train.seed
    train_set, eval_set = _dataset_splits(config)

    model = MultiTaskModel(config, Rng(seed, INIT_STREAM))
    params = model.parameters()
    names = list(params)
    tensors = [params[n] for n in names]
    opt = Adam(params, lr=config.train.lr)

    aux_weight = config.experts.aux_loss_weight
    use_noise = config.experts.noise and config.experts.enabled
    batch = config.train.batch_size
    n_train = len(train_set)

    def one_sample(step: int, j: int, sample: SyntheticSample):
        rng = (Rng(seed, NOISE_STREAM_BASE + step * _NOISE_STEP_STRIDE + j)
               if use_noise else None)
        aux: list[Tensor] | None = [] if aux_weight > 0 else None
        loss = sample_loss(model, sample, specs, training=True, rng=rng, aux=aux)
        if aux:
            penalty = aux[0]
            for extra in aux[1:]:
                penalty = penalty + extra
            loss = loss + penalty * (aux_weight / len(aux))
        return float(loss.data), compute_grads(loss, tensors)

    trajectories: dict[str, list[list[float]]] = {s.name: [] for s in specs}

    def record_eval(step: int):
        metrics = evaluate(model, eval_set, specs)
        for name, value in metrics.items():
            trajectories[name].append([float(step), value])
        return metrics

    pool = (ThreadPoolExecutor(max_workers=config.train.workers)
            if config.train.workers > 1 else None)
    train_losses: list[float] = []
    metrics = record_eval(0)
    try:
        for step in range(config.train.steps):
            indices = [(step * batch + j) % n_train for j in range(batch)]
            jobs = [(step, j, train_set[idx]) for j, idx in enumerate(indices)]
            try:
                if pool is None:
                    results = [one_sample(*job) for job in jobs]
                else:
                    results = list(pool.map(lambda job: one_sample(*job), jobs))
            except NumericError as err:
                raise NumericError(
                    f"non-finite loss at step {step}: {err}") from err
            losses, grad_lists = zip(*results)
            train_losses.append(float(np.mean(losses)))
            reduced = {}
            for i, name in enumerate(names):
                acc = grad_lists[0][i].copy()
                for glist in grad_lists[1:]:
                    acc += glist[i]
                reduced[name] = acc / batch
            opt.step(reduced)
            if (step + 1) % config.train.eval_every == 0 or step + 1 == config.train.steps:
                metrics = record_eval(step + 1)
                if progress:
                    print(f"step {step + 1}: loss={train_losses[-1]:.4f} "
                          + " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    finally:
        if pool is not None:
            pool.shutdown()

    final_metrics = metrics
    if config.train.baseline_report:
        base_report = RunReport.load(config.train.baseline_report)
        baseline = {"name": str(config.train.baseline_report),
                    "metrics": base_report.final_metrics}
    else:
        baseline = {"name": "majority-class",
                    "metrics": constant_baseline(train_set, eval_set, specs)}
    delta = compute_delta_g(final_metrics, baseline["metrics"], specs)

    return RunReport(
        config=config.to_dict(), seed=seed, final_metrics=final_metrics,
        trajectories=trajectories, train_losses=train_losses,
        baseline=baseline, delta_g=delta,
        wall_clock_sec=time.perf_counter() - start)
