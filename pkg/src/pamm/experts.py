"""Mixture-of-experts computation of state-space parameter streams.

One parameter stream (there are two per block, one for the input coupling and
one for the readout) owns a task-shared expert bank plus, per task, a routing
network and a learnable spatially-constant prior. Routing pools the feature
map down to a descriptor, gates the experts with a softmax, and keeps only the
top-k weights; surviving weights are not renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    affine,
    concat,
    gelu,
    global_pool,
    reshape,
    softmax,
    softplus,
    take,
)

__all__ = [
    "Linear", "ExpertBank", "TaskRouter", "ParamPrior", "ParamStream",
    "route", "noise_logits", "noisy_topk", "mixture", "pe_forward", "add_prior",
    "gate_balance_penalty",
]


@dataclass
class Linear:
    """Per-position linear map; applies to vectors or [C,H,W] maps."""

    w: Tensor
    b: Tensor

    @staticmethod
    def init(out_dim: int, in_dim: int, rng: Rng, scale: float | None = None) -> "Linear":
        scale = (1.0 / np.sqrt(in_dim)) if scale is None else scale
        return Linear(w=Tensor(rng.normal((out_dim, in_dim)) * scale, requires_grad=True),
                      b=Tensor(np.zeros(out_dim), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.w, self.b)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class ExpertBank:
    """Task-shared per-position projections from feature channels to state dim."""

    experts: list[Linear]

    @staticmethod
    def init(count: int, out_dim: int, in_dim: int, rng: Rng) -> "ExpertBank":
        return ExpertBank([Linear.init(out_dim, in_dim, rng) for _ in range(count)])

    @property
    def count(self) -> int:
        return len(self.experts)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for j, e in enumerate(self.experts):
            out.update(e.parameters(f"{prefix}.expert{j}"))
        return out


@dataclass
class TaskRouter:
    """Per-task gating network producing expert weights and noise magnitudes."""

    task_id: int
    proj1: Linear   # channel reduction applied per position, before pooling
    proj2: Linear   # channel reduction applied after pooling
    proj3: Linear   # descriptor -> expert logits
    noise_proj: Linear

    @staticmethod
    def init(task_id: int, in_dim: int, expert_count: int, rng: Rng) -> "TaskRouter":
        if in_dim % 4:
            raise ValueError(f"router input dim must be divisible by 4, got {in_dim}")
        quarter = in_dim // 4
        return TaskRouter(
            task_id=task_id,
            proj1=Linear.init(quarter, in_dim, rng),
            proj2=Linear.init(quarter, in_dim, rng),
            proj3=Linear.init(expert_count, in_dim // 2, rng),
            noise_proj=Linear.init(expert_count, in_dim // 2, rng),
        )

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.proj1.parameters(f"{prefix}.proj1"))
        out.update(self.proj2.parameters(f"{prefix}.proj2"))
        out.update(self.proj3.parameters(f"{prefix}.proj3"))
        out.update(self.noise_proj.parameters(f"{prefix}.noise"))
        return out


@dataclass
class ParamPrior:
    """Per-task learnable vector broadcast over all spatial positions."""

    task_id: int
    values: Tensor

    @staticmethod
    def init(task_id: int, state_dim: int) -> "ParamPrior":
        return ParamPrior(task_id=task_id,
                          values=Tensor(np.zeros(state_dim), requires_grad=True))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}": self.values}


def _router_features(x: Tensor, router: TaskRouter) -> Tensor:
    """Pooled routing descriptor: concat(pool(proj1(x)), proj2(pool(x)))."""
    if x.ndim != 3 or x.shape[0] != router.proj1.w.shape[1]:
        raise ShapeError(
            f"router built for {router.proj1.w.shape[1]} channels, got map {x.shape}")
    channel_side = global_pool(router.proj1(x))
    spatial_side = router.proj2(global_pool(x))
    return concat([channel_side, spatial_side], axis=0)


def route(x: Tensor, router: TaskRouter) -> Tensor:
    """Softmax expert gates for one task from a [C,H,W] feature map."""
    return softmax(gelu(router.proj3(_router_features(x, router))), axis=0)


def noise_logits(x: Tensor, router: TaskRouter) -> Tensor:
    """Raw per-expert noise magnitudes (softplus is applied by noisy_topk)."""
    return router.noise_proj(_router_features(x, router))


def noisy_topk(gates: Tensor, noise: Tensor, k: int, training: bool,
               rng: Rng | None = None) -> Tensor:
    """Keep the k largest entries of softmax(gates [+ noise]), zeroing the rest.

    During training, gates are perturbed by standard normal draws scaled by
    softplus(noise). Survivors keep their softmax values; no renormalization.
    """
    n = gates.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"top-k must be in [1, {n}], got {k}")
    logits = gates
    if training:
        if rng is None:
            raise ValueError("training-mode noisy_topk needs an rng")
        logits = gates + Tensor(rng.normal(n)) * softplus(noise)
    probs = softmax(logits, axis=0)
    keep = np.argsort(-probs.data, kind="stable")[:k]
    mask = np.zeros(n)
    mask[keep] = 1.0
    return probs * Tensor(mask)


def mixture(x: Tensor, r: Tensor, bank: ExpertBank) -> Tensor:
    """Weighted sum of expert outputs; zero-weight experts are skipped."""
    if r.shape != (bank.count,):
        raise ShapeError(f"weights {r.shape} do not match bank of {bank.count}")
    total = None
    for j in range(bank.count):
        if r.data[j] == 0.0:
            continue
        wj = reshape(take(r, [j], axis=0), (1, 1, 1))
        term = wj * bank.experts[j](x)
        total = term if total is None else total + term
    if total is None:
        out_dim = bank.experts[0].w.shape[0]
        total = Tensor(np.zeros((out_dim,) + x.shape[1:]))
    return total


def pe_forward(x: Tensor, router: TaskRouter, bank: ExpertBank, base_proj: Linear,
               k: int, training: bool, rng: Rng | None = None) -> Tensor:
    """Expert mixture plus the retained plain projection."""
    gates = route(x, router)
    r = noisy_topk(gates, noise_logits(x, router), k, training, rng)
    return mixture(x, r, bank) + base_proj(x)


def add_prior(y_pe: Tensor, prior: ParamPrior) -> Tensor:
    """Broadcast the task prior over every spatial position and add it."""
    if y_pe.ndim != 3 or prior.values.shape != (y_pe.shape[0],):
        raise ShapeError(
            f"prior of length {prior.values.shape} does not match map {y_pe.shape}")
    return y_pe + reshape(prior.values, (-1, 1, 1))


def gate_balance_penalty(gates: Tensor) -> Tensor:
    """Squared coefficient of variation of a gate vector (0 when uniform)."""
    m = gates.mean()
    centered = gates - m
    return (centered * centered).mean() / (m * m + 1e-10)


@dataclass
class ParamStream:
    """Everything needed to produce one parameter map for every task."""

    bank: ExpertBank
    base_proj: Linear
    routers: list[TaskRouter]
    priors: list[ParamPrior]
    top_k: int
    use_noise: bool = True
    use_experts: bool = True
    use_priors: bool = True

    @staticmethod
    def init(task_count: int, in_dim: int, state_dim: int, expert_count: int,
             top_k: int, rng: Rng, use_noise: bool = True,
             use_experts: bool = True, use_priors: bool = True,
             bank: ExpertBank | None = None) -> "ParamStream":
        if not 1 <= top_k <= expert_count:
            raise ValueError(f"top-k {top_k} out of range for {expert_count} experts")
        bank = bank if bank is not None else ExpertBank.init(
            expert_count, state_dim, in_dim, rng)
        return ParamStream(
            bank=bank,
            base_proj=Linear.init(state_dim, in_dim, rng),
            routers=[TaskRouter.init(i, in_dim, expert_count, rng)
                     for i in range(task_count)],
            priors=[ParamPrior.init(i, state_dim) for i in range(task_count)],
            top_k=top_k,
            use_noise=use_noise,
            use_experts=use_experts,
            use_priors=use_priors,
        )

    def forward(self, x: Tensor, task: int, training: bool,
                rng: Rng | None = None,
                aux: list[Tensor] | None = None) -> Tensor:
        if self.use_experts:
            router = self.routers[task]
            gates = route(x, router)
            if aux is not None:
                aux.append(gate_balance_penalty(gates))
            r = noisy_topk(gates, noise_logits(x, router), self.top_k,
                           training and self.use_noise, rng)
            y = mixture(x, r, self.bank) + self.base_proj(x)
        else:
            y = self.base_proj(x)
        if self.use_priors:
            y = add_prior(y, self.priors[task])
        return y

    def parameters(self, prefix: str, include_bank: bool = True) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        if self.use_experts:
            if include_bank:
                out.update(self.bank.parameters(f"{prefix}.bank"))
            for i, router in enumerate(self.routers):
                out.update(router.parameters(f"{prefix}.router{i}"))
        out.update(self.base_proj.parameters(f"{prefix}.base"))
        if self.use_priors:
            for i, prior in enumerate(self.priors):
                out.update(prior.parameters(f"{prefix}.prior{i}"))
        return out
