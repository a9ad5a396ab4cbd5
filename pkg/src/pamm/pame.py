"""The per-stage multi-task block: local conv, parameter experts, multi-direction
scan, gating, and residual projection.

Per task the block runs: depthwise conv -> channel expansion -> parameter
streams (experts + priors) for the input-coupling and readout maps -> scan in
several Hilbert directions -> gate from a parallel path on the raw input ->
projection back to the input width plus a residual. The raw input is also
relayed unchanged as the skip feature bound for the decoding head.

Shared across tasks: conv kernels, expansion, parameter banks and base
projections, step-size projection, evolution/skip values, gate and output
maps. Per task: the two routers, the two priors, and nothing else.
"""

from __future__ import annotations

import math

import numpy as np

from .experts import ParamStream, Linear
from .hilbert import scan_order
from .ssm import SSMParams, scan_direction_batch
from .tensor import (
    Rng,
    ShapeError,
    Tensor,
    conv2d,
    depthwise_conv,
    exp,
    neg,
    reshape,
    silu,
    softplus,
)

__all__ = ["TaskConv", "PameBlock", "directions_tuple"]


def directions_tuple(count: int) -> tuple[int, ...]:
    """Scan directions used when the block is restricted to ``count`` of them."""
    if count not in (1, 2, 3, 4):
        raise ValueError(f"direction count must be 1..4, got {count}")
    return tuple(range(1, count + 1))


class TaskConv:
    """One channel-preserving 3x3 convolution per task, applied before the block."""

    def __init__(self, channels: int, rng: Rng):
        scale = 1.0 / math.sqrt(channels * 9)
        self.w = Tensor(rng.normal((channels, channels, 3, 3)) * scale,
                        requires_grad=True)
        self.b = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, stride=1, padding=1) + reshape(self.b, (-1, 1, 1))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class PameBlock:
    def __init__(self, task_count: int, channels: int, rng: Rng, *,
                 state_dim: int = 8, expansion: int = 2, dw_kernel: int = 3,
                 expert_count: int = 15, top_k: int = 9,
                 share_bc_bank: bool = False, use_noise: bool = True,
                 use_experts: bool = True, use_priors: bool = True,
                 directions: int = 4):
        if task_count < 1:
            raise ValueError("need at least one task")
        inner = expansion * channels
        if inner % 4:
            raise ValueError(
                f"inner width {inner} must be divisible by 4 for the routers")
        self.task_count = task_count
        self.channels = channels
        self.inner = inner
        self.state_dim = state_dim
        self.directions = directions_tuple(directions)

        kscale = 1.0 / dw_kernel
        self.dw = Tensor(rng.normal((channels, dw_kernel, dw_kernel)) * kscale,
                         requires_grad=True)
        self.expand = Linear.init(inner, channels, rng)
        self.b_stream = ParamStream.init(task_count, inner, state_dim,
                                         expert_count, top_k, rng,
                                         use_noise=use_noise,
                                         use_experts=use_experts,
                                         use_priors=use_priors)
        self.c_stream = ParamStream.init(
            task_count, inner, state_dim, expert_count, top_k, rng,
            use_noise=use_noise, use_experts=use_experts, use_priors=use_priors,
            bank=self.b_stream.bank if share_bc_bank else None)
        self.share_bc_bank = share_bc_bank
        self.delta_proj = Linear.init(inner, inner, rng)
        # step sizes start in [1e-3, 0.1]: invert softplus at log-uniform draws
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(0.1), inner))
        self.delta_proj.b.data[:] = np.log(np.expm1(dt))
        # state channel n decays with rate -(n + 1)
        self.a_log = Tensor(np.tile(np.log(np.arange(1, state_dim + 1)), (inner, 1)),
                            requires_grad=True)
        self.skip_d = Tensor(np.ones(inner), requires_grad=True)
        self.gate = Linear.init(inner, channels, rng)
        self.out_proj = Linear.init(channels, inner, rng)

    def forward(self, features: list[Tensor], training: bool = False,
                rng: Rng | None = None,
                aux: list[Tensor] | None = None) -> tuple[list[Tensor], list[Tensor]]:
        """Refine one feature map per task; also relay each input as a skip."""
        if len(features) != self.task_count:
            raise ShapeError(
                f"block built for {self.task_count} tasks, got {len(features)} maps")
        shape = features[0].shape
        for f in features:
            if f.shape != shape:
                raise ShapeError(f"task feature shapes disagree: {f.shape} vs {shape}")
        if shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {shape[0]}")
        _, height, width = shape
        orders = [scan_order(d, height, width) for d in self.directions]
        a = neg(exp(self.a_log))

        items = []
        for task, x in enumerate(features):
            u = depthwise_conv(x, self.dw)
            v = self.expand(u)
            b_map = self.b_stream.forward(v, task, training, rng, aux)
            c_map = self.c_stream.forward(v, task, training, rng, aux)
            delta_map = softplus(self.delta_proj(v))
            items.append((v, SSMParams(a=a, b_map=b_map, c_map=c_map,
                                       delta_map=delta_map, d=self.skip_d)))
        scanned = scan_direction_batch(items, orders)

        refined, skips = [], []
        for task, x in enumerate(features):
            gated = silu(self.gate(x)) * scanned[task]
            refined.append(self.out_proj(gated) + x)
            skips.append(x)
        return refined, skips

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {f"{prefix}.dw": self.dw}
        out.update(self.expand.parameters(f"{prefix}.expand"))
        out.update(self.b_stream.parameters(f"{prefix}.b_stream"))
        out.update(self.c_stream.parameters(f"{prefix}.c_stream",
                                            include_bank=not self.share_bc_bank))
        out.update(self.delta_proj.parameters(f"{prefix}.delta"))
        out[f"{prefix}.a_log"] = self.a_log
        out[f"{prefix}.skip_d"] = self.skip_d
        out.update(self.gate.parameters(f"{prefix}.gate"))
        out.update(self.out_proj.parameters(f"{prefix}.out"))
        return out
