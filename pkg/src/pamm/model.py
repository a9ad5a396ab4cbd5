"""Full multi-task stack: backbone stages -> per-task convolution -> one scan
block per stage -> stage fusion -> per-task prediction heads.

Each stage's task-convolution output is both the block input and the skip
feature; skips are averaged over stages and added to the fused feature right
before the head, so local detail reaches the decoder without passing through
the scans.
"""

from __future__ import annotations

from .config import Config
from .decoder import ConvHead, StageFuser, ToyBackbone, conv_head, fuse_stages
from .pame import PameBlock, TaskConv
from .tensor import Rng, Tensor

__all__ = ["MultiTaskModel"]


class MultiTaskModel:
    def __init__(self, config: Config, rng: Rng):
        config.validate()
        self.config = config
        b, p, e, d = config.backbone, config.pame, config.experts, config.decoder
        tasks = config.tasks
        self.task_names = [t.name for t in tasks]
        stages = d.stages

        self.backbone = ToyBackbone(width=b.width, depth=b.depth,
                                    patch_stride=b.patch_stride, taps=b.taps,
                                    rng=rng)
        self.task_convs = [[TaskConv(b.width, rng) for _ in tasks]
                           for _ in range(stages)]
        self.blocks = [
            PameBlock(len(tasks), b.width, rng,
                      state_dim=p.state_dim, expansion=p.expansion,
                      dw_kernel=p.dw_kernel, expert_count=e.count,
                      top_k=e.top_k, share_bc_bank=e.share_bc_bank,
                      use_noise=e.noise, use_experts=e.enabled,
                      use_priors=e.priors, directions=p.directions)
            for _ in range(stages)
        ]
        self.fusers = [StageFuser(stages, b.width, rng, nonlinear=d.mlp_nonlinear)
                       for _ in tasks]
        self.heads = [ConvHead(t.channels, b.width, rng) for t in tasks]

    def forward(self, image: Tensor, training: bool = False,
                rng: Rng | None = None,
                aux: list[Tensor] | None = None) -> dict[str, Tensor]:
        stages = self.backbone.forward(image)
        n_tasks = len(self.task_names)
        per_task_stages: list[list[Tensor]] = [[] for _ in range(n_tasks)]
        per_task_skips: list[list[Tensor]] = [[] for _ in range(n_tasks)]
        for s, feat in enumerate(stages):
            local = [self.task_convs[s][i](feat) for i in range(n_tasks)]
            refined, skips = self.blocks[s].forward(local, training, rng, aux)
            for i in range(n_tasks):
                per_task_stages[i].append(refined[i])
                per_task_skips[i].append(skips[i])

        preds: dict[str, Tensor] = {}
        inv_stages = 1.0 / len(stages)
        for i, name in enumerate(self.task_names):
            fused = fuse_stages(per_task_stages[i], self.fusers[i])
            skip_sum = per_task_skips[i][0]
            for extra in per_task_skips[i][1:]:
                skip_sum = skip_sum + extra
            head_in = fused + skip_sum * inv_stages
            preds[name] = conv_head(head_in, self.heads[i])
        return preds

    def parameters(self) -> dict[str, Tensor]:
        out = self.backbone.parameters("backbone")
        for s, convs in enumerate(self.task_convs):
            for i, conv in enumerate(convs):
                out.update(conv.parameters(f"stage{s}.taskconv.{self.task_names[i]}"))
        for s, block in enumerate(self.blocks):
            out.update(block.parameters(f"stage{s}.block"))
        for i, name in enumerate(self.task_names):
            out.update(self.fusers[i].parameters(f"decoder.{name}.fuse"))
            out.update(self.heads[i].parameters(f"decoder.{name}.head"))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()
