"""Dual-stream network: shared backbone, MCB taps, counterfactual attention, SAC, heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from . import mcb as mcb_ops
from . import sac as sac_ops
from .backbone import Backbone, BackboneConfig, ClassifierHead, forward_stages
from .cam import CounterfactualAttention, cc_loss
from .losses import STREAMS, LossBundle, LossWeights, identity_loss, total_loss, triplet_loss


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    num_classes: int = 8
    mcb_enabled: bool = True
    mcb_teacher_mode: bool = False
    cam_enabled: bool = True
    cam_reduction: int = 8
    cam_counterfactual: bool = True
    sac_enabled: bool = True
    separate_heads: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneConfig.from_dict(d["backbone"])
        return cls(**d)


class DualConstraintNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone)
        C = self.backbone.out_channels
        self.cam = CounterfactualAttention(C, cfg.cam_reduction) if cfg.cam_enabled else None
        self.head_r = ClassifierHead(C, cfg.num_classes)
        self.head_b = ClassifierHead(C, cfg.num_classes) if cfg.separate_heads else self.head_r

    def head(self, stream: str) -> ClassifierHead:
        return self.head_r if stream == "r" else self.head_b

    def _stream(self, images, generator, counterfactual):
        taps, final = forward_stages(self.backbone, images)
        z = None
        if self.cam is None:
            E = final
        elif counterfactual:
            state = self.cam.counterfactual(final, generator)
            E, z = state.output, state.effect.mean(dim=(2, 3))
        else:
            E = self.cam(final)
        return taps, E, z

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Raw-stream embedding: pooled post-attention feature."""
        _, E, _ = self._stream(images, None, counterfactual=False)
        return E.mean(dim=(2, 3))

    def forward(self, raw: torch.Tensor, erased: torch.Tensor, labels: torch.Tensor,
                weights: LossWeights, generator: torch.Generator | None = None):
        """Both streams and every loss term; returns (tensor terms dict, total)."""
        use_cf = self.cam is not None and self.cfg.cam_counterfactual
        out = {}
        for s, images in (("r", raw), ("b", erased)):
            taps, E, z = self._stream(images, generator, use_cf)
            logits, G = self.head(s)(E)
            feat = E.mean(dim=(2, 3))
            out[s] = dict(taps=taps, E=E, z=z, logits=logits, G=G, feat=feat)

        zero = raw.new_zeros(())
        terms = {"id": {}, "tri": {}, "cc": {}}
        for s in STREAMS:
            o = out[s]
            terms["id"][s] = identity_loss(o["logits"], labels)
            terms["tri"][s] = triplet_loss(o["feat"], labels, weights.margin)
            terms["cc"][s] = cc_loss(o["z"], labels) if use_cf else zero
        if self.cfg.mcb_enabled:
            taps = sorted(out["r"]["taps"])
            terms["hm"] = mcb_ops.hm_loss(
                [mcb_ops.multiscale_pool(out["r"]["taps"][m]) for m in taps],
                [mcb_ops.multiscale_pool(out["b"]["taps"][m]) for m in taps],
                teacher_mode=self.cfg.mcb_teacher_mode,
            )
        else:
            terms["hm"] = zero
        if self.cfg.sac_enabled:
            g = sac_ops.supervision_signal(out["r"]["G"], out["b"]["G"], labels)
            terms["sc"] = sac_ops.sc_loss(g, sac_ops.saliency(out["r"]["E"]), sac_ops.saliency(out["b"]["E"]))
        else:
            terms["sc"] = zero
        total = total_loss(terms["id"], terms["tri"], terms["cc"], terms["hm"], terms["sc"], weights)
        terms["outputs"] = out
        return terms, total


def bundle_from_terms(terms: dict, total: torch.Tensor) -> LossBundle:
    f = lambda t: float(t.detach())  # noqa: E731
    return LossBundle(
        id={s: f(terms["id"][s]) for s in STREAMS},
        tri={s: f(terms["tri"][s]) for s in STREAMS},
        cc={s: f(terms["cc"][s]) for s in STREAMS},
        hm=f(terms["hm"]), sc=f(terms["sc"]), total=f(total),
    )
