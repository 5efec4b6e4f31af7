"""Identity, batch-hard triplet and total objective."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import torch
import torch.nn.functional as F

STREAMS = ("r", "b")


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.01
    lambda2: float = 0.1
    margin: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass
class LossBundle:
    id: dict = field(default_factory=lambda: {s: 0.0 for s in STREAMS})
    tri: dict = field(default_factory=lambda: {s: 0.0 for s in STREAMS})
    cc: dict = field(default_factory=lambda: {s: 0.0 for s in STREAMS})
    hm: float = 0.0
    sc: float = 0.0
    total: float = 0.0

    LOG_COLUMNS = ("L_id_r", "L_id_b", "L_tri_r", "L_tri_b", "L_cc_r", "L_cc_b", "L_hm", "L_sc", "total")

    def as_row(self) -> list[float]:
        return [self.id["r"], self.id["b"], self.tri["r"], self.tri["b"],
                self.cc["r"], self.cc["b"], self.hm, self.sc, self.total]

    def recompute(self, w: LossWeights) -> float:
        return total_loss(self.id, self.tri, self.cc, self.hm, self.sc, w)


def identity_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if bool(((labels < 0) | (labels >= logits.shape[1])).any()):
        raise ValueError(f"label out of range for {logits.shape[1]} classes")
    return F.cross_entropy(logits, labels)


def pairwise_distances(x: torch.Tensor) -> torch.Tensor:
    # direct-difference mode: exact zeros on the diagonal, no cancellation
    return torch.cdist(x, x, compute_mode="donot_use_mm_for_euclid_dist")


def _first_argmax(values: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax over ``valid`` entries, ties to the lowest column index."""
    very_low = torch.finfo(values.dtype).min
    masked = values.masked_fill(~valid, very_low)
    best = masked.max(dim=1, keepdim=True).values
    n = values.shape[1]
    rank = torch.arange(n, 0, -1, device=values.device).expand_as(values)
    return ((masked == best) & valid).mul(rank).argmax(dim=1)


def hard_mining(dist: torch.Tensor, labels: torch.Tensor):
    """Indices of the farthest positive and closest negative for every anchor."""
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(len(labels), dtype=torch.bool, device=dist.device)
    pos = same & ~eye
    neg = ~same
    if not bool(pos.any(dim=1).all()):
        raise ValueError("every anchor needs at least one positive")
    if not bool(neg.any(dim=1).all()):
        raise ValueError("every anchor needs at least one negative")
    d = dist.detach()
    return _first_argmax(d, pos), _first_argmax(-d, neg)


def triplet_loss(features: torch.Tensor, labels: torch.Tensor, margin: float = 0.3) -> torch.Tensor:
    """Batch-hard triplet loss in Euclidean space (features not normalised)."""
    dist = pairwise_distances(features)
    jp, kn = hard_mining(dist, labels)
    rows = torch.arange(len(labels), device=features.device)
    d_pos, d_neg = dist[rows, jp], dist[rows, kn]
    return F.relu(margin + d_pos - d_neg).mean()


def total_loss(id_terms, tri_terms, cc_terms, hm, sc, w: LossWeights):
    """lambda1 * (hm + sc) + sum over streams of (lambda2 * cc + id + tri)."""
    named = {"L_hm": hm, "L_sc": sc}
    for prefix, terms in (("L_id", id_terms), ("L_tri", tri_terms), ("L_cc", cc_terms)):
        named.update({f"{prefix}_{s}": terms[s] for s in STREAMS})
    for name, p in named.items():
        v = float(p.detach()) if isinstance(p, torch.Tensor) else float(p)
        if not math.isfinite(v):
            raise FloatingPointError(f"non-finite loss term {name} = {v}")
    total = w.lambda1 * (hm + sc)
    for s in STREAMS:
        total = total + (w.lambda2 * cc_terms[s] + id_terms[s] + tri_terms[s])
    return total
