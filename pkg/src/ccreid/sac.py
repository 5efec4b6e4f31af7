"""Semantic alignment constraint between the two streams' saliency maps."""
from __future__ import annotations

import torch


def supervision_signal(G_r: torch.Tensor, G_b: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Pixelwise max of the two streams' true-class activation maps.

    G_r, G_b: N x I x H x W; labels: N. Returns N x H x W.
    """
    if G_r.shape != G_b.shape:
        raise ValueError(f"activation map shapes differ: {tuple(G_r.shape)} vs {tuple(G_b.shape)}")
    I = G_r.shape[1]
    if bool(((labels < 0) | (labels >= I)).any()):
        raise ValueError(f"label out of range for {I} classes")
    idx = torch.arange(G_r.shape[0], device=G_r.device)
    return torch.maximum(G_r[idx, labels], G_b[idx, labels])


def saliency(E: torch.Tensor) -> torch.Tensor:
    """Channel mean: N x C x H x W -> N x H x W."""
    return E.mean(dim=1)


def sc_loss(g: torch.Tensor, S_r: torch.Tensor, S_b: torch.Tensor) -> torch.Tensor:
    # g is a target: no gradient flows into the activation maps through it
    if not (g.shape == S_r.shape == S_b.shape):
        raise ValueError(f"shape mismatch: g {tuple(g.shape)}, S_r {tuple(S_r.shape)}, S_b {tuple(S_b.shape)}")
    g = g.detach()
    per_sample = (g - S_r).pow(2).flatten(1).mean(1) + (g - S_b).pow(2).flatten(1).mean(1)
    return per_sample.mean()
