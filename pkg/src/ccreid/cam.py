"""Counterfactual-guided attention: channel + spatial attention with residual fusion,
the counterfactual intervention effect, and the cloth-agnostic contrastive loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class AttentionState:
    channel: torch.Tensor       # N x C, in (0, 1)
    spatial: torch.Tensor       # N x H x W, in (0, 1)
    counterfactual: torch.Tensor | None  # N x H x W, standard normal draw
    output: torch.Tensor        # Y, N x C x H x W
    effect: torch.Tensor | None  # Y_effect, N x C x H x W


class CounterfactualAttention(nn.Module):
    """Y = F + SA(F*CA(F)) * (F*CA(F)).

    The spatial branch's hidden width mirrors the channel branch (C / reduction).
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if channels < reduction or channels % reduction:
            raise ValueError(f"channels ({channels}) must be a positive multiple of {reduction}")
        hidden = channels // reduction
        self.channels = channels
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.sa1 = nn.Conv2d(channels, hidden, 1)
        self.sa2 = nn.Conv2d(hidden, 1, 1)

    def channel_attention(self, feature: torch.Tensor) -> torch.Tensor:
        pooled = feature.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))

    def spatial_attention(self, feature: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.sa2(F.relu(self.sa1(feature))))[:, 0]

    def _scaled(self, feature):
        if feature.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {feature.shape[1]}")
        ca = self.channel_attention(feature)
        return ca, feature * ca[:, :, None, None]

    def forward(self, feature: torch.Tensor, spatial: torch.Tensor | None = None) -> torch.Tensor:
        """Learned attention, or ``spatial`` (N x H x W) substituted for SA's output."""
        _, scaled = self._scaled(feature)
        if spatial is None:
            spatial = self.spatial_attention(scaled)
        elif spatial.shape != (feature.shape[0],) + tuple(feature.shape[2:]):
            raise ValueError(f"supplied map has shape {tuple(spatial.shape)}, "
                             f"expected {(feature.shape[0],) + tuple(feature.shape[2:])}")
        return feature + spatial[:, None] * scaled

    def counterfactual(self, feature: torch.Tensor, generator: torch.Generator | None = None,
                       noise: torch.Tensor | None = None) -> AttentionState:
        """Actual output, and its effect against a Gaussian do(A = noise) intervention.

        One N(0, 1) map is drawn per sample unless ``noise`` is given.
        """
        ca, scaled = self._scaled(feature)
        sa = self.spatial_attention(scaled)
        if noise is None:
            noise = torch.randn(sa.shape, generator=generator, dtype=sa.dtype, device=sa.device)
        elif noise.shape != sa.shape:
            raise ValueError(f"counterfactual map has shape {tuple(noise.shape)}, expected {tuple(sa.shape)}")
        noise = noise.detach()
        y = feature + sa[:, None] * scaled
        y_cf = feature + noise[:, None] * scaled
        return AttentionState(ca, sa, noise, y, y - y_cf)


def cam_forward(module: CounterfactualAttention, feature, spatial=None):
    return module(feature, spatial)


def counterfactual_effect(module: CounterfactualAttention, feature, generator=None, noise=None):
    return module.counterfactual(feature, generator, noise).effect


def cc_loss(z: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cloth-agnostic contrastive loss on N x D pooled effect features.

    Rows are L2-normalised so dot products are cosine similarities. Each
    anchor averages, over its positives j, log(exp(s_ij) / (exp(s_ij) + sum of
    exp(s_ik) over its negatives k)). Anchors without positives are skipped.
    """
    N = z.shape[0]
    if N < 2:
        raise ValueError("cc_loss needs at least 2 samples")
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError("cosine similarity undefined for zero embeddings")
    z = z / norms
    sim = z @ z.t()
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(N, dtype=torch.bool, device=z.device)
    pos = same & ~eye
    neg = ~same
    neg_sum = (sim.exp() * neg).sum(dim=1, keepdim=True)
    log_ratio = sim - torch.log(sim.exp() + neg_sum)
    n_pos = pos.sum(dim=1)
    has_pos = n_pos > 0
    if not bool(has_pos.any()):
        return sim.sum() * 0.0
    per_anchor = (log_ratio * pos).sum(dim=1)[has_pos] / n_pos[has_pos]
    return -per_anchor.mean()
