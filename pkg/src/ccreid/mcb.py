"""Multi-scale constraint block: pyramid max pooling and the cross-stream matching loss.

The block has no parameters and its outputs never flow back into the
backbone; it only contributes a loss term.
"""
from __future__ import annotations

from typing import Sequence

import torch
import torch.nn.functional as F

PYRAMID = (1, 2, 4)  # grids giving 1 + 4 + 16 = 21 parts
NUM_PARTS = sum(g * g for g in PYRAMID)


def multiscale_pool(feature: torch.Tensor) -> torch.Tensor:
    """N x C x H x W -> N x C x 21.

    Parts are the global max, then the 2x2 grid, then the 4x4 grid, each grid
    row-major. Non-divisible sizes use adaptive (floor/ceil) bin edges.
    """
    if feature.dim() == 3:
        return multiscale_pool(feature.unsqueeze(0))[0]
    H, W = feature.shape[-2:]
    if H < 4 or W < 4:
        raise ValueError(f"multi-scale pooling needs H, W >= 4, got {(H, W)}")
    parts = [F.adaptive_max_pool2d(feature, g).flatten(2) for g in PYRAMID]
    return torch.cat(parts, dim=2)


def hm_loss(raw: Sequence[torch.Tensor], erased: Sequence[torch.Tensor],
            teacher_mode: bool = False) -> torch.Tensor:
    """Batch mean of the summed (over blocks) per-element mean squared difference.

    ``raw``/``erased`` hold one N x C x 21 descriptor per block. With
    ``teacher_mode`` the erased stream is a fixed target.
    """
    if len(raw) == 0:
        raise ValueError("hm_loss needs at least one block")
    if len(raw) != len(erased):
        raise ValueError(f"{len(raw)} raw descriptors vs {len(erased)} erased")
    total = 0.0
    for fr, fb in zip(raw, erased):
        if fr.shape != fb.shape:
            raise ValueError(f"descriptor shape mismatch {tuple(fr.shape)} vs {tuple(fb.shape)}")
        if teacher_mode:
            fb = fb.detach()
        total = total + (fr - fb).pow(2).flatten(1).mean(dim=1)
    return total.mean()
