"""Clothes diversity augmentation, clothing erasure and standard ReID augmentations.

All randomness comes from an explicit ``numpy.random.Generator``; callers
derive one per (seed, epoch, sample index) with :func:`sample_rng`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import Sample, derive_seed

PERMUTATIONS = tuple(itertools.permutations(range(3)))
IDENTITY_ORDER = (0, 1, 2)


@dataclass(frozen=True)
class ChannelPermutation:
    """``order[c]`` is the source channel written to output channel ``c``."""
    order: tuple = IDENTITY_ORDER

    def __post_init__(self):
        if sorted(self.order) != [0, 1, 2]:
            raise ValueError(f"not a permutation of (0, 1, 2): {self.order}")

    @property
    def is_identity(self) -> bool:
        return tuple(self.order) == IDENTITY_ORDER


@dataclass(frozen=True)
class AugmentConfig:
    cda_enabled: bool = True
    cda_prob: float = 1.0
    da_enabled: bool = False
    flip_prob: float = 0.5
    crop_pad: int = 10
    erase_prob: float = 0.5
    erase_area: tuple = (0.02, 0.4)
    erase_ratio: tuple = (0.3, 3.3)

    def __post_init__(self):
        for name in ("cda_prob", "flip_prob", "erase_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.crop_pad < 0:
            raise ValueError("crop_pad must be >= 0")


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, epoch, index))


def sample_permutation(rng: np.random.Generator) -> ChannelPermutation:
    return ChannelPermutation(PERMUTATIONS[int(rng.integers(len(PERMUTATIONS)))])


def _clothing(sample: Sample) -> np.ndarray:
    if sample.mask is None:
        raise ValueError("sample has no parsing mask")
    if sample.mask.labels.shape != sample.image.shape[:2]:
        raise ValueError("mask/image dimension mismatch")
    return sample.mask.clothing


def apply_cda(sample: Sample, perm: ChannelPermutation) -> Sample:
    """Permute RGB channels inside the clothing region only."""
    region = _clothing(sample)
    image = sample.image.copy()
    image[region] = sample.image[region][:, list(perm.order)]
    return sample.replace(image=image)


def apply_domain_augment(sample: Sample, perm: ChannelPermutation) -> Sample:
    """Whole-image channel shuffle; comparison baseline for CDA."""
    return sample.replace(image=np.ascontiguousarray(sample.image[:, :, list(perm.order)]))


def erase_clothes(sample: Sample) -> Sample:
    """Black-clothing image: clothing pixels set to (0, 0, 0)."""
    region = _clothing(sample)
    image = sample.image.copy()
    image[region] = 0
    return sample.replace(image=image)


def hflip(sample: Sample) -> Sample:
    mask = sample.mask
    if mask is not None:
        mask = type(mask)(np.ascontiguousarray(mask.labels[:, ::-1]), mask.clothing_label_set)
    return sample.replace(image=np.ascontiguousarray(sample.image[:, ::-1]), mask=mask)


def pad_crop(sample: Sample, pad: int, top: int, left: int) -> Sample:
    """Zero-pad by ``pad`` then crop back to the original size at (top, left)."""
    H, W = sample.image.shape[:2]
    if not (0 <= top <= 2 * pad and 0 <= left <= 2 * pad):
        raise ValueError("crop larger than image")
    image = np.pad(sample.image, ((pad, pad), (pad, pad), (0, 0)))[top:top + H, left:left + W]
    mask = sample.mask
    if mask is not None:
        labels = np.pad(mask.labels, pad)[top:top + H, left:left + W]
        mask = type(mask)(np.ascontiguousarray(labels), mask.clothing_label_set)
    return sample.replace(image=np.ascontiguousarray(image), mask=mask)


def geometric_augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Random flip and pad-crop, applied identically to image and mask."""
    if rng.random() < cfg.flip_prob:
        sample = hflip(sample)
    if cfg.crop_pad:
        top, left = (int(v) for v in rng.integers(0, 2 * cfg.crop_pad + 1, size=2))
        sample = pad_crop(sample, cfg.crop_pad, top, left)
    return sample


@dataclass(frozen=True)
class EraseBox:
    y0: int
    x0: int
    h: int
    w: int
    fill: np.ndarray

    def apply(self, image: np.ndarray) -> np.ndarray:
        out = image.copy()
        out[self.y0:self.y0 + self.h, self.x0:self.x0 + self.w] = self.fill
        return out


def draw_erase_box(shape, cfg: AugmentConfig, rng: np.random.Generator) -> EraseBox | None:
    """Random-erasing rectangle with random fill, or None when not triggered."""
    if rng.random() >= cfg.erase_prob:
        return None
    H, W = shape[:2]
    area = H * W
    for _ in range(100):
        target = rng.uniform(*cfg.erase_area) * area
        ratio = math.exp(rng.uniform(math.log(cfg.erase_ratio[0]), math.log(cfg.erase_ratio[1])))
        h = int(round(math.sqrt(target * ratio)))
        w = int(round(math.sqrt(target / ratio)))
        if 0 < h < H and 0 < w < W:
            y0 = int(rng.integers(0, H - h + 1))
            x0 = int(rng.integers(0, W - w + 1))
            fill = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            return EraseBox(y0, x0, h, w, fill)
    return None


def standard_augment(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator) -> Sample:
    sample = geometric_augment(sample, cfg, rng)
    box = draw_erase_box(sample.image.shape, cfg, rng)
    if box is not None:
        sample = sample.replace(image=box.apply(sample.image))
    return sample


def make_stream_pair(sample: Sample, cfg: AugmentConfig, rng: np.random.Generator):
    """Raw-stream and clothing-erased inputs built from one source sample.

    Geometry is drawn once so both streams see the same pedestrian; CDA (or
    DA) branches the raw image, erasure branches the other, and one random
    erasing rectangle is stamped on both.
    """
    geo = geometric_augment(sample, cfg, rng)
    raw = geo
    if cfg.cda_enabled and rng.random() < cfg.cda_prob:
        raw = apply_cda(geo, sample_permutation(rng))
    if cfg.da_enabled:
        raw = apply_domain_augment(raw, sample_permutation(rng))
    erased = erase_clothes(geo)
    box = draw_erase_box(geo.image.shape, cfg, rng)
    if box is not None:
        raw = raw.replace(image=box.apply(raw.image))
        erased = erased.replace(image=box.apply(erased.image))
    return raw, erased


def preview_row(sample: Sample) -> list[np.ndarray]:
    """raw, the five non-identity CDA permutations, erased."""
    tiles = [sample.image]
    tiles += [apply_cda(sample, ChannelPermutation(p)).image for p in PERMUTATIONS if p != IDENTITY_ORDER]
    tiles.append(erase_clothes(sample).image)
    return tiles


def preview_grid(sample: Sample, gap: int = 2) -> np.ndarray:
    tiles = preview_row(sample)
    H, W = sample.image.shape[:2]
    grid = np.full((H, len(tiles) * (W + gap) - gap, 3), 255, dtype=np.uint8)
    for i, tile in enumerate(tiles):
        grid[:, i * (W + gap):i * (W + gap) + W] = tile
    return grid
