"""Shared-weight five-stage backbone and the per-stream classifier head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

RESNET50_WIDTHS = (64, 256, 512, 1024, 2048)


@dataclass(frozen=True)
class BackboneConfig:
    arch: str = "toy"  # "toy" | "resnet50"
    widths: tuple = (8, 16, 32, 64, 128)
    last_stage_stride: int = 1
    stem_pool: bool = True
    mcb_taps: tuple = (3, 4, 5)
    input_size: tuple = (64, 32)
    pretrained: str = ""  # optional path to torchvision resnet50 weights

    def __post_init__(self):
        if self.arch not in ("toy", "resnet50"):
            raise ValueError(f"unknown backbone arch {self.arch!r}")
        if len(self.widths) != 5:
            raise ValueError("backbone needs exactly 5 stage widths")
        if self.arch == "resnet50" and tuple(self.widths) != RESNET50_WIDTHS:
            raise ValueError(f"resnet50 widths are fixed at {RESNET50_WIDTHS}")
        if not set(self.mcb_taps) <= {1, 2, 3, 4, 5}:
            raise ValueError(f"mcb_taps must be stage indices in 1..5, got {self.mcb_taps}")
        if self.last_stage_stride not in (1, 2):
            raise ValueError("last_stage_stride must be 1 or 2")

    @property
    def stage_strides(self) -> tuple:
        """Cumulative downsampling factor after each stage."""
        s1 = 4 if (self.stem_pool or self.arch == "resnet50") else 2
        return (s1, s1, s1 * 2, s1 * 4, s1 * 4 * self.last_stage_stride)

    def stage_shape(self, stage: int) -> tuple:
        H, W = self.input_size
        s = self.stage_strides[stage - 1]
        return (self.widths[stage - 1], H // s, W // s)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        for k in ("widths", "mcb_taps", "input_size"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


def _toy_stages(cfg: BackboneConfig) -> nn.ModuleList:
    w = cfg.widths
    stem = [nn.Conv2d(3, w[0], 3, 2, 1, bias=False), nn.BatchNorm2d(w[0]), nn.ReLU(inplace=True)]
    if cfg.stem_pool:
        stem.append(nn.MaxPool2d(3, 2, 1))
    return nn.ModuleList([
        nn.Sequential(*stem),
        BasicBlock(w[0], w[1], 1),
        BasicBlock(w[1], w[2], 2),
        BasicBlock(w[2], w[3], 2),
        BasicBlock(w[3], w[4], cfg.last_stage_stride),
    ])


def _resnet50_stages(cfg: BackboneConfig) -> nn.ModuleList:
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    if cfg.pretrained:
        net.load_state_dict(torch.load(cfg.pretrained, map_location="cpu"))
    if cfg.last_stage_stride == 1:
        net.layer4[0].conv2.stride = (1, 1)
        net.layer4[0].downsample[0].stride = (1, 1)
    stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
    return nn.ModuleList([stem, net.layer1, net.layer2, net.layer3, net.layer4])


class Backbone(nn.Module):
    """Five stages; one instance serves both streams, so sharing is structural."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.stages = _toy_stages(cfg) if cfg.arch == "toy" else _resnet50_stages(cfg)

    @property
    def out_channels(self) -> int:
        return self.cfg.widths[-1]

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """All five stage outputs, stage 1 first."""
        H, W = x.shape[-2:]
        total = self.cfg.stage_strides[-1]
        if H % total or W % total:
            raise ValueError(f"input size {(H, W)} is not divisible by the backbone stride {total}")
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        return outs


def forward_stages(backbone: Backbone, images: torch.Tensor):
    """(tapped stage outputs keyed by stage index, final stage output)."""
    outs = backbone(images)
    taps = {m: outs[m - 1] for m in backbone.cfg.mcb_taps}
    return taps, outs[-1]


class ClassifierHead(nn.Module):
    """Batch norm, 1x1 convolution to identity count, global average pooling."""

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        self.bn = nn.BatchNorm2d(in_channels)
        self.conv = nn.Conv2d(in_channels, num_classes, 1, bias=True)

    def forward(self, feature: torch.Tensor):
        if feature.shape[1] != self.bn.num_features:
            raise ValueError(
                f"feature has {feature.shape[1]} channels, head expects {self.bn.num_features}"
            )
        maps = self.conv(self.bn(feature))
        return maps.mean(dim=(2, 3)), maps


def classify(feature: torch.Tensor, head: ClassifierHead):
    """(logits N x I, class activation maps N x I x H x W)."""
    return head(feature)

