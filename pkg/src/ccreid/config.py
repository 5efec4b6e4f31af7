"""Flat key = value run configuration with per-dataset presets.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Values are Python literals (numbers, booleans, tuples, quoted or
bare strings). ``preset`` is applied first, then every other key overrides it.
"""
from __future__ import annotations

import ast
from pathlib import Path

from .augment import AugmentConfig
from .backbone import RESNET50_WIDTHS, BackboneConfig
from .losses import LossWeights
from .model import ModelConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "preset": "toy",
    "seed": 0,
    "out_dir": "runs/default",
    "data.train": "",
    "data.query": "",
    "data.gallery": "",
    "data.clothing_labels": (1, 3, 5, 6, 7, 8, 9, 10, 11, 12),
    "input.height": 384,
    "input.width": 192,
    "backbone.arch": "resnet50",
    "backbone.widths": RESNET50_WIDTHS,
    "backbone.stem_pool": True,
    "backbone.last_stride": 1,
    "backbone.pretrained": "",
    "mcb.enabled": True,
    "mcb.taps": (3, 4, 5),
    "mcb.teacher_mode": False,
    "cam.enabled": True,
    "cam.reduction": 8,
    "cam.counterfactual": True,
    "sac.enabled": True,
    "augment.cda": True,
    "augment.cda_prob": 1.0,
    "augment.da": False,
    "augment.flip_prob": 0.5,
    "augment.crop_pad": 10,
    "augment.erase_prob": 0.5,
    "loss.lambda1": 0.01,
    "loss.lambda2": 0.1,
    "loss.margin": 0.3,
    "train.P": 16,
    "train.K": 8,
    "train.epochs": 150,
    "train.steps_per_epoch": 0,  # 0: one pass over the training set
    "train.base_lr": 3.5e-4,
    "train.warmup_lr": 3.5e-6,
    "train.warmup_epochs": 10,
    "train.decay_epochs": (40, 80),
    "train.decay_factor": 10.0,
    "train.weight_decay": 5e-4,
    "train.separate_heads": True,
    "train.dtype": "float32",
    "train.checkpoint_every": 10,
    "eval.settings": ("general", "cloth_changing"),
}

PRESETS = {
    "ltcc": {"loss.lambda1": 0.01, "loss.lambda2": 0.1, "eval.settings": ("general", "cloth_changing")},
    "prcc": {"loss.lambda1": 0.05, "loss.lambda2": 0.1, "eval.settings": ("same_clothes", "cloth_changing")},
    "vcclothes": {"loss.lambda1": 0.01, "loss.lambda2": 0.1, "eval.settings": ("general", "cloth_changing")},
    "deepchange": {"loss.lambda1": 0.01, "loss.lambda2": 0.01, "eval.settings": ("general",)},
    "market1501": {"loss.lambda1": 0.01, "loss.lambda2": 0.1, "eval.settings": ("general",)},
    "toy": {
        "input.height": 64, "input.width": 32,
        "backbone.arch": "toy", "backbone.widths": (16, 32, 64, 64, 128),
        "backbone.stem_pool": False,
        "augment.crop_pad": 4,
        "train.P": 4, "train.K": 4,
        "train.epochs": 30, "train.steps_per_epoch": 10,
        "train.base_lr": 1e-3, "train.warmup_lr": 1e-5,
        "train.warmup_epochs": 3, "train.decay_epochs": (20, 25),
        "train.checkpoint_every": 10,
        "eval.settings": ("general", "cloth_changing", "same_clothes"),
    },
}

_TYPES = {k: type(v) for k, v in DEFAULTS.items()}
_TYPES["train.decay_factor"] = float


def _coerce(key: str, value):
    want = _TYPES[key]
    if want is bool:
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "on", "off"):
            return value.lower() in ("true", "yes", "on")
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is tuple:
        if isinstance(value, (list, tuple)):
            return tuple(value)
        if isinstance(value, (int, str)):
            return (value,)
    if want is str and not isinstance(value, str):
        return str(value)
    if not isinstance(value, want) or (want is int and isinstance(value, bool)):
        raise ConfigError(f"{key}: expected {want.__name__}, got {value!r}")
    return value


def _parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = _parse_value(value)
    return raw


def resolve(overrides: dict) -> dict:
    unknown = sorted(set(overrides) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    preset = overrides.get("preset", DEFAULTS["preset"])
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    cfg = dict(DEFAULTS)
    cfg.update(PRESETS[preset])
    cfg.update(overrides)
    cfg["preset"] = preset
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    validate(cfg)
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config not found: {path}")
    cfg = resolve(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    base = path.parent
    for key in ("out_dir", "data.train", "data.query", "data.gallery", "backbone.pretrained"):
        if cfg[key] and not Path(cfg[key]).is_absolute():
            cfg[key] = str(base / cfg[key])
    return cfg


def dump_config(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]!r}\n" for k in DEFAULTS)


def validate(cfg: dict) -> None:
    try:
        backbone_config(cfg)
        augment_config(cfg)
        loss_weights(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["train.K"] < 2 or cfg["train.P"] < 2:
        raise ConfigError("train.P and train.K must both be >= 2")
    if not cfg["train.warmup_epochs"] < min(cfg["train.decay_epochs"]) < cfg["train.epochs"]:
        raise ConfigError("need train.warmup_epochs < min(train.decay_epochs) < train.epochs")
    if cfg["train.dtype"] not in ("float32", "float64"):
        raise ConfigError("train.dtype must be float32 or float64")
    from .evaluator import SETTINGS
    bad = [s for s in cfg["eval.settings"] if s not in SETTINGS]
    if bad:
        raise ConfigError(f"eval.settings: unknown setting(s) {bad}; valid: {', '.join(SETTINGS)}")


def backbone_config(cfg: dict) -> BackboneConfig:
    return BackboneConfig(
        arch=cfg["backbone.arch"], widths=tuple(cfg["backbone.widths"]),
        last_stage_stride=cfg["backbone.last_stride"], stem_pool=cfg["backbone.stem_pool"],
        mcb_taps=tuple(cfg["mcb.taps"]), input_size=(cfg["input.height"], cfg["input.width"]),
        pretrained=cfg["backbone.pretrained"],
    )


def model_config(cfg: dict, num_classes: int) -> ModelConfig:
    return ModelConfig(
        backbone=backbone_config(cfg), num_classes=num_classes,
        mcb_enabled=cfg["mcb.enabled"], mcb_teacher_mode=cfg["mcb.teacher_mode"],
        cam_enabled=cfg["cam.enabled"], cam_reduction=cfg["cam.reduction"],
        cam_counterfactual=cfg["cam.counterfactual"], sac_enabled=cfg["sac.enabled"],
        separate_heads=cfg["train.separate_heads"],
    )


def augment_config(cfg: dict) -> AugmentConfig:
    return AugmentConfig(
        cda_enabled=cfg["augment.cda"], cda_prob=cfg["augment.cda_prob"], da_enabled=cfg["augment.da"],
        flip_prob=cfg["augment.flip_prob"], crop_pad=cfg["augment.crop_pad"],
        erase_prob=cfg["augment.erase_prob"],
    )


def loss_weights(cfg: dict) -> LossWeights:
    return LossWeights(cfg["loss.lambda1"], cfg["loss.lambda2"], cfg["loss.margin"])


BASELINE_OVERRIDES = {
    "augment.cda": False, "mcb.enabled": False, "cam.enabled": False, "sac.enabled": False,
    "loss.lambda1": 0.0, "loss.lambda2": 0.0,
}
