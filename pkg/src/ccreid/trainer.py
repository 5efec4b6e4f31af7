"""Training loop, learning-rate schedule, checkpoints and inference embeddings."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import config as config_mod
from .augment import make_stream_pair, sample_rng
from .data import DatasetManifest, IdentityBatch, ParsingMask, Sample, derive_seed, load_sample, pk_sample
from .evaluator import Metadata, cmc_map, distance_matrix
from .losses import LossBundle
from .model import DualConstraintNet, ModelConfig, bundle_from_terms

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ccreid-checkpoint/1"
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
LOG_HEADER = "# epoch\tstep\tlr\t" + "\t".join(LossBundle.LOG_COLUMNS)


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 3.5e-4
    warmup_start: float = 3.5e-6
    warmup_epochs: int = 10
    decay_epochs: tuple = (40, 80)
    decay_factor: float = 10.0
    total_epochs: int = 150

    def __post_init__(self):
        if not self.warmup_epochs < min(self.decay_epochs) < self.total_epochs:
            raise ValueError("need warmup_epochs < min(decay_epochs) < total_epochs")

    @classmethod
    def from_config(cls, cfg: dict) -> "Schedule":
        return cls(cfg["train.base_lr"], cfg["train.warmup_lr"], cfg["train.warmup_epochs"],
                   tuple(cfg["train.decay_epochs"]), cfg["train.decay_factor"], cfg["train.epochs"])


def lr_at(epoch: int, s: Schedule = Schedule()) -> float:
    """Linear warm-up to ``base_lr``, then step decay by ``decay_factor`` at each decay epoch."""
    if not 0 <= epoch < s.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {s.total_epochs})")
    if epoch < s.warmup_epochs:
        return s.warmup_start + (s.base_lr - s.warmup_start) * epoch / s.warmup_epochs
    drops = sum(epoch >= d for d in s.decay_epochs)
    return s.base_lr / s.decay_factor ** drops


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """uint8 N x H x W x 3 -> normalised float N x 3 x H x W."""
    arr = np.stack(images).astype(np.float64) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return torch.from_numpy(arr.transpose(0, 3, 1, 2).copy()).to(dtype)


def fit_to_size(sample: Sample, size) -> Sample:
    H, W = size
    if sample.image.shape[:2] == (H, W):
        return sample
    image = np.asarray(Image.fromarray(sample.image).resize((W, H), Image.BILINEAR))
    mask = sample.mask
    if mask is not None:
        labels = np.asarray(Image.fromarray(mask.labels).resize((W, H), Image.NEAREST))
        mask = ParsingMask(labels, mask.clothing_label_set)
    return sample.replace(image=image, mask=mask)


class SampleCache:
    def __init__(self, manifest: DatasetManifest, size, clothing_labels, with_mask=True):
        self.manifest = manifest
        self.size = tuple(size)
        self.clothing_labels = frozenset(clothing_labels)
        self.with_mask = with_mask
        self._cache: dict[int, Sample] = {}

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, i: int) -> Sample:
        if i not in self._cache:
            s = load_sample(self.manifest, i, self.clothing_labels, self.with_mask)
            self._cache[i] = fit_to_size(s, self.size)
        return self._cache[i]


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0


class Trainer:
    def __init__(self, cfg: dict, train_manifest: DatasetManifest):
        self.cfg = cfg
        self.manifest = train_manifest
        self.dtype = torch.float64 if cfg["train.dtype"] == "float64" else torch.float32
        self.schedule = Schedule.from_config(cfg)
        self.weights = config_mod.loss_weights(cfg)
        self.augment = config_mod.augment_config(cfg)
        self.size = (cfg["input.height"], cfg["input.width"])
        self.samples = SampleCache(train_manifest, self.size, cfg["data.clothing_labels"])
        torch.manual_seed(cfg["seed"])
        self.model = DualConstraintNet(config_mod.model_config(cfg, train_manifest.num_identities)).to(self.dtype)
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=lr_at(0, self.schedule),
                                           weight_decay=cfg["train.weight_decay"])
        self.state = TrainState()
        n = cfg["train.P"] * cfg["train.K"]
        self.steps_per_epoch = cfg["train.steps_per_epoch"] or max(1, len(train_manifest) // n)

    def set_lr(self, epoch: int) -> float:
        lr = lr_at(epoch, self.schedule)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        return lr

    def next_batch(self) -> IdentityBatch:
        return pk_sample(self.manifest, self.cfg["train.P"], self.cfg["train.K"],
                         derive_seed(self.cfg["seed"], 7, self.state.step))

    def build_inputs(self, batch: IdentityBatch):
        raw, erased = [], []
        seed, epoch, step = self.cfg["seed"], self.state.epoch, self.state.step
        for slot, idx in enumerate(batch.indices):
            rng = sample_rng(seed, epoch, derive_seed(step, slot))
            r, b = make_stream_pair(self.samples[idx], self.augment, rng)
            raw.append(r.image)
            erased.append(b.image)
        return to_tensor(raw, self.dtype), to_tensor(erased, self.dtype)

    def train_step(self, batch: IdentityBatch) -> LossBundle:
        self.model.train()
        raw, erased = self.build_inputs(batch)
        labels = torch.tensor(batch.labels, dtype=torch.long)
        gen = torch.Generator().manual_seed(derive_seed(self.cfg["seed"], 11, self.state.step))
        terms, total = self.model(raw, erased, labels, self.weights, gen)
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.state.step += 1
        return bundle_from_terms(terms, total)

    def train(self, epochs: int | None = None, log_path=None, out_dir=None, on_step=None) -> list:
        """Run to ``epochs`` (default: schedule end); returns [(epoch, step, lr, bundle)]."""
        end = self.schedule.total_epochs if epochs is None else min(epochs, self.schedule.total_epochs)
        history = []
        fh = None
        if log_path is not None:
            new = not Path(log_path).exists() or self.state.step == 0
            fh = open(log_path, "w" if new else "a", encoding="utf-8")
            if new:
                fh.write(LOG_HEADER + "\n")
        try:
            while self.state.epoch < end:
                lr = self.set_lr(self.state.epoch)
                for _ in range(self.steps_per_epoch):
                    step = self.state.step
                    bundle = self.train_step(self.next_batch())
                    history.append((self.state.epoch, step, lr, bundle))
                    if fh is not None:
                        fh.write("\t".join([str(self.state.epoch), str(step), f"{lr:.6e}"]
                                           + [f"{v:.6f}" for v in bundle.as_row()]) + "\n")
                    if on_step is not None:
                        on_step(self.state.epoch, step, lr, bundle)
                self.state.epoch += 1
                every = self.cfg["train.checkpoint_every"]
                if out_dir is not None and (self.state.epoch % every == 0 or self.state.epoch == end):
                    self.save(Path(out_dir) / "checkpoint.pt")
        finally:
            if fh is not None:
                fh.close()
        return history

    def save(self, path) -> None:
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "model_config": self.model.cfg.to_dict(),
            "state_dict": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "epoch": self.state.epoch,
            "step": self.state.step,
            "run_config": dict(self.cfg),
            "id_map": dict(self.manifest.id_map),
        }, path)

    def load(self, path) -> None:
        ckpt = read_checkpoint(path)
        self.model.load_state_dict(ckpt["state_dict"])
        self.optimizer.load_state_dict(ckpt["optimizer"])
        self.state = TrainState(ckpt["epoch"], ckpt["step"])


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    return ckpt


def load_model(path) -> tuple[DualConstraintNet, dict]:
    ckpt = read_checkpoint(path)
    model = DualConstraintNet(ModelConfig.from_dict(ckpt["model_config"]))
    dtype = ckpt["state_dict"]["head_r.conv.weight"].dtype
    model = model.to(dtype)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt


@torch.no_grad()
def infer_embeddings(model: DualConstraintNet, samples, batch_size: int = 64) -> np.ndarray:
    """Raw-stream embeddings (N x D); masks are never read."""
    model.eval()
    dtype = next(model.parameters()).dtype
    images = [s.image if isinstance(s, Sample) else s for s in samples]
    out = []
    for i in range(0, len(images), batch_size):
        out.append(model.embed(to_tensor(images[i:i + batch_size], dtype)).double().numpy())
    return np.concatenate(out) if out else np.zeros((0, model.backbone.out_channels))


def manifest_images(manifest: DatasetManifest, size) -> list[Sample]:
    cache = SampleCache(manifest, size, (), with_mask=False)
    return [cache[i] for i in range(len(manifest))]


@torch.no_grad()
def identity_accuracy(model: DualConstraintNet, samples: list[Sample], batch_size: int = 64) -> float:
    """Raw-stream classification accuracy against ``Sample.identity`` (dense labels)."""
    model.eval()
    dtype = next(model.parameters()).dtype
    correct = 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        _, E, _ = model._stream(to_tensor([s.image for s in chunk], dtype), None, False)
        logits, _ = model.head_r(E)
        correct += int((logits.argmax(1).numpy() == np.array([s.identity for s in chunk])).sum())
    return correct / len(samples)


def evaluate(model: DualConstraintNet, query: DatasetManifest, gallery: DatasetManifest, size, settings):
    qf = infer_embeddings(model, manifest_images(query, size))
    gf = infer_embeddings(model, manifest_images(gallery, size))
    dist = distance_matrix(qf, gf)
    qm, gm = Metadata.from_manifest(query), Metadata.from_manifest(gallery)
    return [cmc_map(dist, qm, gm, s) for s in settings]
