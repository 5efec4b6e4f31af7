"""Dataset records, manifest I/O, PK batch sampling and the procedural toy dataset.

Manifest format (UTF-8, tab separated, ``#`` lines are comments)::

    image_path  identity  camera  clothes_id  mask_path

Relative paths resolve against the manifest's directory. Identities are
relabeled to a dense ``[0, I)`` range in order of first appearance; the
original labels stay on the records for reporting.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

# Label vocabulary of the 20-class LIP parsing scheme (what SCHP-style parsers emit).
PARSING_LABELS = {
    0: "background", 1: "hat", 2: "hair", 3: "glove", 4: "sunglasses",
    5: "upper_clothes", 6: "dress", 7: "coat", 8: "socks", 9: "pants",
    10: "jumpsuits", 11: "scarf", 12: "skirt", 13: "face", 14: "left_arm",
    15: "right_arm", 16: "left_leg", 17: "right_leg", 18: "left_shoe",
    19: "right_shoe",
}
# All garment classes, shoes excluded.
DEFAULT_CLOTHING_LABELS = frozenset({1, 3, 5, 6, 7, 8, 9, 10, 11, 12})

MANIFEST_HEADER = "# image_path\tidentity\tcamera\tclothes_id\tmask_path"
SPLITS = ("train", "query", "gallery")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ParsingMask:
    labels: np.ndarray
    clothing_label_set: frozenset = DEFAULT_CLOTHING_LABELS

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.labels.shape}")
        unknown = set(np.unique(self.labels).tolist()) - set(PARSING_LABELS)
        if unknown:
            raise ValueError(f"unknown parsing labels {sorted(unknown)}")
        if not set(self.clothing_label_set) <= set(PARSING_LABELS):
            raise ValueError("clothing_label_set is not a subset of the label vocabulary")

    @property
    def clothing(self) -> np.ndarray:
        """Boolean H x W raster of clothing pixels."""
        return np.isin(self.labels, list(self.clothing_label_set))


@dataclass(frozen=True)
class Sample:
    image: np.ndarray  # H x W x 3 uint8
    identity: int
    camera: int
    clothes_id: int
    mask: ParsingMask | None = None

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {self.image.shape}")
        if self.mask is not None and self.mask.labels.shape != self.image.shape[:2]:
            raise ValueError(
                f"mask {self.mask.labels.shape} does not match image {self.image.shape[:2]}"
            )

    def replace(self, **changes) -> "Sample":
        fields = dict(image=self.image, identity=self.identity, camera=self.camera,
                      clothes_id=self.clothes_id, mask=self.mask)
        fields.update(changes)
        return Sample(**fields)


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    identity: int
    camera: int
    clothes_id: int
    mask_path: str


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        self.id_map: dict[int, int] = {}
        for rec in self.records:
            self.id_map.setdefault(rec.identity, len(self.id_map))
        self.labels = [self.id_map[rec.identity] for rec in self.records]

    def __len__(self):
        return len(self.records)

    @property
    def num_identities(self) -> int:
        return len(self.id_map)

    def indices_by_label(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for i, label in enumerate(self.labels):
            groups.setdefault(label, []).append(i)
        return groups

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def subset(self, indices: Iterable[int], split: str | None = None) -> "DatasetManifest":
        return DatasetManifest([self.records[i] for i in indices], split or self.split, self.root)


def load_manifest(path, split: str | None = None, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ManifestError(
                    f"{path}: row {lineno} has {len(parts)} fields, expected 5"
                )
            try:
                ident, cam, clothes = (int(x) for x in parts[1:4])
            except ValueError:
                raise ManifestError(f"{path}: row {lineno} has non-integer label fields") from None
            if min(ident, cam, clothes) < 0:
                raise ManifestError(f"{path}: row {lineno} has negative label fields")
            records.append(ManifestRecord(parts[0], ident, cam, clothes, parts[4]))
    if not records:
        raise ManifestError(f"empty manifest: {path}")
    if split is None:
        split = path.stem if path.stem in SPLITS else "train"
    manifest = DatasetManifest(records, split, path.parent)
    if check_paths:
        for rec in records:
            for p in (rec.image_path, rec.mask_path):
                if not manifest.resolve(p).is_file():
                    raise ManifestError(f"{path}: referenced file missing: {p}")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [MANIFEST_HEADER]
    for r in manifest.records:
        lines.append(f"{r.image_path}\t{r.identity}\t{r.camera}\t{r.clothes_id}\t{r.mask_path}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sample(manifest: DatasetManifest, index: int,
                clothing_labels=DEFAULT_CLOTHING_LABELS, with_mask: bool = True) -> Sample:
    rec = manifest.records[index]
    with Image.open(manifest.resolve(rec.image_path)) as im:
        image = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    mask = None
    if with_mask:
        with Image.open(manifest.resolve(rec.mask_path)) as im:
            mask = ParsingMask(np.asarray(im, dtype=np.uint8).copy(), frozenset(clothing_labels))
    return Sample(image, manifest.labels[index], rec.camera, rec.clothes_id, mask)


@dataclass(frozen=True)
class IdentityBatch:
    indices: list[int]
    labels: list[int]
    P: int
    K: int

    def __post_init__(self):
        if len(self.indices) != self.P * self.K or len(self.labels) != self.P * self.K:
            raise ValueError("batch length must equal P * K")
        counts: dict[int, int] = {}
        for y in self.labels:
            counts[y] = counts.get(y, 0) + 1
        if len(counts) != self.P or any(c != self.K for c in counts.values()):
            raise ValueError("batch must hold exactly K samples for each of P identities")

    @property
    def N(self) -> int:
        return self.P * self.K


def pk_sample(manifest: DatasetManifest, P: int, K: int, seed: int) -> IdentityBatch:
    """Draw P identities without replacement and K samples of each.

    Samples are drawn with replacement only for identities holding fewer
    than K images.
    """
    if K < 2:
        raise ValueError("K must be >= 2 so every anchor has a positive")
    groups = manifest.indices_by_label()
    if P > len(groups) or P < 1:
        raise ValueError(f"P={P} exceeds identity count {len(groups)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(sorted(groups), size=P, replace=False)
    indices, labels = [], []
    for label in chosen.tolist():
        pool = groups[label]
        picks = rng.choice(pool, size=K, replace=len(pool) < K)
        indices.extend(int(i) for i in picks)
        labels.extend([label] * K)
    return IdentityBatch(indices, labels, P, K)


def derive_seed(*keys: int) -> int:
    """Stable integer seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# --------------------------------------------------------------------------
# Procedural toy pedestrians

MIN_TOY_SIZE = (32, 16)


@dataclass(frozen=True)
class FigureLayout:
    """Pixel boxes (y0, y1, x0, x1), half-open, already clipped to the frame."""
    head: tuple
    hair_rows: int
    upper: tuple
    pants: tuple
    arms: tuple
    legs: tuple
    shoes: tuple

    @property
    def clothing_boxes(self) -> tuple:
        return (self.upper, self.pants)


def _clip(box, H, W):
    y0, y1, x0, x1 = box
    return (max(0, min(H, y0)), max(0, min(H, y1)), max(0, min(W, x0)), max(0, min(W, x1)))


def toy_layout(identity_params: dict, dy: int, dx: int, H: int, W: int) -> FigureLayout:
    p = identity_params
    cx = W // 2 + dx
    top = int(round(0.04 * H)) + dy
    head_h = max(4, int(round(p["head"] * H)))
    head_w = max(3, int(round(head_h * 0.75)))
    head = (top, top + head_h, cx - head_w // 2, cx - head_w // 2 + head_w)
    tw = max(4, int(round(p["torso"] * W)))
    t0 = head[1]
    t1 = t0 + int(round(0.32 * H))
    upper = (t0, t1, cx - tw // 2, cx - tw // 2 + tw)
    aw = max(2, int(round(0.1 * W)))
    arm_len = int(round(0.3 * H))
    arms = ((t0, t0 + arm_len, upper[2] - aw, upper[2]),
            (t0, t0 + arm_len, upper[3], upper[3] + aw))
    pw = max(4, int(round(tw * 0.8)))
    pants_h = int(round(p["pants"] * H))
    pants = (t1, t1 + pants_h, cx - pw // 2, cx - pw // 2 + pw)
    ground = H - 1 + min(dy, 0)
    shoe_h = max(1, int(round(0.05 * H)))
    lw = max(1, pw // 2 - 1)
    legs = ((pants[1], ground - shoe_h, pants[2], pants[2] + lw),
            (pants[1], ground - shoe_h, pants[3] - lw, pants[3]))
    shoes = ((ground - shoe_h, ground, pants[2] - 1, pants[2] + lw),
             (ground - shoe_h, ground, pants[3] - lw, pants[3] + 1))
    clip = lambda b: _clip(b, H, W)  # noqa: E731
    return FigureLayout(
        head=clip(head), hair_rows=max(1, int(round(head_h * p["hair"]))),
        upper=clip(upper), pants=clip(pants),
        arms=tuple(clip(a) for a in arms), legs=tuple(clip(b) for b in legs),
        shoes=tuple(clip(s) for s in shoes),
    )


def _identity_params(seed: int, pid: int) -> dict:
    rng = np.random.default_rng(derive_seed(seed, 1, pid))
    return {
        "hair_rgb": rng.integers(0, 256, 3),
        "skin_rgb": rng.integers(60, 256, 3),
        "shoe_rgb": rng.integers(0, 256, 3),
        "head": rng.uniform(0.12, 0.17),
        "hair": rng.uniform(0.25, 0.6),
        "torso": rng.uniform(0.45, 0.65),
        "pants": rng.uniform(0.18, 0.26),
    }


def _outfit_params(seed: int, pid: int, outfit: int) -> dict:
    rng = np.random.default_rng(derive_seed(seed, 2, pid, outfit))
    return {
        "upper_rgb": rng.integers(0, 256, 3),
        "stripe_rgb": rng.integers(0, 256, 3),
        "stripe": int(rng.integers(2, 6)),
        "pants_rgb": rng.integers(0, 256, 3),
    }


def render_toy(seed: int, pid: int, outfit: int, image_index: int, H: int, W: int):
    """Render one pedestrian; returns (image uint8 HxWx3, label raster uint8 HxW, layout).

    Pose jitter, background and pixel noise depend only on (identity, image
    index), so the same image index in two outfits differs only on clothing.
    """
    if H < MIN_TOY_SIZE[0] or W < MIN_TOY_SIZE[1]:
        raise ValueError(f"image_size {(H, W)} smaller than the {MIN_TOY_SIZE} figure template")
    ip = _identity_params(seed, pid)
    op = _outfit_params(seed, pid, outfit)
    rng = np.random.default_rng(derive_seed(seed, 3, pid, image_index))
    dy = int(rng.integers(-1, 2))
    dx = int(rng.integers(-2, 3))
    layout = toy_layout(ip, dy, dx, H, W)

    labels = np.zeros((H, W), dtype=np.uint8)

    def paint(box, value):
        y0, y1, x0, x1 = box
        labels[y0:y1, x0:x1] = value

    for box, lab in zip(layout.legs, (16, 17)):
        paint(box, lab)
    for box, lab in zip(layout.shoes, (18, 19)):
        paint(box, lab)
    for box, lab in zip(layout.arms, (14, 15)):
        paint(box, lab)
    paint(layout.head, 13)
    hy0, _, hx0, hx1 = layout.head
    labels[hy0:hy0 + layout.hair_rows, hx0:hx1] = np.where(
        labels[hy0:hy0 + layout.hair_rows, hx0:hx1] == 13, 2, labels[hy0:hy0 + layout.hair_rows, hx0:hx1])
    # clothing last so the clothing labels cover their boxes exactly
    paint(layout.upper, 5)
    paint(layout.pants, 9)

    base = float(rng.uniform(90, 170))
    image = np.full((H, W, 3), base, dtype=np.float64)
    colors = {2: ip["hair_rgb"], 13: ip["skin_rgb"], 14: ip["skin_rgb"], 15: ip["skin_rgb"],
              16: ip["skin_rgb"], 17: ip["skin_rgb"], 18: ip["shoe_rgb"], 19: ip["shoe_rgb"],
              9: op["pants_rgb"]}
    for lab, rgb in colors.items():
        image[labels == lab] = rgb
    uy0 = layout.upper[0]
    rows = np.arange(H)[:, None]
    stripe = ((rows - uy0) // op["stripe"]) % 2 == 1
    upper = labels == 5
    image[upper & ~stripe] = op["upper_rgb"]
    image[upper & stripe] = op["stripe_rgb"]
    image += rng.normal(0.0, 6.0, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return image, labels, layout


def generate_toy_dataset(out_dir, n_ids: int = 8, outfits_per_id: int = 2,
                         images_per_outfit: int = 4, image_size=(64, 32), seed: int = 0,
                         cameras: int = 2):
    """Render a toy cloth-changing dataset to ``out_dir``.

    Writes ``images/*.png``, ``masks/*.png`` and ``all.tsv``; returns the
    manifest and the list of files written. Camera is ``image_index % cameras``
    and ``clothes_id = identity * outfits_per_id + outfit``.
    """
    if n_ids < 2 or outfits_per_id < 2:
        raise ValueError("toy dataset needs n_ids >= 2 and outfits_per_id >= 2")
    if images_per_outfit < 1:
        raise ValueError("images_per_outfit must be >= 1")
    H, W = image_size
    if H < MIN_TOY_SIZE[0] or W < MIN_TOY_SIZE[1]:
        raise ValueError(f"image_size {(H, W)} smaller than the {MIN_TOY_SIZE} figure template")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records, files = [], []
    for pid in range(n_ids):
        for outfit in range(outfits_per_id):
            for i in range(images_per_outfit):
                image, labels, _ = render_toy(seed, pid, outfit, i, H, W)
                name = f"{pid:04d}_o{outfit}_{i:03d}.png"
                img_rel, mask_rel = f"images/{name}", f"masks/{name}"
                Image.fromarray(image, "RGB").save(out / img_rel)
                Image.fromarray(labels, "L").save(out / mask_rel)
                files += [out / img_rel, out / mask_rel]
                records.append(ManifestRecord(img_rel, pid, i % cameras,
                                              pid * outfits_per_id + outfit, mask_rel))
    manifest = DatasetManifest(records, "train", out)
    write_manifest(manifest, out / "all.tsv")
    files.append(out / "all.tsv")
    return manifest, files


def held_out_outfit_split(manifest: DatasetManifest, train_fraction: float = 0.75):
    """Split for cloth-changing evaluation on a fully-labeled dataset.

    Per identity the first-seen outfit is the training outfit: its first
    ``train_fraction`` images train, the rest go to the gallery. Every other
    outfit is held out: first half of its images are queries, second half
    gallery. Returns (train, query, gallery) manifests.
    """
    first_outfit: dict[int, int] = {}
    by_clothes: dict[int, list[int]] = {}
    for i, rec in enumerate(manifest.records):
        first_outfit.setdefault(rec.identity, rec.clothes_id)
        by_clothes.setdefault(rec.clothes_id, []).append(i)
    train, query, gallery = [], [], []
    for clothes, idx in by_clothes.items():
        ident = manifest.records[idx[0]].identity
        if first_outfit[ident] == clothes:
            cut = max(1, int(round(len(idx) * train_fraction)))
            train += idx[:cut]
            gallery += idx[cut:]
        else:
            half = max(1, len(idx) // 2)
            query += idx[:half]
            gallery += idx[half:]
    return (manifest.subset(sorted(train), "train"), manifest.subset(sorted(query), "query"),
            manifest.subset(sorted(gallery), "gallery"))


def write_split_manifests(manifests: Sequence[DatasetManifest], out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for m in manifests:
        p = out_dir / f"{m.split}.tsv"
        if m.root.resolve() != out_dir.resolve():
            rel = os.path.relpath(m.root, out_dir)
            m = DatasetManifest([
                ManifestRecord(os.path.join(rel, r.image_path), r.identity, r.camera,
                               r.clothes_id, os.path.join(rel, r.mask_path))
                for r in m.records], m.split, out_dir)
        write_manifest(m, p)
        paths.append(p)
    return paths
