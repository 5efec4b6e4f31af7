"""Re-identification retrieval metrics (CMC, mAP) under the three gallery protocols.

Ties in distance are broken by gallery index (stable sort).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

SETTINGS = ("general", "cloth_changing", "same_clothes")
REPORT_COLUMNS = ("setting", "rank1", "rank5", "rank10", "mAP", "retained_queries", "dropped_queries")


def normalize_setting(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in SETTINGS:
        raise ValueError(f"unknown setting {name!r}; valid: general, cloth-changing, same-clothes")
    return key


@dataclass(frozen=True)
class Metadata:
    ids: np.ndarray
    cams: np.ndarray
    clothes: np.ndarray

    def __post_init__(self):
        if not (len(self.ids) == len(self.cams) == len(self.clothes)):
            raise ValueError("metadata columns differ in length")

    @classmethod
    def of(cls, ids, cams, clothes) -> "Metadata":
        return cls(np.asarray(ids), np.asarray(cams), np.asarray(clothes))

    @classmethod
    def from_manifest(cls, manifest) -> "Metadata":
        recs = manifest.records
        return cls.of([r.identity for r in recs], [r.camera for r in recs], [r.clothes_id for r in recs])

    def __len__(self):
        return len(self.ids)


@dataclass
class EvalResult:
    setting: str
    cmc: np.ndarray
    mAP: float
    retained: int
    dropped: int
    rankings: list  # per retained-or-not query: valid gallery indices in rank order

    @property
    def rank1(self) -> float:
        return float(self.cmc[0])

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def distance_matrix(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    q, g = np.atleast_2d(q), np.atleast_2d(g)
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"embedding dims differ: {q.shape[1]} vs {g.shape[1]}")
    return cdist(q.astype(np.float64), g.astype(np.float64), "euclidean")


def valid_gallery_mask(q_id, q_cam, q_clothes, gallery: Metadata, setting: str) -> np.ndarray:
    """Gallery entries that take part in ranking for one query."""
    setting = normalize_setting(setting)
    same_id = gallery.ids == q_id
    excluded = same_id & (gallery.cams == q_cam)
    if setting == "cloth_changing":
        excluded |= same_id & (gallery.clothes == q_clothes)
    elif setting == "same_clothes":
        excluded |= same_id & (gallery.clothes != q_clothes)
    return ~excluded


def cmc_map(distances: np.ndarray, query: Metadata, gallery: Metadata, setting: str = "general") -> EvalResult:
    setting = normalize_setting(setting)
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape != (len(query), len(gallery)):
        raise ValueError(f"distance matrix {distances.shape} vs metadata {(len(query), len(gallery))}")
    n_g = len(gallery)
    order = np.argsort(distances, axis=1, kind="stable")
    cmc_sum = np.zeros(n_g)
    aps, rankings = [], []
    dropped = 0
    for qi in range(len(query)):
        keep = valid_gallery_mask(query.ids[qi], query.cams[qi], query.clothes[qi], gallery, setting)
        ranked = order[qi][keep[order[qi]]]
        rankings.append(ranked)
        hits = gallery.ids[ranked] == query.ids[qi]
        if not hits.any():
            dropped += 1
            continue
        first = int(np.argmax(hits))
        cmc_sum[first:] += 1
        positions = np.flatnonzero(hits) + 1
        aps.append(float(np.mean(np.arange(1, len(positions) + 1) / positions)))
    if not aps:
        raise ValueError(f"no query retains a valid positive under the {setting} setting")
    return EvalResult(setting, cmc_sum / len(aps), float(np.mean(aps)), len(aps), dropped, rankings)


def write_report(results, path) -> None:
    lines = ["\t".join(REPORT_COLUMNS)]
    for r in results:
        lines.append(
            f"{r.setting}\t{r.rank(1):.6f}\t{r.rank(5):.6f}\t{r.rank(10):.6f}\t{r.mAP:.6f}\t{r.retained}\t{r.dropped}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, ln.split("\t"))) for ln in lines[1:] if ln]


def write_rankings(result: EvalResult, path, top: int = 10) -> None:
    lines = ["# query_index\ttop gallery indices"]
    for qi, ranked in enumerate(result.rankings):
        lines.append(f"{qi}\t" + " ".join(str(int(j)) for j in ranked[:top]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
