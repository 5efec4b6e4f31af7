"""Report figures: CMC curves and training-loss curves, plus augmentation preview images."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "svg.hashsalt": "ccreid",
}


def _figure(width=4.5, height=None):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    return plt.subplots(figsize=(width, height or width * golden))


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_cmc(results, path, max_rank: int = 20) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        for r in results:
            k = min(max_rank, len(r.cmc))
            ax.plot(np.arange(1, k + 1), 100 * r.cmc[:k], marker="o", ms=3,
                    label=f"{r.setting} (R1 {100 * r.rank1:.1f}, mAP {100 * r.mAP:.1f})")
        ax.set_xlabel("rank")
        ax.set_ylabel("matching rate (%)")
        ax.set_ylim(0, 101)
        ax.set_title("CMC")
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)
    return Path(path)


def read_train_log(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].lstrip("# ").split("\t")
    rows = [ln.split("\t") for ln in lines[1:] if ln and not ln.startswith("#")]
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def plot_loss_curve(log, path, terms=("total", "L_id_r", "L_tri_r", "L_cc_r", "L_hm", "L_sc")) -> Path:
    """``log`` is a training-log path or the dict returned by :func:`read_train_log`."""
    if not isinstance(log, dict):
        log = read_train_log(log)
    with plt.rc_context(STYLE):
        fig, ax = _figure(5.0)
        for name in terms:
            if name in log and np.any(log[name]):
                ax.plot(log["step"], log[name], lw=1, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(frameon=False, ncol=2)
        _save(fig, path)
    return Path(path)


def save_image(array: np.ndarray, path) -> Path:
    Image.fromarray(array).save(path, format="PNG")
    return Path(path)
