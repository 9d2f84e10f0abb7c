"""Figures written by the report path. Everything renders off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def label_colors(labels: np.ndarray, seed: int = 7) -> np.ndarray:
    """RGB image with a stable pseudo-random color per label; 0 is black, -1 grey."""
    labels = np.asarray(labels, dtype=np.int64)
    uniq, inv = np.unique(labels, return_inverse=True)
    palette = np.empty((len(uniq), 3))
    for i, lab in enumerate(uniq):
        if lab == 0:
            palette[i] = 0.0
        elif lab < 0:
            palette[i] = 0.5
        else:
            palette[i] = np.random.default_rng([seed, int(lab)]).uniform(0.2, 1.0, 3)
    return palette[inv.reshape(labels.shape)]


def save_id_map(labels: np.ndarray, path: str | Path, title: str = "") -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 4 * labels.shape[0] / max(labels.shape[1], 1)))
        ax.imshow(label_colors(labels), interpolation="nearest")
        ax.set_title(title)
        ax.set_axis_off()
        return _save(fig, path)


def save_mask_preview(mask: np.ndarray, path: str | Path, title: str = "",
                      backdrop: np.ndarray | None = None) -> Path:
    """Binary mask, optionally drawn in red over a label-colored backdrop."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 4 * mask.shape[0] / max(mask.shape[1], 1)))
        if backdrop is not None:
            img = 0.5 * label_colors(backdrop)
            img[mask] = (1.0, 0.15, 0.15)
            ax.imshow(img, interpolation="nearest")
        else:
            ax.imshow(mask, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title)
        ax.set_axis_off()
        return _save(fig, path)


def save_loss_curve(history: list[dict], path: str | Path) -> Path:
    it = np.array([h["iteration"] for h in history])
    l2d = np.array([h["l2d"] for h in history])
    l3d = np.array([h["l3d"] for h in history], dtype=np.float64)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(it, l2d, lw=0.8, label="2D cross-entropy")
        has3d = np.isfinite(l3d)
        if has3d.any():
            ax.plot(it[has3d], l3d[has3d], "o", ms=2, label="3D neighbour KL")
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def save_metric_bars(scores: dict[str, float | None], path: str | Path, title: str = "") -> Path:
    """Bar chart of named scores; ``None`` entries are drawn as an empty slot labelled "--"."""
    names = list(scores)
    vals = [0.0 if scores[n] is None else float(scores[n]) for n in names]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(3, 0.6 * len(names) + 1), 3))
        bars = ax.bar(range(len(names)), vals, color="#4c72b0")
        for b, n in zip(bars, names):
            txt = "--" if scores[n] is None else f"{scores[n]:.2f}"
            ax.text(b.get_x() + b.get_width() / 2, b.get_height() + 0.02, txt, ha="center", fontsize=7)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylim(0, 1.1)
        ax.set_title(title)
        return _save(fig, path)
