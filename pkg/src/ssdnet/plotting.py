"""Report figures written next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_CURVES = ("total", "pixel_depth", "pixel_rgb", "dec")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_loss_curves(history: list[dict], path, keys=LOSS_CURVES) -> Path:
    """Per-step loss components on a log axis; refinement steps are marked."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    regular = [h for h in history if h.get("scr", 0.0) == 0.0]
    steps = [h["step"] for h in regular]
    for key in keys:
        vals = np.array([h[key] for h in regular], dtype=float)
        if np.any(vals > 0):
            ax.plot(steps, np.where(vals > 0, vals, np.nan), label=key, lw=1.2)
    scr = [h for h in history if h.get("scr", 0.0) != 0.0]
    if scr:
        ax.plot([h["step"] for h in scr], [h["scr"] for h in scr], "k^", ms=5, label="scr")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_rmse(ids: list[str], model: list[float], bicubic: list[float], path, unit: str = "m") -> Path:
    """Grouped bars of per-image RMSE for the model and the bicubic baseline."""
    x = np.arange(len(ids))
    fig, ax = plt.subplots(figsize=(max(6.4, 0.35 * len(ids)), 4.0))
    ax.bar(x - 0.2, bicubic, 0.4, label=f"bicubic (mean {np.mean(bicubic):.4f})", color="0.6")
    ax.bar(x + 0.2, model, 0.4, label=f"model (mean {np.mean(model):.4f})", color="C0")
    ax.set_xticks(x)
    ax.set_xticklabels(ids, rotation=90, fontsize=7)
    ax.set_ylabel(f"RMSE [{unit}]")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_error_map(error: np.ndarray, path, title: str = "|pred - gt|", unit: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(error, cmap="inferno", interpolation="nearest")
    ax.set_title(title)
    ax.set_axis_off()
    cb = fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    if unit:
        cb.set_label(unit)
    return _save(fig, path)
