"""Report figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
}
# no timestamps or version strings, so reruns give identical bytes
PNG_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    plt.close(fig)


def plot_error_profile(profile, path, head: int = 4, tail: int = 8, title: str | None = None) -> None:
    """Per-position MSE across the 50-frame output window, head and tail frames shaded."""
    profile = np.asarray(profile, dtype=np.float64)
    n = len(profile)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.axvspan(-0.5, head - 0.5, color="tab:red", alpha=0.08, lw=0)
        ax.axvspan(n - tail - 0.5, n - 0.5, color="tab:red", alpha=0.08, lw=0)
        ax.plot(np.arange(n), profile, marker="o", ms=3, lw=1.2, color="tab:blue")
        ax.set_xlim(-0.5, n - 0.5)
        ax.set_xlabel("output frame position")
        ax.set_ylabel("MSE")
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_training_log(history, path) -> None:
    epochs = [e.epoch for e in history]
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.4))
        ax1.plot(epochs, [e.l2 for e in history], label="L2")
        ax1.plot(epochs, [e.int for e in history], label="inter-frame")
        ax1.set_yscale("log")
        ax1.set_xlabel("epoch")
        ax1.legend(frameon=False)
        ax2.plot(epochs, [e.g_gan for e in history], label="G adversarial")
        ax2.plot(epochs, [e.d_loss for e in history], label="D")
        if any(np.isfinite(e.val_mse) for e in history):
            twin = ax2.twinx()
            twin.plot(epochs, [e.val_mse for e in history], color="k", ls="--", label="val MSE")
            twin.set_ylabel("val MSE")
            twin.grid(False)
        ax2.set_xlabel("epoch")
        ax2.legend(frameon=False, loc="upper left")
        _save(fig, path)


def overlay(image, raster, alpha: float = 0.6) -> np.ndarray:
    """Debug composite: map pixels painted over the template frame."""
    img = np.asarray(image, dtype=np.float64).copy()
    on = np.asarray(raster).any(axis=2)
    img[on] = (1 - alpha) * img[on] + alpha * np.asarray(raster, dtype=np.float64)[on]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)
