"""Static figures for reports: pitch overlays and training curves (Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _hz_or_nan(f0: np.ndarray, voiced: np.ndarray) -> np.ndarray:
    return np.where(voiced, f0, np.nan)


def plot_pitch_overlay(path, reference, hypothesis, hop_seconds: float | None = None,
                       labels=("reference", "hypothesis"), title: str | None = None) -> None:
    """Overlay two contours; unvoiced frames are left as gaps."""
    n = len(reference)
    x = np.arange(n) * hop_seconds if hop_seconds else np.arange(n)
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    ax.plot(x, _hz_or_nan(reference.f0, reference.voiced), lw=1.5, label=labels[0])
    ax.plot(x, _hz_or_nan(hypothesis.f0, hypothesis.voiced), lw=1.2, ls="--", label=labels[1])
    ax.set_xlabel("time (s)" if hop_seconds else "frame")
    ax.set_ylabel("f0 (Hz)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_loss_curves(path, history: list[dict], keys=None) -> None:
    """Per-step loss terms on a log axis."""
    keys = keys or [k for k in history[0] if k != "step" and not k.startswith("weighted_")]
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    for k in keys:
        ax.plot(steps, [max(h[k], 1e-12) for h in history], lw=1.0, label=k)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, ncol=min(len(keys), 4))
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
