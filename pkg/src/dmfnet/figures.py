"""Spectrogram figure emission for side-by-side listening-test style panels."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import frontend  # noqa: E402
from .config import FrontendConfig  # noqa: E402

DB_RANGE = 80.0


def spectrogram_db(wave: np.ndarray, cfg: FrontendConfig) -> np.ndarray:
    spec = frontend.stft(np.asarray(wave, dtype=np.float64), cfg)
    return 20.0 * np.log10(spec.magnitude + 1e-12)


def emit_spectrogram_figure(wavs: list[tuple[str, np.ndarray]], out_path,
                            cfg: FrontendConfig | None = None) -> None:
    """Write one PNG with a log-magnitude panel per labeled waveform.

    All panels share a color scale spanning [global max - 80 dB, global max].
    """
    if not wavs:
        raise ValueError("at least one labeled waveform is required")
    cfg = cfg or FrontendConfig.fullband()
    panels = [(label, spectrogram_db(w, cfg)) for label, w in wavs]
    vmax = max(p.max() for _, p in panels)
    vmin = vmax - DB_RANGE

    fig, axes = plt.subplots(len(panels), 1, figsize=(9, 2.4 * len(panels)),
                             squeeze=False, constrained_layout=True)
    nyquist_khz = cfg.sample_rate_hz / 2000.0
    for ax, (label, panel) in zip(axes[:, 0], panels):
        dur = panel.shape[0] * cfg.hop_samples / cfg.sample_rate_hz
        im = ax.imshow(panel.T, origin="lower", aspect="auto",
                       extent=(0.0, dur, 0.0, nyquist_khz),
                       vmin=vmin, vmax=vmax, cmap="magma")
        ax.set_title(label)
        ax.set_ylabel("kHz")
    axes[-1, 0].set_xlabel("time (s)")
    fig.colorbar(im, ax=axes[:, 0], label="dB", shrink=0.8)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
