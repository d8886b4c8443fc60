"""Spectral front-end: STFT analysis/synthesis, power compression, and
the three-band split/fusion.

All functions are pure and operate on numpy arrays.  Spectrograms are
``[T, F]`` complex arrays wrapped in :class:`ComplexSpectrogram`.

Padding scheme: the analysis left-pads the waveform with ``win - hop``
zeros and right-pads to a whole number of hops, giving
``T = ceil(len / hop)`` frames.  No reflection padding is used, so a
sample can only influence frames that actually contain it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .config import BandLayout, FrontendConfig

_OLA_EPS = 1e-10


class InputError(ValueError):
    """Rejected input (non-finite, empty, or out of domain)."""


class ShapeError(ValueError):
    """Array shapes inconsistent with the configuration."""


@dataclass
class ComplexSpectrogram:
    """Time-frequency complex array with magnitude/phase views."""
    values: np.ndarray  # complex, [T, F]

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ShapeError("spectrogram must be 2-D [frames, bins]")
        if not np.iscomplexobj(self.values):
            self.values = self.values.astype(np.complex128)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)

    @classmethod
    def from_polar(cls, magnitude: np.ndarray, phase: np.ndarray) -> "ComplexSpectrogram":
        if magnitude.shape != phase.shape:
            raise ShapeError("magnitude and phase shapes differ")
        return cls(magnitude * np.exp(1j * phase))


def _window(cfg: FrontendConfig) -> np.ndarray:
    return get_window("hann", cfg.win_len_samples, fftbins=True)


def stft(waveform: np.ndarray, cfg: FrontendConfig) -> ComplexSpectrogram:
    """Analysis STFT; ``T = ceil(len / hop)`` frames of ``fft/2 + 1`` bins."""
    wave = np.asarray(waveform, dtype=np.float64)
    if wave.ndim != 1 or wave.size == 0:
        raise InputError("waveform must be a non-empty 1-D array")
    if not np.all(np.isfinite(wave)):
        raise InputError("waveform contains non-finite samples")

    win, hop = cfg.win_len_samples, cfg.hop_samples
    num_frames = -(-wave.size // hop)  # ceil
    padded = np.zeros((num_frames + 1) * hop, dtype=np.float64)
    padded[win - hop:win - hop + wave.size] = wave

    idx = np.arange(win)[None, :] + hop * np.arange(num_frames)[:, None]
    frames = padded[idx] * _window(cfg)
    return ComplexSpectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=1))


def istft(spec: ComplexSpectrogram, cfg: FrontendConfig,
          length: int | None = None) -> np.ndarray:
    """Overlap-add synthesis with squared-window normalization.

    Returns ``T * hop`` samples (the un-padded analysis span) unless
    ``length`` trims it further.
    """
    if spec.bins != cfg.num_bins:
        raise ShapeError(f"expected {cfg.num_bins} bins, got {spec.bins}")
    win, hop = cfg.win_len_samples, cfg.hop_samples
    window = _window(cfg)

    frames = np.fft.irfft(spec.values, n=cfg.fft_size, axis=1)[:, :win] * window
    total = (spec.frames + 1) * hop
    out = np.zeros(total)
    den = np.zeros(total)
    wsq = window * window
    for i in range(spec.frames):
        out[i * hop:i * hop + win] += frames[i]
        den[i * hop:i * hop + win] += wsq
    out /= np.maximum(den, _OLA_EPS)

    out = out[win - hop:win - hop + spec.frames * hop]
    if length is not None:
        if length > out.size:
            raise ShapeError("requested length exceeds synthesized span")
        out = out[:length]
    return out


def compress_magnitude(mag: np.ndarray, beta: float) -> np.ndarray:
    """Elementwise power compression ``mag ** beta``; phase is untouched."""
    mag = np.asarray(mag)
    if not 0.0 < beta <= 1.0:
        raise InputError("beta must be in (0, 1]")
    if np.any(mag < 0):
        raise InputError("magnitudes must be non-negative")
    return mag ** beta


def decompress_magnitude(mag: np.ndarray, beta: float) -> np.ndarray:
    """Inverse of :func:`compress_magnitude`."""
    mag = np.asarray(mag)
    if not 0.0 < beta <= 1.0:
        raise InputError("beta must be in (0, 1]")
    if np.any(mag < 0):
        raise InputError("magnitudes must be non-negative")
    return mag ** (1.0 / beta)


def compress_spectrogram(spec: ComplexSpectrogram, beta: float) -> ComplexSpectrogram:
    return ComplexSpectrogram.from_polar(compress_magnitude(spec.magnitude, beta), spec.phase)


def decompress_spectrogram(spec: ComplexSpectrogram, beta: float) -> ComplexSpectrogram:
    return ComplexSpectrogram.from_polar(decompress_magnitude(spec.magnitude, beta), spec.phase)


def split_bands(spec: ComplexSpectrogram, layout: BandLayout
                ) -> tuple[ComplexSpectrogram, ComplexSpectrogram, ComplexSpectrogram]:
    """Slice the spectrogram into low/mid/high sub-bands (shared boundary bins)."""
    if spec.bins != layout.num_bins:
        raise ShapeError(f"layout covers {layout.num_bins} bins, spectrogram has {spec.bins}")
    return tuple(ComplexSpectrogram(spec.values[:, a:b].copy())
                 for a, b in (layout.low, layout.mid, layout.high))


def fuse_bands(low: ComplexSpectrogram, mid: ComplexSpectrogram,
               high: ComplexSpectrogram, layout: BandLayout) -> ComplexSpectrogram:
    """Concatenate sub-bands; overlapped bins are the mean of contributors."""
    bands = (low, mid, high)
    ranges = (layout.low, layout.mid, layout.high)
    frames = low.frames
    for band, (a, b) in zip(bands, ranges):
        if band.frames != frames:
            raise ShapeError("band frame counts differ")
        if band.bins != b - a:
            raise ShapeError(f"band has {band.bins} bins, layout expects {b - a}")

    acc = np.zeros((frames, layout.num_bins), dtype=np.complex128)
    count = np.zeros(layout.num_bins)
    for band, (a, b) in zip(bands, ranges):
        acc[:, a:b] += band.values
        count[a:b] += 1.0
    return ComplexSpectrogram(acc / count)
