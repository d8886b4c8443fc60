"""Objective evaluation metrics: SI-SNR, STOI, and log-spectral distance.

All metrics are pure functions of their inputs and never mutate them.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import get_window

from .data import resample
from .frontend import ComplexSpectrogram

SI_SNR_CAP_DB = 60.0

# STOI constants (classic intrusive intelligibility metric)
_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_NFFT = 512
_STOI_NBANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30          # analysis segment length in frames (384 ms)
_STOI_DYN_RANGE = 40.0  # silent-frame removal threshold, dB
_STOI_BETA = -15.0      # lower SDR clipping bound, dB


class MetricError(ValueError):
    """Raised for inputs a metric cannot score."""


def si_snr(est: np.ndarray, ref: np.ndarray, cap_db: float = SI_SNR_CAP_DB) -> float:
    """Scale-invariant SNR in dB (zero-mean, capped at ``cap_db``)."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise MetricError("signals must have equal length")
    if not np.any(ref):
        raise MetricError("reference signal is zero")
    est = est - est.mean()
    ref = ref - ref.mean()
    proj = np.dot(est, ref) / np.dot(ref, ref) * ref
    noise = est - proj
    p_noise = np.dot(noise, noise)
    if p_noise <= 0.0:
        return cap_db
    value = 10.0 * np.log10(np.dot(proj, proj) / p_noise)
    return float(min(value, cap_db))


def _third_octave_matrix(fs: int, nfft: int, num_bands: int, min_freq: float) -> np.ndarray:
    """Boolean band matrix [num_bands, nfft//2 + 1] of one-third octaves."""
    f = np.linspace(0, fs / 2, nfft // 2 + 1)
    k = np.arange(num_bands, dtype=np.float64)
    cf = min_freq * 2.0 ** (k / 3.0)
    lo = cf * 2.0 ** (-1.0 / 6.0)
    hi = cf * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((num_bands, f.size))
    for i in range(num_bands):
        lo_idx = int(np.argmin((f - lo[i]) ** 2))
        hi_idx = int(np.argmin((f - hi[i]) ** 2))
        obm[i, lo_idx:hi_idx] = 1.0
    return obm


def _frames(x: np.ndarray, window: np.ndarray, hop: int) -> np.ndarray:
    n = window.size
    if x.size < n:
        return np.empty((0, n))
    count = (x.size - n) // hop + 1
    idx = np.arange(n)[None, :] + hop * np.arange(count)[:, None]
    return x[idx] * window


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    window = get_window("hann", _STOI_FRAME, fftbins=False)
    xf = _frames(x, window, _STOI_HOP)
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-16)
    keep = energy > energy.max() - _STOI_DYN_RANGE
    yf = _frames(y, window, _STOI_HOP)

    def rebuild(frames):
        kept = frames[keep]
        out = np.zeros((kept.shape[0] - 1) * _STOI_HOP + _STOI_FRAME)
        for i, fr in enumerate(kept):
            out[i * _STOI_HOP:i * _STOI_HOP + _STOI_FRAME] += fr
        return out

    if not np.any(keep):
        raise MetricError("reference clip is entirely silent")
    return rebuild(xf), rebuild(yf)


def _stoi_tf_units(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    window = get_window("hann", _STOI_FRAME, fftbins=False)
    frames = _frames(x, window, _STOI_HOP)
    spec = np.abs(np.fft.rfft(frames, n=_STOI_NFFT, axis=1)) ** 2
    return np.sqrt(spec @ obm.T)  # [frames, bands]


def stoi(est: np.ndarray, ref: np.ndarray, fs: int, extended: bool = False) -> float:
    """Short-time objective intelligibility of ``est`` against clean ``ref``.

    Classic variant by default; ``extended=True`` selects the clipping-free
    extended variant.  Inputs are resampled to 10 kHz internally.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise MetricError("signals must have equal length")
    if fs != _STOI_FS:
        est = resample(est, fs, _STOI_FS)
        ref = resample(ref, fs, _STOI_FS)

    ref, est = _remove_silent_frames(ref, est)
    obm = _third_octave_matrix(_STOI_FS, _STOI_NFFT, _STOI_NBANDS, _STOI_MIN_FREQ)
    x = _stoi_tf_units(ref, obm)  # clean
    y = _stoi_tf_units(est, obm)  # degraded
    if x.shape[0] < _STOI_SEG:
        raise MetricError("clip too short for the analysis window "
                          f"({x.shape[0]} frames < {_STOI_SEG})")

    eps = np.finfo(np.float64).eps
    scores = []
    for m in range(_STOI_SEG, x.shape[0] + 1):
        xs = x[m - _STOI_SEG:m]  # [N, bands]
        ys = y[m - _STOI_SEG:m]
        if extended:
            xn = (xs - xs.mean(axis=0)) / (np.linalg.norm(xs - xs.mean(axis=0), axis=0) + eps)
            yn = (ys - ys.mean(axis=0)) / (np.linalg.norm(ys - ys.mean(axis=0), axis=0) + eps)
            xr = (xn - xn.mean(axis=1, keepdims=True))
            xr /= np.linalg.norm(xr, axis=1, keepdims=True) + eps
            yr = (yn - yn.mean(axis=1, keepdims=True))
            yr /= np.linalg.norm(yr, axis=1, keepdims=True) + eps
            scores.append(np.sum(xr * yr) / _STOI_NBANDS)
        else:
            alpha = np.linalg.norm(xs, axis=0) / (np.linalg.norm(ys, axis=0) + eps)
            ys_c = np.minimum(ys * alpha, xs * (1.0 + 10.0 ** (-_STOI_BETA / 20.0)))
            xm = xs - xs.mean(axis=0)
            ym = ys_c - ys_c.mean(axis=0)
            corr = np.sum(xm * ym, axis=0) / (
                np.linalg.norm(xm, axis=0) * np.linalg.norm(ym, axis=0) + eps)
            scores.append(corr.mean())
    return float(np.mean(scores))


def lsd(est_spec, ref_spec, bins: tuple[int, int] | None = None,
        eps: float = 1e-12) -> float:
    """RMS log-spectral distance in dB per frame, averaged over frames.

    ``bins`` optionally restricts the measure to a half-open bin range.
    """
    est = est_spec.values if isinstance(est_spec, ComplexSpectrogram) else np.asarray(est_spec)
    ref = ref_spec.values if isinstance(ref_spec, ComplexSpectrogram) else np.asarray(ref_spec)
    if est.shape != ref.shape:
        raise MetricError("spectrogram shapes differ")
    if bins is not None:
        est = est[:, bins[0]:bins[1]]
        ref = ref[:, bins[0]:bins[1]]
    diff = 20.0 * (np.log10(np.abs(est) + eps) - np.log10(np.abs(ref) + eps))
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))
