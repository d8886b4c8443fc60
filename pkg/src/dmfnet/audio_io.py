"""Mono WAV read/write (PCM16 / PCM24 / float32)."""
from __future__ import annotations

import numpy as np
from scipy.io import wavfile


class AudioIOError(ValueError):
    """Raised for unsupported or malformed audio files."""


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono RIFF WAV; returns (float64 samples in [-1, 1], rate)."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise AudioIOError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        wave = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit PCM arrives as int32 with the low byte zeroed
        wave = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        wave = data.astype(np.float64)
    elif data.dtype == np.uint8:
        wave = (data.astype(np.float64) - 128.0) / 128.0
    else:
        raise AudioIOError(f"{path}: unsupported sample format {data.dtype}")
    if not np.all(np.isfinite(wave)):
        raise AudioIOError(f"{path}: non-finite samples")
    return wave, int(rate)


def write_wav(path, wave: np.ndarray, rate: int, dtype: str = "float32") -> None:
    wave = np.asarray(wave)
    if wave.ndim != 1:
        raise AudioIOError("only mono output is supported")
    if dtype == "float32":
        wavfile.write(path, rate, wave.astype(np.float32))
    elif dtype == "pcm16":
        clipped = np.clip(wave, -1.0, 1.0 - 1.0 / 32768.0)
        wavfile.write(path, rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise AudioIOError(f"unsupported output dtype {dtype!r}")
