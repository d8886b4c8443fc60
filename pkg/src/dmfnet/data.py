"""Synthetic noisy/reverberant training-pair generation and batching.

Each :class:`MixtureSpec` fully determines one training pair: the clean
utterance is convolved with a room impulse response (if given), noise is
scaled to hit the requested SNR against the reverberant speech, and the
clean target keeps only the direct path plus early reflections.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.signal import fftconvolve, resample_poly

from . import frontend
from .audio_io import read_wav
from .config import DmfConfig, FrontendConfig

VAD_FLOOR_DB = -40.0
_VAD_FRAME = 0.02  # seconds


class DataError(ValueError):
    """Raised for invalid mixture specs or manifests."""


class SkipItem(Exception):
    """Raised when an item cannot be synthesized (e.g. silent clean clip)."""


@dataclass(frozen=True)
class MixtureSpec:
    clean_path: str
    noise_path: str
    snr_db: float
    seed: int
    rir_path: str | None = None

    def to_json(self) -> str:
        d = {"clean_path": self.clean_path, "noise_path": self.noise_path,
             "snr_db": self.snr_db, "seed": self.seed, "rir_path": self.rir_path}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MixtureSpec":
        d = json.loads(line)
        return cls(clean_path=d["clean_path"], noise_path=d["noise_path"],
                   snr_db=float(d["snr_db"]), seed=int(d["seed"]),
                   rir_path=d.get("rir_path"))


@dataclass
class Manifest:
    records: list[MixtureSpec]
    split: str = "train"

    def __post_init__(self):
        seeds = [r.seed for r in self.records]
        if len(set(seeds)) != len(seeds):
            raise DataError("manifest seeds must be unique")

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    @classmethod
    def load(cls, path, split: str = "train", check_paths: bool = True) -> "Manifest":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(MixtureSpec.from_json(line))
        if check_paths:
            for rec in records:
                for p in (rec.clean_path, rec.noise_path, rec.rir_path):
                    if p is not None and not Path(p).exists():
                        raise DataError(f"missing file {p}")
        return cls(records, split)


@dataclass
class TrainingPair:
    noisy: np.ndarray
    target_denoised_reverberant: np.ndarray
    target_clean: np.ndarray
    sample_rate: int
    snr_db: float
    seed: int


def active_power(wave: np.ndarray, rate: int, floor_db: float = VAD_FLOOR_DB) -> float:
    """Mean power over frames within ``floor_db`` of the loudest frame."""
    frame = max(1, int(round(_VAD_FRAME * rate)))
    usable = wave[: wave.size - wave.size % frame]
    if usable.size == 0:
        usable = wave
        frame = wave.size
    energies = np.mean(usable.reshape(-1, frame) ** 2, axis=1)
    peak = energies.max()
    if peak <= 0.0:
        return 0.0
    active = energies[energies >= peak * 10.0 ** (floor_db / 10.0)]
    return float(active.mean())


def noise_gain(signal_power: float, noise_power: float, snr_db: float) -> float:
    """Gain g with 10*log10(P_s / (g^2 P_n)) = snr_db."""
    if noise_power <= 0.0:
        raise DataError("noise has zero power")
    return float(np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def truncate_rir(rir: np.ndarray, rate: int, early_ms: float) -> np.ndarray:
    """Keep the direct-path peak through ``early_ms`` after it."""
    peak = int(np.argmax(np.abs(rir)))
    if np.abs(rir[peak]) <= 0.0:
        raise DataError("RIR has no detectable direct-path peak")
    stop = peak + int(round(early_ms * 1e-3 * rate)) + 1
    return rir[: min(stop, rir.size)]


def _fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if noise.size >= length:
        start = int(rng.integers(0, noise.size - length + 1))
        return noise[start:start + length]
    reps = -(-length // noise.size)
    return np.tile(noise, reps)[:length]


def synthesize_pair(spec: MixtureSpec, early_ms: float = 50.0,
                    expected_rate: int | None = None) -> TrainingPair:
    """Build one deterministic noisy/target triple from a mixture spec."""
    clean, rate_c = read_wav(spec.clean_path)
    noise, rate_n = read_wav(spec.noise_path)
    if rate_c != rate_n:
        raise DataError("clean and noise sample rates differ")
    if expected_rate is not None and rate_c != expected_rate:
        raise DataError(f"expected {expected_rate} Hz audio, got {rate_c}")

    if spec.rir_path is not None:
        rir, rate_r = read_wav(spec.rir_path)
        if rate_r != rate_c:
            raise DataError("RIR sample rate differs from speech")
        reverberant = fftconvolve(clean, rir)[: clean.size]
        early = truncate_rir(rir, rate_c, early_ms)
        target_clean = fftconvolve(clean, early)[: clean.size]
    else:
        reverberant = clean.copy()
        target_clean = clean.copy()

    p_signal = active_power(reverberant, rate_c)
    if p_signal <= 0.0:
        raise SkipItem(f"{spec.clean_path}: silent clean segment")

    rng = np.random.default_rng(spec.seed)
    noise_seg = _fit_noise(noise, clean.size, rng)
    gain = noise_gain(p_signal, float(np.mean(noise_seg ** 2)), spec.snr_db)
    noisy = reverberant + gain * noise_seg
    return TrainingPair(noisy=noisy, target_denoised_reverberant=reverberant,
                        target_clean=target_clean, sample_rate=rate_c,
                        snr_db=spec.snr_db, seed=spec.seed)


def realized_snr_db(pair: TrainingPair) -> float:
    """SNR of a synthesized pair under the same power convention."""
    noise = pair.noisy - pair.target_denoised_reverberant
    p_s = active_power(pair.target_denoised_reverberant, pair.sample_rate)
    p_n = float(np.mean(noise ** 2))
    return 10.0 * np.log10(p_s / p_n)


def resample(waveform: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Anti-aliased rational resampling (sharp Kaiser-windowed FIR)."""
    if rate_in == rate_out:
        return np.asarray(waveform, dtype=np.float64)
    g = np.gcd(rate_in, rate_out)
    return resample_poly(np.asarray(waveform, dtype=np.float64),
                         rate_out // g, rate_in // g, window=("kaiser", 12.0))


def resample_to_16k(waveform: np.ndarray, rate_in: int = 48000) -> np.ndarray:
    if rate_in not in (48000, 32000):
        raise DataError(f"unsupported input rate {rate_in}")
    return resample(waveform, rate_in, 16000)


def synthetic_voice(duration_s: float, rate: int, rng: np.random.Generator,
                    f0_hz: float | None = None, max_harmonic_hz: float = 5000.0
                    ) -> np.ndarray:
    """Speech-like harmonic test signal: modulated harmonic stack."""
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    f0 = f0_hz if f0_hz is not None else float(rng.uniform(110.0, 220.0))
    f0_track = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t))
    phase = 2 * np.pi * np.cumsum(f0_track) / rate
    wave = np.zeros(n)
    for h in range(1, int(max_harmonic_hz / f0) + 1):
        wave += rng.uniform(0.3, 1.0) / h * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t
                                    + rng.uniform(0, 2 * np.pi))
    wave *= envelope
    return 0.3 * wave / np.max(np.abs(wave))


def synthetic_rir(rate: int, rng: np.random.Generator, length_s: float = 0.25,
                  direct_delay_s: float = 0.002, decay_s: float = 0.08) -> np.ndarray:
    """Exponentially decaying noise tail behind a unit direct-path peak."""
    n = int(round(length_s * rate))
    rir = np.zeros(n)
    d = int(round(direct_delay_s * rate))
    rir[d] = 1.0
    tail = np.arange(n - d - 1) / rate
    rir[d + 1:] = 0.25 * rng.standard_normal(n - d - 1) * np.exp(-tail / decay_s)
    return rir


def make_synthetic_corpus(out_dir, num_items: int, rate: int = 48000,
                          duration_s: float = 2.0, seed: int = 0,
                          snr_range: tuple[float, float] = (-5.0, 15.0),
                          with_rir: bool = False) -> Manifest:
    """Write a desk-scale corpus of clean/noise (and optional RIR) WAVs
    plus a manifest of mixture specs."""
    from .audio_io import write_wav

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for i in range(num_items):
        clean = synthetic_voice(duration_s, rate, rng)
        noise = 0.1 * rng.standard_normal(int(duration_s * rate) * 2)
        clean_path = out_dir / f"clean_{i:04d}.wav"
        noise_path = out_dir / f"noise_{i:04d}.wav"
        write_wav(clean_path, clean, rate)
        write_wav(noise_path, noise, rate)
        rir_path = None
        if with_rir:
            rir_path = out_dir / f"rir_{i:04d}.wav"
            write_wav(rir_path, synthetic_rir(rate, rng), rate)
        records.append(MixtureSpec(
            clean_path=str(clean_path), noise_path=str(noise_path),
            snr_db=float(rng.uniform(*snr_range)), seed=seed * 100_000 + i,
            rir_path=str(rir_path) if rir_path else None))
    manifest = Manifest(records)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


@dataclass
class SpectralBatch:
    """One training batch of compressed spectra.

    Magnitudes are compressed; phases are raw.  All tensors [B, T, F].
    """
    noisy_mag: torch.Tensor
    noisy_phase: torch.Tensor
    target_dn_mag: torch.Tensor            # denoised-but-reverberant target
    target_clean_mag: torch.Tensor
    target_clean_real: torch.Tensor        # compressed-domain RI components
    target_clean_imag: torch.Tensor


def _spectral(wave: np.ndarray, cfg: FrontendConfig):
    spec = frontend.stft(wave, cfg)
    comp = frontend.compress_spectrogram(spec, cfg.compression_beta)
    return comp.magnitude, comp.phase, comp.values.real, comp.values.imag


def batch_iterator(manifest: Manifest, cfg: DmfConfig, fe: FrontendConfig,
                   batch_size: int | None = None, seed: int = 0,
                   early_ms: float | None = None, epochs: int | None = None,
                   dtype: torch.dtype = torch.float32):
    """Yield deterministic :class:`SpectralBatch` streams.

    ``fe`` selects the front-end (16 kHz pretraining vs 48 kHz full-band);
    clips are cropped to ``cfg.train.crop_seconds`` with per-item seeded
    offsets.  ``epochs=None`` streams forever.
    """
    if not manifest.records:
        raise DataError("empty manifest")
    bs = batch_size or cfg.train.batch_size
    crop = int(round(cfg.train.crop_seconds * fe.sample_rate_hz))
    early = cfg.train.early_ms if early_ms is None else early_ms

    pairs = []
    for rec in manifest.records:
        try:
            pair = synthesize_pair(rec, early_ms=early)
        except SkipItem:
            continue
        if pair.sample_rate != fe.sample_rate_hz:
            pair = TrainingPair(
                noisy=resample(pair.noisy, pair.sample_rate, fe.sample_rate_hz),
                target_denoised_reverberant=resample(
                    pair.target_denoised_reverberant, pair.sample_rate, fe.sample_rate_hz),
                target_clean=resample(pair.target_clean, pair.sample_rate,
                                      fe.sample_rate_hz),
                sample_rate=fe.sample_rate_hz, snr_db=pair.snr_db, seed=pair.seed)
        pairs.append(pair)
    if not pairs:
        raise DataError("no synthesizable items in manifest")

    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), bs):
            chunk = order[start:start + bs]
            mats = {k: [] for k in ("nm", "np_", "dm", "cm", "cr", "ci")}
            for idx in chunk:
                pair = pairs[idx]
                off_max = max(0, pair.noisy.size - crop)
                off = int(rng.integers(0, off_max + 1)) if off_max else 0
                sl = slice(off, off + crop)

                def padded(w):
                    seg = w[sl]
                    if seg.size < crop:
                        seg = np.pad(seg, (0, crop - seg.size))
                    return seg

                nm, np2, _, _ = _spectral(padded(pair.noisy), fe)
                dm, _, _, _ = _spectral(padded(pair.target_denoised_reverberant), fe)
                cm, _, cr, ci = _spectral(padded(pair.target_clean), fe)
                for k, v in zip(("nm", "np_", "dm", "cm", "cr", "ci"),
                                (nm, np2, dm, cm, cr, ci)):
                    mats[k].append(v)
            yield SpectralBatch(
                noisy_mag=torch.tensor(np.stack(mats["nm"]), dtype=dtype),
                noisy_phase=torch.tensor(np.stack(mats["np_"]), dtype=dtype),
                target_dn_mag=torch.tensor(np.stack(mats["dm"]), dtype=dtype),
                target_clean_mag=torch.tensor(np.stack(mats["cm"]), dtype=dtype),
                target_clean_real=torch.tensor(np.stack(mats["cr"]), dtype=dtype),
                target_clean_imag=torch.tensor(np.stack(mats["ci"]), dtype=dtype),
            )
        epoch += 1
