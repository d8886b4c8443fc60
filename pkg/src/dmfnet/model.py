"""Sub-network assembly and the full waveform-to-waveform forward pass.

Five sub-networks share the encoder/TCM/decoder topology:

* ``dn`` / ``dr`` - magnitude multi-frame-filter networks for denoising
  and dereverberation of the low band,
* ``sr`` - complex residual refinement of the low band,
* ``mf`` / ``hf`` - bounded-gain masking networks for the middle and
  high bands.

All spectral tensors are in the compressed-magnitude domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from . import frontend
from .blocks import Decoder, DualPathMaskHead, Encoder, StcmStack, apply_multiframe_filter
from .config import ConfigError, DmfConfig
from .frontend import ComplexSpectrogram

CHECKPOINT_VERSION = 1

SUBNET_NAMES = ("dn", "dr", "sr", "mf", "hf")
LF_SUBNETS = ("dn", "dr", "sr")


class FilterNet(nn.Module):
    """DN/DR-style network: emits multi-frame filter taps for a magnitude."""

    def __init__(self, cfg: DmfConfig, in_channels: int):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder, in_channels)
        self.tcm = StcmStack(self._tcm_channels(cfg), cfg.stcm)
        self.decoder = Decoder(cfg.encoder, out_channels=cfg.filter.taps)

    @staticmethod
    def _tcm_channels(cfg: DmfConfig) -> int:
        return cfg.encoder.channels * cfg.encoder.freq_sizes()[-1]

    def forward(self, x: torch.Tensor, filter_target: torch.Tensor) -> torch.Tensor:
        """x: [B, C_in, T, F] inputs; filter_target: [B, T, F] magnitude."""
        latent, skips = self.encoder(x)
        b, c, t, f = latent.shape
        h = self.tcm(latent.permute(0, 1, 3, 2).reshape(b, c * f, t))
        latent = h.reshape(b, c, f, t).permute(0, 1, 3, 2)
        masks = self.decoder(latent, skips)  # [B, k, T, F]
        filtered = apply_multiframe_filter(masks, filter_target, self.cfg.filter)
        return torch.clamp(filtered, min=0.0)


class RefineNet(nn.Module):
    """SR-style network: maps stacked RI channels to an RI residual pair."""

    def __init__(self, cfg: DmfConfig):
        super().__init__()
        self.encoder = Encoder(cfg.encoder, in_channels=6)
        self.tcm = StcmStack(FilterNet._tcm_channels(cfg), cfg.stcm)
        self.decoder_real = Decoder(cfg.encoder, out_channels=1)
        self.decoder_imag = Decoder(cfg.encoder, out_channels=1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        latent, skips = self.encoder(x)
        b, c, t, f = latent.shape
        h = self.tcm(latent.permute(0, 1, 3, 2).reshape(b, c * f, t))
        latent = h.reshape(b, c, f, t).permute(0, 1, 3, 2)
        real = self.decoder_real(latent, skips).squeeze(1)
        imag = self.decoder_imag(latent, skips).squeeze(1)
        return real, imag


class MaskNet(nn.Module):
    """MF/HF-style network: bounded elementwise gain on the noisy magnitude."""

    def __init__(self, cfg: DmfConfig, in_channels: int):
        super().__init__()
        self.encoder = Encoder(cfg.encoder, in_channels)
        self.tcm = StcmStack(FilterNet._tcm_channels(cfg), cfg.stcm)
        self.decoder = Decoder(cfg.encoder, out_channels=cfg.encoder.channels,
                               linear_head=False)
        self.mask_head = DualPathMaskHead(cfg.encoder.channels)

    def gain(self, x: torch.Tensor) -> torch.Tensor:
        latent, skips = self.encoder(x)
        b, c, t, f = latent.shape
        h = self.tcm(latent.permute(0, 1, 3, 2).reshape(b, c * f, t))
        latent = h.reshape(b, c, f, t).permute(0, 1, 3, 2)
        return self.mask_head(self.decoder(latent, skips))

    def forward(self, x: torch.Tensor, noisy_mag: torch.Tensor) -> torch.Tensor:
        return noisy_mag * self.gain(x)


@dataclass
class LfOutputs:
    """Low-band stage outputs (compressed-magnitude domain)."""
    dn_mag: torch.Tensor          # [B, T, F]
    dr_mag: torch.Tensor          # [B, T, F]
    refined_real: torch.Tensor    # [B, T, F]
    refined_imag: torch.Tensor    # [B, T, F]


class DmfNet(nn.Module):
    """The full three-band model with staged freezing support."""

    def __init__(self, cfg: DmfConfig):
        super().__init__()
        self.cfg = cfg
        self.dn = FilterNet(cfg, in_channels=1)
        self.dr = FilterNet(cfg, in_channels=2)
        self.sr = RefineNet(cfg) if cfg.use_sr_net else None
        self.mf = MaskNet(cfg, in_channels=2)
        self.hf = MaskNet(cfg, in_channels=3)

    # -- sub-network access ---------------------------------------------
    def subnet(self, name: str) -> nn.Module:
        if name not in SUBNET_NAMES:
            raise KeyError(f"unknown sub-network {name!r}")
        net = getattr(self, name)
        if net is None:
            raise KeyError(f"sub-network {name!r} is disabled in this config")
        return net

    def active_subnets(self) -> list[str]:
        return [n for n in SUBNET_NAMES if getattr(self, n) is not None]

    def freeze(self, names: list[str] | tuple[str, ...]) -> None:
        """Exclude the named sub-networks ('lf' expands to dn/dr/sr) from updates."""
        for name in _expand(names, self):
            for p in self.subnet(name).parameters():
                p.requires_grad_(False)

    def unfreeze(self, names: list[str] | tuple[str, ...]) -> None:
        for name in _expand(names, self):
            for p in self.subnet(name).parameters():
                p.requires_grad_(True)

    def frozen_subnets(self) -> list[str]:
        out = []
        for name in self.active_subnets():
            ps = list(self.subnet(name).parameters())
            if ps and all(not p.requires_grad for p in ps):
                out.append(name)
        return out

    def count_parameters(self) -> dict[str, int]:
        counts = {name: sum(p.numel() for p in self.subnet(name).parameters())
                  for name in self.active_subnets()}
        counts["total"] = sum(counts.values())
        return counts

    # -- forward passes --------------------------------------------------
    def lf_forward(self, noisy_mag: torch.Tensor, noisy_phase: torch.Tensor) -> LfOutputs:
        """Low-band chain over compressed magnitude + noisy phase [B, T, F]."""
        if noisy_mag.shape[-1] != self.cfg.encoder.in_bins:
            raise ValueError(f"expected {self.cfg.encoder.in_bins} bins, "
                             f"got {noisy_mag.shape[-1]}")
        dn_mag = self.dn(noisy_mag.unsqueeze(1), noisy_mag)
        dr_in = torch.stack([dn_mag, noisy_mag], dim=1)
        dr_mag = self.dr(dr_in, dn_mag)

        cos, sin = torch.cos(noisy_phase), torch.sin(noisy_phase)
        dr_real, dr_imag = dr_mag * cos, dr_mag * sin
        if self.sr is None:
            return LfOutputs(dn_mag, dr_mag, dr_real, dr_imag)

        sr_in = torch.stack([dn_mag * cos, dn_mag * sin,
                             dr_real, dr_imag,
                             noisy_mag * cos, noisy_mag * sin], dim=1)
        res_real, res_imag = self.sr(sr_in)
        return LfOutputs(dn_mag, dr_mag, dr_real + res_real, dr_imag + res_imag)

    def mf_forward(self, noisy_mid_mag: torch.Tensor, lf_mag: torch.Tensor) -> torch.Tensor:
        x = torch.stack([noisy_mid_mag, lf_mag], dim=1)
        return self.mf(x, noisy_mid_mag)

    def hf_forward(self, noisy_high_mag: torch.Tensor, lf_mag: torch.Tensor,
                   mf_mag: torch.Tensor) -> torch.Tensor:
        x = torch.stack([noisy_high_mag, lf_mag, mf_mag], dim=1)
        return self.hf(x, noisy_high_mag)


def _expand(names, model: DmfNet) -> list[str]:
    out = []
    for n in names:
        if n == "lf":
            out.extend(s for s in LF_SUBNETS if getattr(model, s) is not None)
        else:
            out.append(n)
    return out


@dataclass
class EnhanceDetails:
    """Band-level intermediates of a full forward pass (compressed domain)."""
    lf: LfOutputs
    mid_mag: np.ndarray
    high_mag: np.ndarray
    mid_phase: np.ndarray   # the noisy mid-band phase array, passed through
    high_phase: np.ndarray  # the noisy high-band phase array, passed through


def lf_frontend_gain(cfg: DmfConfig) -> float:
    """Compressed-domain gain aligning the 48 kHz low band with the 16 kHz
    front-end the low-band chain was pretrained on.

    A Hann window of length N sums to N/2, so the same sinusoid comes out
    of the long-window STFT (win / win_lf) times larger; compression turns
    that into a beta power.
    """
    ratio = cfg.frontend_lf.win_len_samples / cfg.frontend.win_len_samples
    return ratio ** cfg.frontend.compression_beta


def run_lf_on_fullband(model: DmfNet, low_mag: torch.Tensor,
                       low_phase: torch.Tensor, cfg: DmfConfig) -> LfOutputs:
    """Low-band chain on a 48 kHz low band, rescaled through the 16 kHz
    magnitude domain it was trained in."""
    g = lf_frontend_gain(cfg)
    lf = model.lf_forward(low_mag * g, low_phase)
    return LfOutputs(lf.dn_mag / g, lf.dr_mag / g,
                     lf.refined_real / g, lf.refined_imag / g)


def full_forward(noisy_waveform: np.ndarray, model: DmfNet, cfg: DmfConfig,
                 return_details: bool = False):
    """Waveform in, enhanced waveform out (48 kHz mono).

    stft -> compress -> split -> low/mid/high networks -> fuse ->
    decompress -> istft, trimmed to the input length.
    """
    if cfg.frontend.sample_rate_hz != 48000:
        raise ConfigError("full-band forward requires a 48 kHz front-end")
    wave = np.asarray(noisy_waveform, dtype=np.float64)
    # one trailing hop of zeros keeps every output sample under full
    # window coverage, so modified (OLA-inconsistent) spectra never get
    # divided by the tapering squared-window tail
    padded = np.concatenate([wave, np.zeros(cfg.frontend.hop_samples)])
    spec = frontend.stft(padded, cfg.frontend)
    beta = cfg.frontend.compression_beta
    comp = frontend.compress_spectrogram(spec, beta)
    low, mid, high = frontend.split_bands(comp, cfg.bands)

    dev = next(model.parameters()).device
    dt = next(model.parameters()).dtype

    def mag_phase(band):
        m = torch.as_tensor(band.magnitude, dtype=dt, device=dev).unsqueeze(0)
        p = torch.as_tensor(band.phase, dtype=dt, device=dev).unsqueeze(0)
        return m, p

    was_training = model.training
    model.eval()
    with torch.no_grad():
        low_mag, low_phase = mag_phase(low)
        mid_mag, mid_phase = mag_phase(mid)
        high_mag, high_phase = mag_phase(high)

        lf = run_lf_on_fullband(model, low_mag, low_phase, cfg)
        lf_mag = torch.sqrt(lf.refined_real**2 + lf.refined_imag**2)
        est_mid = model.mf_forward(mid_mag, lf_mag)
        est_high = model.hf_forward(high_mag, lf_mag, est_mid)
    if was_training:
        model.train()

    def npy(t):
        return t.squeeze(0).double().cpu().numpy()

    low_est = ComplexSpectrogram(npy(lf.refined_real) + 1j * npy(lf.refined_imag))
    # mid/high phases are pure passthrough; keep the original arrays bitwise
    mid_phase_np, high_phase_np = mid.phase, high.phase
    mid_est = ComplexSpectrogram.from_polar(npy(est_mid), mid_phase_np)
    high_est = ComplexSpectrogram.from_polar(npy(est_high), high_phase_np)

    fused = frontend.fuse_bands(low_est, mid_est, high_est, cfg.bands)
    out_spec = frontend.decompress_spectrogram(fused, beta)
    enhanced = frontend.istft(out_spec, cfg.frontend, length=wave.size)
    if not return_details:
        return enhanced
    details = EnhanceDetails(lf=lf, mid_mag=npy(est_mid), high_mag=npy(est_high),
                             mid_phase=mid_phase_np, high_phase=high_phase_np)
    return enhanced, details


# -- checkpoints ---------------------------------------------------------

class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be loaded against this config."""


def save_checkpoint(path, model: DmfNet, extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.content_hash(),
        "state": {name: model.subnet(name).state_dict()
                  for name in model.active_subnets()},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path, cfg: DmfConfig | None = None) -> tuple[DmfNet, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')}")
    stored_cfg = DmfConfig.from_dict(payload["config"])
    if cfg is not None and cfg.content_hash() != payload["config_hash"]:
        raise CheckpointError("checkpoint config hash does not match the requested config")
    model = DmfNet(stored_cfg)
    for name, state in payload["state"].items():
        model.subnet(name).load_state_dict(state)
    return model, payload.get("extra", {})
