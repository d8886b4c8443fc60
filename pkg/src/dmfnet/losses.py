"""Training objectives.

All losses are mean-squared Frobenius errors in the compressed-magnitude
domain (matching the network outputs), reduced to a scalar by the mean
over every element unless ``LossConfig.reduction`` says otherwise.
"""
from __future__ import annotations

import torch

from .config import LossConfig


def _reduce(x: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    return x.sum() if cfg.reduction == "sum" else x.mean()


def _check(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_dn(est_mag: torch.Tensor, target_mag: torch.Tensor,
            cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Denoising magnitude loss against the reverberation-kept target."""
    _check(est_mag, target_mag)
    return _reduce((est_mag - target_mag) ** 2, cfg)


def loss_dr(est_mag: torch.Tensor, target_mag: torch.Tensor,
            cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Dereverberation magnitude loss against the final clean target."""
    return loss_dn(est_mag, target_mag, cfg)


def loss_sr(est_real: torch.Tensor, est_imag: torch.Tensor,
            target_real: torch.Tensor, target_imag: torch.Tensor,
            cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Refinement loss: mu * (RI MSE) + (1 - mu) * magnitude MSE."""
    _check(est_real, target_real)
    _check(est_imag, target_imag)
    ri = _reduce((est_real - target_real) ** 2, cfg) \
        + _reduce((est_imag - target_imag) ** 2, cfg)
    est_mag = torch.sqrt(est_real**2 + est_imag**2 + 1e-12)
    tgt_mag = torch.sqrt(target_real**2 + target_imag**2 + 1e-12)
    mag = _reduce((est_mag - tgt_mag) ** 2, cfg)
    return cfg.mu * ri + (1.0 - cfg.mu) * mag


def loss_full(est_mid: torch.Tensor, est_high: torch.Tensor,
              tgt_mid: torch.Tensor, tgt_high: torch.Tensor,
              cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Joint mid/high loss: alpha * L_mid + (1 - alpha) * L_high."""
    mid = loss_dn(est_mid, tgt_mid, cfg)
    high = loss_dn(est_high, tgt_high, cfg)
    return cfg.alpha * mid + (1.0 - cfg.alpha) * high
