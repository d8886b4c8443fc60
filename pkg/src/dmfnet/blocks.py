"""Differentiable building blocks.

Every block is strictly causal along the time axis: convolutions pad the
past only, and normalization uses cumulative statistics over frames
``<= t``, so perturbing a future frame cannot change earlier outputs.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig, FilterConfig, StcmConfig

_NORM_EPS = 1e-5


class CausalInstanceNorm2d(nn.Module):
    """Per-channel normalization over (frequency, frames <= t), affine.

    A causal stand-in for instance norm: frame t is normalized with the
    running statistics of everything up to and including t.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # [B, C, T, F]
        nfreq = x.shape[-1]
        csum = torch.cumsum(x.sum(dim=-1), dim=-1)
        csq = torch.cumsum(x.pow(2).sum(dim=-1), dim=-1)
        count = nfreq * torch.arange(1, x.shape[2] + 1, dtype=x.dtype, device=x.device)
        mean = csum / count
        var = (csq / count - mean.pow(2)).clamp_min(0.0)
        xhat = (x - mean.unsqueeze(-1)) / torch.sqrt(var + _NORM_EPS).unsqueeze(-1)
        return xhat * self.weight[:, None, None] + self.bias[:, None, None]


class CausalInstanceNorm1d(nn.Module):
    """1-D counterpart for temporal feature maps [B, C, T]."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        count = torch.arange(1, x.shape[2] + 1, dtype=x.dtype, device=x.device)
        mean = torch.cumsum(x, dim=-1) / count
        var = (torch.cumsum(x.pow(2), dim=-1) / count - mean.pow(2)).clamp_min(0.0)
        xhat = (x - mean) / torch.sqrt(var + _NORM_EPS)
        return xhat * self.weight[:, None] + self.bias[:, None]


class EncoderBlock(nn.Module):
    """Conv2d + causal norm + PReLU; stride (1, 2) halves the frequency axis."""

    def __init__(self, in_ch: int, out_ch: int, kernel_freq: int, kernel_time: int = 2):
        super().__init__()
        self.kernel_time = kernel_time
        self.conv = nn.Conv2d(in_ch, out_ch, (kernel_time, kernel_freq), stride=(1, 2))
        self.norm = CausalInstanceNorm2d(out_ch)
        self.act = nn.PReLU(out_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.pad(x, (0, 0, self.kernel_time - 1, 0))  # past-only time padding
        return self.act(self.norm(self.conv(x)))


class Encoder(nn.Module):
    """Stack of downsampling blocks; returns (latent, skips outermost-first)."""

    def __init__(self, cfg: EncoderConfig, in_channels: int):
        super().__init__()
        self.cfg = cfg
        blocks = []
        ch_in = in_channels
        for b in range(cfg.num_blocks):
            kf = cfg.kernel_freq_first if b == 0 else cfg.kernel_freq
            blocks.append(EncoderBlock(ch_in, cfg.channels, kf, cfg.kernel_time))
            ch_in = cfg.channels
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if x.shape[-1] != self.cfg.in_bins:
            raise ValueError(f"expected {self.cfg.in_bins} bins, got {x.shape[-1]}")
        skips = []
        for block in self.blocks:
            x = block(x)
            skips.append(x)
        return x, skips


class DecoderBlock(nn.Module):
    """Transposed conv restoring the frequency size of the matching encoder block.

    The transposed time kernel of 2 yields T+1 frames; the trailing frame
    (which depends only on the last input frame) is dropped to keep T.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel_freq: int,
                 kernel_time: int = 2, final: bool = False):
        super().__init__()
        self.deconv = nn.ConvTranspose2d(in_ch, out_ch, (kernel_time, kernel_freq),
                                         stride=(1, 2))
        self.kernel_time = kernel_time
        self.final = final
        if not final:
            self.norm = CausalInstanceNorm2d(out_ch)
            self.act = nn.PReLU(out_ch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        frames = x.shape[2]
        x = self.deconv(x)[:, :, :frames]
        if self.final:
            return x
        return self.act(self.norm(x))


class Decoder(nn.Module):
    """Mirror of :class:`Encoder`; consumes skips by channel concatenation.

    ``out_channels`` is the width of the last block.  With
    ``linear_head=True`` the last block has no norm/activation (raw
    outputs, e.g. filter taps or complex residuals); otherwise it keeps
    norm+PReLU and emits ``cfg.channels`` feature maps for a mask head.
    """

    def __init__(self, cfg: EncoderConfig, out_channels: int, linear_head: bool = True):
        super().__init__()
        self.cfg = cfg
        blocks = []
        for b in reversed(range(cfg.num_blocks)):
            kf = cfg.kernel_freq_first if b == 0 else cfg.kernel_freq
            final = b == 0
            out_ch = out_channels if final else cfg.channels
            blocks.append(DecoderBlock(2 * cfg.channels, out_ch, kf,
                                       cfg.kernel_time, final=final and linear_head))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, latent: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        if len(skips) != len(self.blocks):
            raise ValueError("skip count does not match decoder depth")
        x = latent
        for block, skip in zip(self.blocks, reversed(skips)):
            if skip.shape[2] != x.shape[2] or skip.shape[3] != x.shape[3]:
                raise ValueError("skip shape does not match decoder state")
            x = block(torch.cat([x, skip], dim=1))
        return x


class Stcm(nn.Module):
    """Squeezed temporal convolutional module with residual connection.

    Pointwise squeeze to the bottleneck width, gated causal dilated
    temporal convolution, pointwise expansion back, plus identity.
    """

    def __init__(self, channels: int, cfg: StcmConfig, dilation: int):
        super().__init__()
        b = cfg.bottleneck_channels
        self.pad = dilation * (cfg.temporal_kernel - 1)
        self.pw_in = nn.Conv1d(channels, b, 1)
        self.norm_in = CausalInstanceNorm1d(b)
        self.act_in = nn.PReLU(b)
        self.dconv = nn.Conv1d(b, b, cfg.temporal_kernel, dilation=dilation)
        self.gated = cfg.gated
        if cfg.gated:
            self.gconv = nn.Conv1d(b, b, cfg.temporal_kernel, dilation=dilation)
        self.norm_out = CausalInstanceNorm1d(b)
        self.act_out = nn.PReLU(b)
        self.pw_out = nn.Conv1d(b, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # [B, C, T]
        h = self.act_in(self.norm_in(self.pw_in(x)))
        hp = F.pad(h, (self.pad, 0))
        y = self.dconv(hp)
        if self.gated:
            y = y * torch.sigmoid(self.gconv(hp))
        y = self.pw_out(self.act_out(self.norm_out(y)))
        return x + y


class StcmStack(nn.Module):
    """Groups of S-TCMs with exponentially increasing dilation."""

    def __init__(self, channels: int, cfg: StcmConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            Stcm(channels, cfg, d)
            for _ in range(cfg.groups)
            for d in cfg.dilations
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class DualPathMaskHead(nn.Module):
    """Bounded gain head: conv, tanh-path x sigmoid-path gate, conv, sigmoid."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv_in = nn.Conv2d(channels, 2 * channels, 1)
        self.conv_out = nn.Conv2d(channels, 1, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:  # [B, C, T, F]
        a, b = torch.chunk(self.conv_in(features), 2, dim=1)
        gated = torch.tanh(a) * torch.sigmoid(b)
        return torch.sigmoid(self.conv_out(gated)).squeeze(1)  # [B, T, F] in (0,1)


def apply_multiframe_filter(masks: torch.Tensor, mag: torch.Tensor,
                            cfg: FilterConfig) -> torch.Tensor:
    """Per-bin filtering over neighboring frames.

    ``out[l, f] = sum_tau masks[tau, l, f] * mag[l - off(tau), f]`` with
    frames before index 0 treated as zeros.  Offsets come from
    ``cfg.offsets()`` and are all >= 0 (causal).
    """
    if masks.dim() != 4 or mag.dim() != 3:
        raise ValueError("expected masks [B, k, T, F] and mag [B, T, F]")
    if masks.shape[1] != cfg.taps:
        raise ValueError(f"mask stack has {masks.shape[1]} taps, config says {cfg.taps}")
    if masks.shape[0] != mag.shape[0] or masks.shape[2:] != mag.shape[1:]:
        raise ValueError("mask and magnitude shapes disagree")

    out = torch.zeros_like(mag)
    frames = mag.shape[1]
    for i, off in enumerate(cfg.offsets()):
        if off == 0:
            shifted = mag
        elif off >= frames:
            continue
        else:
            shifted = F.pad(mag[:, : frames - off], (0, 0, off, 0))
        out = out + masks[:, i] * shifted
    return out
