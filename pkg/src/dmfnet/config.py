"""Configuration objects shared by every module.

All hyperparameters live here so a single YAML file can describe a full
run.  Two presets are shipped: ``paper`` (default widths) and ``tiny``
(desk-scale widths for smoke tests).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml


class ConfigError(ValueError):
    """Raised when a configuration violates an invariant."""


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 48000
    win_len_samples: int = 960
    hop_samples: int = 480
    fft_size: int = 960
    window: str = "hann"
    compression_beta: float = 0.5

    def __post_init__(self):
        if self.hop_samples * 2 != self.win_len_samples:
            raise ConfigError("hop must be half the window length")
        if self.fft_size < self.win_len_samples:
            raise ConfigError("fft_size must be >= window length")
        if self.window != "hann":
            raise ConfigError(f"unsupported window {self.window!r}")
        if not 0.0 < self.compression_beta <= 1.0:
            raise ConfigError("compression_beta must be in (0, 1]")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def fullband(cls, beta: float = 0.5) -> "FrontendConfig":
        return cls(48000, 960, 480, 960, "hann", beta)

    @classmethod
    def wideband(cls, beta: float = 0.5) -> "FrontendConfig":
        """16 kHz front-end used for low-band pretraining (161 bins)."""
        return cls(16000, 320, 160, 320, "hann", beta)


@dataclass(frozen=True)
class BandLayout:
    """Contiguous low/mid/high bin slices with shared boundary bins.

    Ranges are half-open ``[start, stop)``.  Adjacent bands share
    ``overlap`` bins; fusion averages the shared bins.
    """
    low: tuple[int, int] = (0, 161)
    mid: tuple[int, int] = (160, 321)
    high: tuple[int, int] = (320, 481)
    overlap: int = 1
    overlap_policy: str = "average"

    def __post_init__(self):
        if self.overlap_policy != "average":
            raise ConfigError(f"unsupported overlap policy {self.overlap_policy!r}")
        if self.low[0] != 0:
            raise ConfigError("low band must start at bin 0")
        for name, (a, b) in (("low", self.low), ("mid", self.mid), ("high", self.high)):
            if b <= a:
                raise ConfigError(f"{name} band range is empty")
        if self.low[1] - self.mid[0] != self.overlap or self.mid[1] - self.high[0] != self.overlap:
            raise ConfigError("adjacent bands must overlap by exactly `overlap` bins")

    @property
    def num_bins(self) -> int:
        return self.high[1]

    def band_sizes(self) -> tuple[int, int, int]:
        return (self.low[1] - self.low[0],
                self.mid[1] - self.mid[0],
                self.high[1] - self.high[0])

    @classmethod
    def default_481(cls) -> "BandLayout":
        """Three 161-bin bands over 481 bins, boundaries at 8 and 16 kHz."""
        return cls()


@dataclass(frozen=True)
class EncoderConfig:
    num_blocks: int = 5
    channels: int = 64
    kernel_time: int = 2
    kernel_freq_first: int = 5
    kernel_freq: int = 3
    stride_freq: int = 2
    in_bins: int = 161
    norm: str = "causal_instance"
    activation: str = "prelu"

    def freq_sizes(self) -> list[int]:
        """Per-block frequency sizes, input first (no frequency padding)."""
        sizes = [self.in_bins]
        for b in range(self.num_blocks):
            k = self.kernel_freq_first if b == 0 else self.kernel_freq
            sizes.append((sizes[-1] - k) // self.stride_freq + 1)
        return sizes


@dataclass(frozen=True)
class StcmConfig:
    groups: int = 3
    blocks_per_group: int = 6
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    bottleneck_channels: int = 64
    temporal_kernel: int = 3
    gated: bool = True
    causal: bool = True

    def __post_init__(self):
        if len(self.dilations) != self.blocks_per_group:
            raise ConfigError("dilations length must equal blocks_per_group")
        for a, b in zip(self.dilations, self.dilations[1:]):
            if b != 2 * a:
                raise ConfigError("dilations must double each block")

    def receptive_field(self) -> int:
        """Temporal receptive field of the full stack, in frames."""
        per_group = sum(d * (self.temporal_kernel - 1) for d in self.dilations)
        return self.groups * per_group + 1


@dataclass(frozen=True)
class FilterConfig:
    taps: int = 5
    include_current: bool = True  # taps 0..k-1; False = strictly past 1..k

    def offsets(self) -> list[int]:
        if self.include_current:
            return list(range(self.taps))
        return list(range(1, self.taps + 1))


@dataclass(frozen=True)
class LossConfig:
    mu: float = 0.5
    alpha: float = 0.5
    reduction: str = "mean"

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0 or not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("mu and alpha must lie in [0, 1]")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"unsupported reduction {self.reduction!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr_pretrain: float = 1e-3
    lr_full: float = 5e-4

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError("Adam betas must lie in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    crop_seconds: float = 3.0
    max_steps_per_stage: int = 5000
    validate_every: int = 100
    patience: int = 5
    grad_clip_norm: float = 5.0
    master_seed: int = 0
    early_ms: float = 50.0


@dataclass(frozen=True)
class DmfConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig.fullband)
    frontend_lf: FrontendConfig = field(default_factory=FrontendConfig.wideband)
    bands: BandLayout = field(default_factory=BandLayout.default_481)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    stcm: StcmConfig = field(default_factory=StcmConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    use_sr_net: bool = True
    preset: str = "paper"

    def __post_init__(self):
        if self.bands.num_bins != self.frontend.num_bins:
            raise ConfigError("band layout does not cover the front-end bins")
        sizes = self.bands.band_sizes()
        if any(s != self.encoder.in_bins for s in sizes):
            raise ConfigError("encoder in_bins must equal every band size")
        if self.frontend_lf.num_bins != self.encoder.in_bins:
            raise ConfigError("16 kHz front-end bins must match the band size")

    # -- presets ---------------------------------------------------------
    @classmethod
    def paper(cls) -> "DmfConfig":
        return cls()

    @classmethod
    def tiny(cls) -> "DmfConfig":
        """Desk-scale preset: 16 channels, one TCM group, batch 4."""
        return cls(
            encoder=EncoderConfig(channels=16),
            stcm=StcmConfig(groups=1, bottleneck_channels=16),
            train=TrainConfig(batch_size=4, crop_seconds=2.0,
                              max_steps_per_stage=200, validate_every=50),
            preset="tiny",
        )

    @classmethod
    def preset_by_name(cls, name: str) -> "DmfConfig":
        try:
            return {"paper": cls.paper, "tiny": cls.tiny}[name]()
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}") from None

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v

        return plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "DmfConfig":
        def build(tp, val):
            fields = {f.name: f for f in dataclasses.fields(tp)}
            kwargs = {}
            for k, v in val.items():
                if k not in fields:
                    raise ConfigError(f"unknown field {k!r} for {tp.__name__}")
                ft = fields[k].type
                if isinstance(v, dict) and ft in _NESTED:
                    v = build(_NESTED[ft], v)
                elif isinstance(v, list):
                    v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
                kwargs[k] = v
            return tp(**kwargs)

        return build(cls, d)

    def save_yaml(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def load_yaml(cls, path) -> "DmfConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_NESTED = {
    "FrontendConfig": FrontendConfig,
    "BandLayout": BandLayout,
    "EncoderConfig": EncoderConfig,
    "StcmConfig": StcmConfig,
    "FilterConfig": FilterConfig,
    "LossConfig": LossConfig,
    "OptimizerConfig": OptimizerConfig,
    "TrainConfig": TrainConfig,
}
