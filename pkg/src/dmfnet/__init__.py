"""Multi-band fusion speech enhancement for full-band (48 kHz) audio."""

from .config import (BandLayout, DmfConfig, EncoderConfig, FilterConfig,
                     FrontendConfig, LossConfig, OptimizerConfig, StcmConfig,
                     TrainConfig)
from .frontend import (ComplexSpectrogram, compress_magnitude,
                       decompress_magnitude, fuse_bands, istft, split_bands,
                       stft)
from .model import DmfNet, LfOutputs, full_forward, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BandLayout", "ComplexSpectrogram", "DmfConfig", "DmfNet", "EncoderConfig",
    "FilterConfig", "FrontendConfig", "LfOutputs", "LossConfig",
    "OptimizerConfig", "StcmConfig", "TrainConfig", "compress_magnitude",
    "decompress_magnitude", "full_forward", "fuse_bands", "istft",
    "load_checkpoint", "save_checkpoint", "split_bands", "stft",
]
