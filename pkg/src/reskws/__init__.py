"""Residual and dilated CNNs for small-footprint keyword spotting, in numpy."""

__version__ = "0.1.0"

from .frontend import FrontendConfig, extract_mfcc, pad_or_clip, read_wav  # noqa: E402
from .models import VARIANTS, ArchSpec, build, footprint, receptive_field  # noqa: E402

__all__ = [
    "FrontendConfig",
    "extract_mfcc",
    "pad_or_clip",
    "read_wav",
    "VARIANTS",
    "ArchSpec",
    "build",
    "footprint",
    "receptive_field",
]
