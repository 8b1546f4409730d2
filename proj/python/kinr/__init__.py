"""Image-guided continuous k-space recovery for accelerated MRI.

Complex grids are 2-D ``complex128`` arrays, magnitude images 2-D ``float64`` arrays and
masks 2-D ``uint8`` arrays of zeros and ones.
"""

from ._core import (
    ConfigError,
    DataError,
    DomainError,
    Error,
    FormatVersionError,
    IncompatibleCheckpoint,
    IoError,
    Model,
    NumericalError,
    ShapeError,
    apply_mask,
    fft2c,
    ifft2c,
    load_config,
    load_sample,
    magnitude,
    make_mask,
    nmse,
    psnr,
    save_sample,
    ssim,
    stage_for_epoch,
    synth_phantom,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
