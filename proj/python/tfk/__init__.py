from ._core import (
    TfkError,
    __version__,
    concentration_to_mask,
    dice,
    fk_step,
    make_phantom,
    ms_ssim,
    psnr,
    read_volume,
    run_cli,
    simulate,
    write_volume,
)

__all__ = [
    "TfkError",
    "__version__",
    "concentration_to_mask",
    "dice",
    "fk_step",
    "make_phantom",
    "ms_ssim",
    "psnr",
    "read_volume",
    "run_cli",
    "simulate",
    "write_volume",
]
