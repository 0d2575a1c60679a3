"""Python bindings for the qscraft C++ core."""

import torch  # noqa: F401  loads libtorch before the extension

from ._errors import QscraftError
from ._qscraft import (
    animate,
    animate_files,
    config_hash,
    default_config,
    evaluate,
    make_data,
    nearest_indices,
    patchwork_indices,
    plot_histograms,
    psnr,
    train,
)

__all__ = [
    "QscraftError",
    "animate",
    "animate_files",
    "config_hash",
    "default_config",
    "evaluate",
    "make_data",
    "nearest_indices",
    "patchwork_indices",
    "plot_histograms",
    "psnr",
    "train",
]
