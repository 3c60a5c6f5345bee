"""Hot numeric kernels with a numba and a pure-numpy implementation.

The backend is chosen once at import time from the ADVLAB_KERNELS
environment variable: "numba" (default when numba imports), "numpy"
(pure-numpy fallback), or "auto". Both backends implement identical
semantics; within a backend, results are deterministic on a given
machine. Matrix products always go through BLAS regardless of backend;
these kernels cover the gather/scatter and sliding-window work around
them.
"""

import os

from . import numpy_impl

_BACKEND_ENV = "ADVLAB_KERNELS"


def _select_backend() -> str:
    choice = os.environ.get(_BACKEND_ENV, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_BACKEND_ENV} must be one of auto|numba|numpy, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        from . import numba_impl  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


_backend_name = _select_backend()

if _backend_name == "numba":
    from . import numba_impl as _impl
else:
    _impl = numpy_impl


def backend_name() -> str:
    """Name of the active kernel backend ("numba" or "numpy")."""
    return _backend_name


im2col = _impl.im2col
col2im_add = _impl.col2im_add
maxpool2x2 = _impl.maxpool2x2
maxpool2x2_backward = _impl.maxpool2x2_backward
resize_pad = _impl.resize_pad
resize_pad_backward = _impl.resize_pad_backward
downscale_upscale = _impl.downscale_upscale
downscale_upscale_backward = _impl.downscale_upscale_backward
gaussian_blur = _impl.gaussian_blur
