"""Kernel backend selection.

The compiled Cython extension is preferred when it was built; otherwise
the vectorized numpy fallback is used. Set PERCEPTMETRIC_KERNELS to
"numpy" or "compiled" to force one (forcing an unbuilt backend raises).

Both backends expose the same four functions with identical semantics:
conv1d_forward, conv1d_backward, maxpool1d_forward, maxpool1d_backward.
"""

import os

from ..errors import ConfigurationError
from . import numpy_backend


def _load_compiled():
    try:
        from . import _ckernels
        return _ckernels
    except ImportError:
        return None


def get_backend(name):
    """Return a backend module by name ("numpy" or "compiled")."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        mod = _load_compiled()
        if mod is None:
            raise ConfigurationError(
                "compiled kernels requested but the extension is not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            )
        return mod
    raise ConfigurationError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["numpy"]
    if _load_compiled() is not None:
        names.append("compiled")
    return names


_forced = os.environ.get("PERCEPTMETRIC_KERNELS", "").strip().lower()
if _forced:
    _active = get_backend(_forced)
else:
    _active = _load_compiled() or numpy_backend

BACKEND = _active.NAME
conv1d_forward = _active.conv1d_forward
conv1d_backward = _active.conv1d_backward
maxpool1d_forward = _active.maxpool1d_forward
maxpool1d_backward = _active.maxpool1d_backward
conv_out_len = numpy_backend.conv_out_len
