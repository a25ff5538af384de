"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting
``HECTA_PURE_PYTHON=1`` forces the numpy fallback. ``BACKEND`` names the
active one and is recorded in run manifests, since the two backends agree to
rounding but not bit-for-bit.
"""
import os

from . import _kernels_py

_ckernels = None
if os.environ.get("HECTA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None

if _ckernels is not None:
    BACKEND = "cython"
    conv2d_forward = _ckernels.conv2d_forward
    conv2d_backward = _ckernels.conv2d_backward
    maxpool2_forward = _ckernels.maxpool2_forward
    maxpool2_backward = _ckernels.maxpool2_backward
else:
    BACKEND = "numpy"
    conv2d_forward = _kernels_py.conv2d_forward
    conv2d_backward = _kernels_py.conv2d_backward
    maxpool2_forward = _kernels_py.maxpool2_forward
    maxpool2_backward = _kernels_py.maxpool2_backward


def available_backends():
    out = {"numpy": _kernels_py}
    if _ckernels is not None:
        out["cython"] = _ckernels
    return out
