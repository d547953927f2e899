"""Convolution kernel backend selection.

The hot loops of the model are the dilated 1-D convolutions. A compiled
Cython extension is used when it was built; otherwise a NumPy fallback with
identical semantics takes over. MVTFLOW_KERNELS=numpy|compiled forces a
backend (forcing "compiled" raises if the extension is missing).

Both backends operate on batched channel-major float32/float64 arrays and
apply "same" zero padding: the output has the input's length T, the total
pad is dilation*(K-1), split evenly with the extra sample on the right.
"""

import os
import warnings

import numpy as np

from . import numpy_ops

try:
    from . import _convext
except ImportError:
    _convext = None

_requested = os.environ.get("MVTFLOW_KERNELS", "auto")
if _requested not in ("auto", "numpy", "compiled"):
    raise ValueError(f"MVTFLOW_KERNELS must be auto, numpy or compiled, got {_requested!r}")
if _requested == "compiled" and _convext is None:
    raise ImportError("MVTFLOW_KERNELS=compiled but the compiled extension is not available")

BACKEND = "numpy" if (_requested == "numpy" or _convext is None) else "compiled"
HAVE_COMPILED = _convext is not None


def pad_amounts(kernel_size: int, dilation: int) -> tuple[int, int]:
    total = dilation * (kernel_size - 1)
    left = total // 2
    return left, total - left


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int,
                   backend: str | None = None) -> np.ndarray:
    """Dilated same-padded convolution of x (B, C_in, T) with w (C_out, C_in, K)."""
    t_len = x.shape[2]
    k = w.shape[2]
    if dilation * (k - 1) >= t_len:
        warnings.warn(
            f"conv1d: padding ({dilation * (k - 1)}) covers the whole input (T={t_len})",
            RuntimeWarning, stacklevel=2)
    xp = _padded(x, k, dilation)
    if (backend or BACKEND) == "compiled":
        return _convext.conv1d_forward(xp, np.ascontiguousarray(w),
                                       np.ascontiguousarray(b), dilation, t_len)
    return numpy_ops.conv1d_forward(xp, w, b, dilation, t_len)


def conv1d_backward(x: np.ndarray, w: np.ndarray, dilation: int, gy: np.ndarray,
                    need_input_grad: bool = True, backend: str | None = None,
                    ) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of conv1d_forward wrt input, weight and bias."""
    t_len = x.shape[2]
    k = w.shape[2]
    left, _ = pad_amounts(k, dilation)
    xp = _padded(x, k, dilation)
    gy = np.ascontiguousarray(gy)
    if (backend or BACKEND) == "compiled":
        gw, gb = _convext.conv1d_backward_weight(xp, gy, dilation, k)
        gx = None
        if need_input_grad:
            gxp = _convext.conv1d_backward_input(gy, np.ascontiguousarray(w),
                                                 dilation, xp.shape[2])
            gx = np.ascontiguousarray(gxp[:, :, left:left + t_len])
    else:
        gw, gb = numpy_ops.conv1d_backward_weight(xp, gy, dilation, k)
        gx = None
        if need_input_grad:
            gxp = numpy_ops.conv1d_backward_input(gy, w, dilation, xp.shape[2])
            gx = np.ascontiguousarray(gxp[:, :, left:left + t_len])
    return gx, gw, gb


def _padded(x: np.ndarray, k: int, dilation: int) -> np.ndarray:
    left, right = pad_amounts(k, dilation)
    if left == 0 and right == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (left, right)))
