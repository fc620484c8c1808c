"""Affine int8 quantization and integer kernels.

Convention: ``q = round(x / c - d)`` and ``x = c * (q + d)``, so real zero
sits at ``q = -d``. Rounding is half-to-even throughout (``np.rint``).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T

QMIN = -128
QMAX = 127
# smallest normal f32: scales are stored as f32, so anything below underflows
MIN_SCALE = float(np.finfo(np.float32).tiny)
INT32_MAX = 2**31 - 1
INT32_MIN = -(2**31)


@dataclass(frozen=True)
class QuantParams:
    """Scale and zero point, per tensor (axis None) or one pair per slice along ``axis``."""

    scale: np.ndarray
    zero_point: np.ndarray
    qmin: int = QMIN
    qmax: int = QMAX
    axis: Optional[int] = None

    def __post_init__(self):
        scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        zp = np.atleast_1d(np.asarray(self.zero_point))
        if not np.issubdtype(zp.dtype, np.integer):
            if not np.all(zp == np.round(zp)):
                raise ValueError(f"zero point must be integral, got {zp}")
        zp = zp.astype(np.int64)
        if scale.shape != zp.shape or scale.ndim != 1:
            raise ValueError("scale and zero_point must be matching 1-D arrays")
        if not (np.all(np.isfinite(scale)) and np.all(scale > 0)):
            raise ValueError(f"scale must be positive and finite, got {scale}")
        if self.qmin >= self.qmax:
            raise ValueError(f"qmin {self.qmin} must be below qmax {self.qmax}")
        if self.axis is None and scale.size != 1:
            raise ValueError("per-tensor params carry exactly one (scale, zero_point)")
        scale.setflags(write=False)
        zp.setflags(write=False)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "zero_point", zp)

    @classmethod
    def per_tensor(cls, scale, zero_point=0):
        return cls(np.array([scale]), np.array([zero_point]))

    @property
    def per_channel(self):
        return self.axis is not None

    @property
    def symmetric(self):
        return bool(np.all(self.zero_point == 0))

    def _broadcast(self, arr, ndim):
        if self.axis is None:
            return arr[0]
        shape = [1] * ndim
        shape[self.axis] = arr.size
        return arr.reshape(shape)

    def scale_for(self, ndim):
        return self._broadcast(self.scale, ndim)

    def zero_point_for(self, ndim):
        return self._broadcast(self.zero_point, ndim)


@dataclass(frozen=True)
class QuantizedTensor:
    values: np.ndarray
    params: QuantParams

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.size and (v.min() < self.params.qmin or v.max() > self.params.qmax):
            raise ValueError("quantized values outside [qmin, qmax]")
        if self.params.per_channel and v.shape[self.params.axis] != self.params.scale.size:
            raise ValueError(
                f"per-channel params have {self.params.scale.size} slices, "
                f"tensor axis {self.params.axis} has {v.shape[self.params.axis]}"
            )
        v = v.astype(np.int8)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def _check_finite(x):
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"non-finite value {x[idx]} at index {idx}")


def quantize(x, params):
    x = T.as_float(x)
    _check_finite(x)
    c = params.scale_for(x.ndim)
    d = params.zero_point_for(x.ndim)
    q = np.clip(np.rint(x / c - d), params.qmin, params.qmax)
    return QuantizedTensor(q.astype(np.int8), params)


def dequantize(q):
    v = q.values.astype(np.float64)
    p = q.params
    return p.scale_for(v.ndim) * (v + p.zero_point_for(v.ndim))


def fake_quant(x, params):
    return dequantize(quantize(x, params))


def params_from_range(alpha, beta, scheme="affine", bits=8):
    """Map a real interval [alpha, beta] onto the int8 grid."""
    if bits != 8:
        raise ValueError(f"only 8-bit quantization is supported, got {bits}")
    if not (np.isfinite(alpha) and np.isfinite(beta)):
        raise ValueError(f"non-finite range [{alpha}, {beta}]")
    if alpha > beta:
        raise ValueError(f"empty range: alpha {alpha} > beta {beta}")
    alpha, beta = float(alpha), float(beta)
    if scheme == "symmetric":
        m = max(abs(alpha), abs(beta))
        return QuantParams.per_tensor(max(m / QMAX, MIN_SCALE) if m > 0 else 1.0, 0)
    if scheme != "affine":
        raise ValueError(f"unknown scheme {scheme!r}")
    if alpha == beta:
        # constant tensor: represent it exactly on a zero-centred grid
        return QuantParams.per_tensor(max(abs(alpha) / QMAX, MIN_SCALE) if alpha != 0 else 1.0, 0)
    c = max((beta - alpha) / (QMAX - QMIN), MIN_SCALE)
    d = int(np.rint(alpha / c - QMIN))
    return QuantParams.per_tensor(c, d)


def compute_params(stats, scheme="affine", bits=8, observer=None):
    from .calibration import MINMAX, finalize

    alpha, beta = finalize(stats, observer or MINMAX)
    return params_from_range(alpha, beta, scheme, bits)


def weight_params(w):
    """Symmetric per-output-channel params (axis 0)."""
    w = T.as_float(w)
    _check_finite(w)
    m = np.abs(w.reshape(w.shape[0], -1)).max(axis=1)
    scale = np.where(m > 0, np.maximum(m / QMAX, MIN_SCALE), 1.0)
    return QuantParams(scale, np.zeros(w.shape[0], dtype=np.int64), axis=0)


def quantize_weight(w):
    return quantize(w, weight_params(w))


def _check_kernel_operands(x, w):
    if x.params.per_channel:
        raise ValueError("activation params must be per-tensor")
    if not w.params.symmetric:
        raise ValueError("weights must be quantized symmetrically (zero point 0)")
    if w.params.per_channel and w.params.axis != 0:
        raise ValueError("weight params must be per output channel (axis 0)")


def _checked_matmul(w_int, cols):
    acc = w_int.astype(np.int64) @ cols.astype(np.int64)
    if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
        raise OverflowError("int32 accumulator overflow")
    return acc


def _out_scale(x, w):
    c_w = w.params.scale if w.params.per_channel else np.full(w.shape[0], w.params.scale[0])
    return x.params.scale[0] * c_w


def qlinear(x, w, bias):
    """Integer linear: acc = sum (x_q + d_x) * w_q, rescaled by c_x * c_w per row."""
    _check_kernel_operands(x, w)
    if w.values.ndim != 2 or x.values.ndim != 1 or w.shape[1] != x.shape[0]:
        raise ValueError(f"qlinear dimension mismatch: x {x.shape}, w {w.shape}")
    shifted = x.values.astype(np.int64) + x.params.zero_point[0]
    acc = _checked_matmul(w.values, shifted)
    return _out_scale(x, w) * acc + T.as_float(bias)


def qconv1d(x, w, bias, dilation=1, padding="same"):
    """Integer conv1d; padded positions carry real zero, i.e. x_q = -d_x."""
    _check_kernel_operands(x, w)
    if w.values.ndim != 3 or x.values.ndim != 2:
        raise ValueError(f"qconv1d expects x [C, T] and w [C_out, C_in, K], got {x.shape}, {w.shape}")
    c_out, c_in, k = w.shape
    if x.shape[0] != c_in:
        raise ValueError(f"qconv1d channel axis mismatch: input has {x.shape[0]}, weight expects {c_in}")
    shifted = x.values.astype(np.int64) + x.params.zero_point[0]
    cols = T.im2col(shifted, k, dilation, padding, pad_value=0)
    acc = _checked_matmul(w.values.reshape(c_out, c_in * k), cols)
    return _out_scale(x, w)[:, None] * acc + T.as_float(bias)[:, None]
