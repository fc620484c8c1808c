"""Float kernels for the reference speaker model.

Tensors are plain numpy arrays laid out channel-major, ``[C, T]`` for
sequences. Float math runs in float64 so that the integer kernels can be
checked against it tightly; weights are stored as float32 on disk.
"""
import numpy as np

POOL_EPS = 1e-8


def as_float(x):
    return np.asarray(x, dtype=np.float64)


def _check_nan(x):
    if np.isnan(x).any():
        raise ValueError("NaN in kernel input")


def conv1d(x, weight, bias, dilation=1, padding="same"):
    """Dilated 1-D cross-correlation.

    x: [C_in, T], weight: [C_out, C_in, K], bias: [C_out]. ``same`` zero-pads
    so the output keeps length T (K must be odd); ``valid`` shrinks it by
    dilation * (K - 1).
    """
    x = as_float(x)
    weight = as_float(weight)
    bias = as_float(bias)
    if x.ndim != 2:
        raise ValueError(f"conv1d input must be [C, T], got shape {x.shape}")
    if weight.ndim != 3:
        raise ValueError(f"conv1d weight must be [C_out, C_in, K], got shape {weight.shape}")
    c_out, c_in, k = weight.shape
    if x.shape[0] != c_in:
        raise ValueError(f"conv1d channel axis mismatch: input has {x.shape[0]}, weight expects {c_in}")
    if bias.shape != (c_out,):
        raise ValueError(f"conv1d bias axis mismatch: expected ({c_out},), got {bias.shape}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    cols = im2col(x, k, dilation, padding)
    return weight.reshape(c_out, c_in * k) @ cols + bias[:, None]


def im2col(x, k, dilation, padding, pad_value=0):
    """Unfold [C, T] into [C*K, T'] columns, row index c*K + j."""
    c, t = x.shape
    span = dilation * (k - 1)
    if padding == "same":
        if k % 2 == 0:
            raise ValueError(f"same padding needs an odd kernel size, got {k}")
        half = span // 2
        x = np.pad(x, ((0, 0), (half, half)), constant_values=pad_value)
    elif padding != "valid":
        raise ValueError(f"unknown padding mode {padding!r}")
    t_out = x.shape[1] - span
    if t_out < 1:
        raise ValueError(f"time axis too short: T={t} gives output length {t_out}")
    cols = np.empty((c, k, t_out), dtype=x.dtype)
    for j in range(k):
        cols[:, j, :] = x[:, j * dilation : j * dilation + t_out]
    return cols.reshape(c * k, t_out)


def linear(x, weight, bias):
    x = as_float(x)
    weight = as_float(weight)
    bias = as_float(bias)
    if weight.ndim != 2 or x.ndim != 1:
        raise ValueError(f"linear expects x [N] and weight [M, N], got {x.shape} and {weight.shape}")
    if weight.shape[1] != x.shape[0]:
        raise ValueError(f"linear input dimension mismatch: weight has {weight.shape[1]}, input has {x.shape[0]}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias dimension mismatch: expected ({weight.shape[0]},), got {bias.shape}")
    return weight @ x + bias


def relu(x):
    x = as_float(x)
    _check_nan(x)
    return np.maximum(x, 0.0)


def sigmoid(x):
    x = as_float(x)
    _check_nan(x)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh(x):
    x = as_float(x)
    _check_nan(x)
    return np.tanh(x)


def softmax_over_time(x):
    x = as_float(x)
    _check_nan(x)
    if x.ndim != 2:
        raise ValueError(f"softmax_over_time expects [C, T], got {x.shape}")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def mean_std_pool(x):
    """[C, T] -> [2C]: per-channel means then population stds sqrt(var + eps)."""
    x = as_float(x)
    if x.ndim != 2:
        raise ValueError(f"mean_std_pool expects [C, T], got {x.shape}")
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    return np.concatenate([mean, np.sqrt(var + POOL_EPS)])


def concat_channels(xs):
    xs = [as_float(x) for x in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one input")
    t = xs[0].shape[1]
    for i, x in enumerate(xs):
        if x.ndim != 2 or x.shape[1] != t:
            raise ValueError(f"concat_channels time axis mismatch at input {i}: {x.shape[1]} != {t}")
    return np.concatenate(xs, axis=0)


def channel_affine(x, scale, shift):
    """Folded batchnorm: per-channel scale and shift on [C, T]."""
    return as_float(x) * as_float(scale)[:, None] + as_float(shift)[:, None]
