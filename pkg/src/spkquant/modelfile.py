"""QSVM model file: config header plus one record per tensor, all little-endian.

Layout::

    b"QSVM"  u16 version
    config:  u32 feat_dim, channels, res2_scale, kernel_size,
             se_bottleneck, attn_bottleneck, emb_dim, seed
             u8 n_dilations, u32 dilation * n
    u32 tensor count
    record:  u16 name length, UTF-8 name, u8 dtype (0=f32, 1=i8), u8 ndim,
             u32 dims * ndim, payload
             i8 records then carry f32 scale * dims[0] and i32 zero point * dims[0]
"""
import struct

import numpy as np

from .model import LAYER_NAMES, ModelConfig, check_weights, layer_of
from .quant import QuantizedTensor, QuantParams, quantize_weight

MAGIC = b"QSVM"
VERSION = 1
DTYPE_F32 = 0
DTYPE_I8 = 1
_CONFIG_FIELDS = ("feat_dim", "channels", "res2_scale", "kernel_size",
                  "se_bottleneck", "attn_bottleneck", "emb_dim", "seed")


class ModelFileError(ValueError):
    pass


def _header(config, n_tensors):
    out = [MAGIC, struct.pack("<H", VERSION)]
    out.append(struct.pack("<8I", *(getattr(config, f) for f in _CONFIG_FIELDS)))
    out.append(struct.pack("<B", len(config.dilations)))
    out.append(struct.pack(f"<{len(config.dilations)}I", *config.dilations))
    out.append(struct.pack("<I", n_tensors))
    return b"".join(out)


def _record_header(name, dtype, shape):
    raw = name.encode("utf-8")
    return struct.pack(f"<H{len(raw)}sBB{len(shape)}I", len(raw), raw, dtype, len(shape), *shape)


def _record(name, value):
    if isinstance(value, QuantizedTensor):
        p = value.params
        n = value.shape[0]
        scale = p.scale if p.per_channel else np.full(n, p.scale[0])
        zp = p.zero_point if p.per_channel else np.full(n, p.zero_point[0])
        return b"".join([
            _record_header(name, DTYPE_I8, value.shape),
            value.values.astype("<i1").tobytes(),
            scale.astype("<f4").tobytes(),
            zp.astype("<i4").tobytes(),
        ])
    arr = np.asarray(value, dtype="<f4")
    return _record_header(name, DTYPE_F32, arr.shape) + arr.tobytes()


def quantized_tensors(weights, quantized):
    """Weights as stored for a given set of quantized layers: their weight matrices go int8."""
    quantized = set(quantized)
    unknown = quantized - set(LAYER_NAMES)
    if unknown:
        raise ValueError(f"unknown layers: {sorted(unknown)}")
    return {n: quantize_weight(w) if n.endswith(".weight") and layer_of(n) in quantized else w
            for n, w in weights.items()}


def serialize_model(config, weights, quantized=()):
    check_weights(weights, config)
    tensors = quantized_tensors(weights, quantized)
    parts = [_header(config, len(tensors))]
    parts.extend(_record(n, v) for n, v in tensors.items())
    return b"".join(parts)


def save_model(path, config, weights, quantized=()):
    data = serialize_model(config, weights, quantized)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ModelFileError(f"{self.path}: truncated model file at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise ModelFileError(f"{self.path}: truncated tensor payload at byte {self.pos}")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return out


def parse_model(data, path="<bytes>"):
    """Inverse of ``serialize_model``: (config, tensors); int8 records come back as QuantizedTensor."""
    r = _Reader(data, path)
    if r.take("4s")[0] != MAGIC:
        raise ModelFileError(f"{path}: bad magic, not a QSVM model file")
    (version,) = r.take("<H")
    if version != VERSION:
        raise ModelFileError(f"{path}: unsupported model version {version}")
    fields = dict(zip(_CONFIG_FIELDS, r.take("<8I")))
    (n_dil,) = r.take("<B")
    config = ModelConfig(dilations=r.take(f"<{n_dil}I"), **fields)
    (count,) = r.take("<I")
    tensors = {}
    for _ in range(count):
        (n,) = r.take("<H")
        name = r.take(f"<{n}s")[0].decode("utf-8")
        dtype, ndim = r.take("<BB")
        shape = r.take(f"<{ndim}I")
        size = int(np.prod(shape))
        if dtype == DTYPE_F32:
            tensors[name] = r.array("<f4", size).reshape(shape).astype(np.float32)
        elif dtype == DTYPE_I8:
            values = r.array("<i1", size).reshape(shape)
            scale = r.array("<f4", shape[0]).astype(np.float64)
            zp = r.array("<i4", shape[0]).astype(np.int64)
            tensors[name] = QuantizedTensor(values, QuantParams(scale, zp, axis=0))
        else:
            raise ModelFileError(f"{path}: tensor {name} has unknown dtype byte {dtype}")
    if r.pos != len(data):
        raise ModelFileError(f"{path}: {len(data) - r.pos} trailing bytes")
    return config, tensors


def load_model(path):
    with open(path, "rb") as f:
        data = f.read()
    config, tensors = parse_model(data, path)
    float_only = {n: v for n, v in tensors.items() if not isinstance(v, QuantizedTensor)}
    if len(float_only) == len(tensors):
        check_weights(tensors, config)
    return config, tensors
