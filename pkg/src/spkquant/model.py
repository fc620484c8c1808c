"""Reduced-scale ECAPA-TDNN forward pass with seven named quantization units.

Wiring, per layer:

* ``conv1d_1``: conv (K=5) -> relu -> folded batchnorm
* ``se_res2block_{1,2,3}``: 1x1 conv -> relu/bn -> Res2 dilated convs over
  ``res2_scale`` channel groups -> 1x1 conv -> relu/bn -> squeeze-excitation
  gate -> residual add
* ``conv1d_2``: 1x1 conv over the concatenated block outputs -> relu
* ``attentive_stat_pooling``: channel-wise attention over [h; mean; std]
  context, weighted mean and std
* ``linear``: pooled statistics -> embedding
"""
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from . import tensor as T
from .quant import dequantize, fake_quant, params_from_range, qconv1d, qlinear, quantize, quantize_weight

LAYER_NAMES = (
    "conv1d_1",
    "se_res2block_1",
    "se_res2block_2",
    "se_res2block_3",
    "conv1d_2",
    "attentive_stat_pooling",
    "linear",
)
FIRST_KERNEL = 5


@dataclass(frozen=True)
class ModelConfig:
    feat_dim: int = 16
    channels: int = 32
    res2_scale: int = 4
    dilations: Tuple[int, ...] = (2, 3, 4)
    kernel_size: int = 3
    se_bottleneck: int = 16
    attn_bottleneck: int = 16
    emb_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        dims = (self.feat_dim, self.channels, self.res2_scale, self.kernel_size,
                self.se_bottleneck, self.attn_bottleneck, self.emb_dim)
        if min(dims) < 1:
            raise ValueError(f"all model dimensions must be >= 1: {self}")
        if self.channels % self.res2_scale:
            raise ValueError(f"channels {self.channels} not divisible by res2_scale {self.res2_scale}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if len(self.dilations) != 3 or min(self.dilations) < 1:
            raise ValueError(f"need three positive block dilations, got {self.dilations}")

    @property
    def attn_channels(self):
        return 3 * self.channels

    @property
    def min_frames(self):
        return self.kernel_size * max(self.dilations)


def param_shapes(config):
    """Ordered map tensor name -> shape for the whole model."""
    c, g = config.channels, config.channels // config.res2_scale
    ca = config.attn_channels
    shapes = {}

    def conv(prefix, c_out, c_in, k, bn=True):
        shapes[f"{prefix}.weight"] = (c_out, c_in, k)
        shapes[f"{prefix}.bias"] = (c_out,)
        if bn:
            shapes[f"{prefix}.bn_scale"] = (c_out,)
            shapes[f"{prefix}.bn_shift"] = (c_out,)

    def lin(prefix, m, n):
        shapes[f"{prefix}.weight"] = (m, n)
        shapes[f"{prefix}.bias"] = (m,)

    conv("conv1d_1", c, config.feat_dim, FIRST_KERNEL)
    for b in range(1, 4):
        p = f"se_res2block_{b}"
        conv(f"{p}.conv_in", c, c, 1)
        for i in range(1, config.res2_scale):
            conv(f"{p}.res2_{i}", g, g, config.kernel_size)
        conv(f"{p}.conv_out", c, c, 1)
        lin(f"{p}.se_squeeze", config.se_bottleneck, c)
        lin(f"{p}.se_excite", c, config.se_bottleneck)
    conv("conv1d_2", ca, 3 * c, 1, bn=False)
    conv("attentive_stat_pooling.attn_hidden", config.attn_bottleneck, 3 * ca, 1, bn=False)
    conv("attentive_stat_pooling.attn_score", ca, config.attn_bottleneck, 1, bn=False)
    lin("linear", config.emb_dim, 2 * ca)
    return shapes


def layer_of(name):
    return name.split(".", 1)[0]


def init_model(config):
    """Seeded uniform init; weights get a fan-in scaled range, batchnorm sits near identity."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    weights = {}
    for name, shape in param_shapes(config).items():
        kind = name.rsplit(".", 1)[1]
        if kind == "weight":
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, shape)
        elif kind == "bias":
            w = rng.uniform(-0.1, 0.1, shape)
        elif kind == "bn_scale":
            w = rng.uniform(0.8, 1.2, shape)
        else:
            w = rng.uniform(-0.1, 0.1, shape)
        weights[name] = w.astype(np.float32)
    return weights


def check_weights(weights, config):
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(weights))
    extra = sorted(set(weights) - set(expected))
    if missing or extra:
        raise ValueError(f"weights do not match config: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise ValueError(f"{name}: shape {tuple(weights[name].shape)} != expected {shape}")


def layer_param_count(weights, layer):
    if layer not in LAYER_NAMES:
        raise ValueError(f"unknown layer {layer!r}")
    return sum(int(np.size(w)) for n, w in weights.items() if layer_of(n) == layer)


@dataclass
class QuantContext:
    """Everything a forward pass needs to run some layers on the int8 path.

    ``integer=False`` runs the same quantization on float kernels (fake-quant),
    which is the reference the integer kernels are checked against.
    """

    quantized: frozenset
    act_params: Dict[str, object]
    qweights: Dict[str, object]
    integer: bool = True

    def __post_init__(self):
        self.quantized = frozenset(self.quantized)
        for layer in LAYER_NAMES:
            if layer in self.quantized and layer not in self.act_params:
                raise ValueError(f"missing activation params for quantized layer {layer}")


def build_qcontext(weights, quantized, stats, observer=None, integer=True):
    from .calibration import MINMAX, finalize

    observer = observer or MINMAX
    quantized = frozenset(quantized)
    unknown = quantized - set(LAYER_NAMES)
    if unknown:
        raise ValueError(f"unknown layers in config: {sorted(unknown)}")
    act = {}
    for layer in LAYER_NAMES:
        if layer not in quantized:
            continue
        if layer not in stats:
            raise ValueError(f"no calibration stats for quantized layer {layer}")
        act[layer] = params_from_range(*finalize(stats[layer], observer), scheme="affine")
    qw = {n: quantize_weight(w) for n, w in weights.items()
          if n.endswith(".weight") and layer_of(n) in quantized}
    return QuantContext(quantized, act, qw, integer)


class _Runner:
    def __init__(self, weights, qctx, hook):
        self.w = weights
        self.q = qctx
        self.hook = hook

    def is_quant(self, layer):
        return self.q is not None and layer in self.q.quantized

    def entry(self, layer, x):
        """Quantize a layer's input once so residual paths see the same value."""
        return fake_quant(x, self.q.act_params[layer]) if self.is_quant(layer) else x

    def conv(self, layer, prefix, x, dilation=1):
        w, b = self.w[f"{prefix}.weight"], self.w[f"{prefix}.bias"]
        if self.hook is not None:
            self.hook(layer, x)
        if not self.is_quant(layer):
            return T.conv1d(x, w, b, dilation)
        xq = quantize(x, self.q.act_params[layer])
        wq = self.q.qweights[f"{prefix}.weight"]
        if self.q.integer:
            return qconv1d(xq, wq, b, dilation)
        return T.conv1d(dequantize(xq), dequantize(wq), b, dilation)

    def linear(self, layer, prefix, x):
        w, b = self.w[f"{prefix}.weight"], self.w[f"{prefix}.bias"]
        if self.hook is not None:
            self.hook(layer, x)
        if not self.is_quant(layer):
            return T.linear(x, w, b)
        xq = quantize(x, self.q.act_params[layer])
        wq = self.q.qweights[f"{prefix}.weight"]
        if self.q.integer:
            return qlinear(xq, wq, b)
        return T.linear(dequantize(xq), dequantize(wq), b)

    def conv_relu_bn(self, layer, prefix, x, dilation=1):
        y = T.relu(self.conv(layer, prefix, x, dilation))
        return T.channel_affine(y, self.w[f"{prefix}.bn_scale"], self.w[f"{prefix}.bn_shift"])


def _se_res2block(run, layer, x, scale, dilation):
    x = run.entry(layer, x)
    h = run.conv_relu_bn(layer, f"{layer}.conv_in", x)
    groups = np.split(h, scale, axis=0)
    outs = [groups[0]]
    prev = None
    for i in range(1, scale):
        inp = groups[i] if prev is None else groups[i] + prev
        prev = run.conv_relu_bn(layer, f"{layer}.res2_{i}", inp, dilation)
        outs.append(prev)
    h = run.conv_relu_bn(layer, f"{layer}.conv_out", T.concat_channels(outs))
    s = T.relu(run.linear(layer, f"{layer}.se_squeeze", h.mean(axis=1)))
    gate = T.sigmoid(run.linear(layer, f"{layer}.se_excite", s))
    return h * gate[:, None] + x


def _attentive_stat_pool(run, layer, h):
    h = run.entry(layer, h)
    c, t = h.shape
    g = T.mean_std_pool(h)
    ctx = T.concat_channels([h, np.repeat(g[:c, None], t, axis=1), np.repeat(g[c:, None], t, axis=1)])
    a = T.tanh(run.conv(layer, f"{layer}.attn_hidden", ctx))
    alpha = T.softmax_over_time(run.conv(layer, f"{layer}.attn_score", a))
    mu = (alpha * h).sum(axis=1)
    var = (alpha * h * h).sum(axis=1) - mu * mu
    sd = np.sqrt(np.maximum(var, 0.0) + T.POOL_EPS)
    return np.concatenate([mu, sd])


def forward(weights, config, features, qctx=None, hook: Optional[Callable] = None):
    """Embed one utterance ``features`` [F, T] -> [emb_dim].

    ``hook(layer, x)`` is called with every kernel input, tagged by the
    quantization unit that owns the kernel.
    """
    x = T.as_float(features)
    if x.ndim != 2 or x.shape[0] != config.feat_dim:
        raise ValueError(f"features must be [{config.feat_dim}, T], got {x.shape}")
    if x.shape[1] < config.min_frames:
        raise ValueError(f"utterance too short: T={x.shape[1]} < {config.min_frames}")
    run = _Runner(weights, qctx, hook)

    x = run.conv_relu_bn("conv1d_1", "conv1d_1", x)
    blocks = []
    for b, dil in enumerate(config.dilations, start=1):
        x = _se_res2block(run, f"se_res2block_{b}", x, config.res2_scale, dil)
        blocks.append(x)
    h = T.relu(run.conv("conv1d_2", "conv1d_2", T.concat_channels(blocks)))
    pooled = _attentive_stat_pool(run, "attentive_stat_pooling", h)
    return run.linear("linear", "linear", pooled)
