"""Range calibration: running statistics per activation site and range finalization."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T

DEFAULT_BINS = 2048


@dataclass(frozen=True)
class Observer:
    kind: str = "minmax"
    p: float = 1.0
    bins: int = DEFAULT_BINS

    def __post_init__(self):
        if self.kind not in ("minmax", "percentile"):
            raise ValueError(f"unknown observer kind {self.kind!r}")
        if self.kind == "percentile" and not (0.5 < self.p <= 1.0):
            raise ValueError(f"percentile p must lie in (0.5, 1.0], got {self.p}")
        if self.bins < 1:
            raise ValueError(f"bins must be positive, got {self.bins}")

    @property
    def needs_histogram(self):
        return self.kind == "percentile"

    @classmethod
    def parse(cls, text):
        """``minmax`` or ``percentile:<p>``."""
        if text == "minmax":
            return cls()
        kind, _, arg = text.partition(":")
        if kind == "percentile" and arg:
            return cls("percentile", float(arg))
        raise ValueError(f"bad observer {text!r}; expected minmax or percentile:<p>")

    def __str__(self):
        return "minmax" if self.kind == "minmax" else f"percentile:{self.p!r}"


MINMAX = Observer()


@dataclass
class CalibStats:
    """Running min/max/mean/std/count for one tensor, with an optional histogram.

    Mean and spread use Chan's pairwise update applied chunk by chunk, so the
    result depends only on the sequence of observed chunks.
    """

    name: str
    min: float = np.inf
    max: float = -np.inf
    mean: float = 0.0
    m2: float = 0.0
    count: int = 0
    bins: int = 0
    hist: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def for_observer(cls, name, observer):
        return cls(name, bins=observer.bins if observer.needs_histogram else 0)

    @property
    def std(self):
        return float(np.sqrt(self.m2 / self.count)) if self.count else 0.0

    def observe(self, x):
        x = T.as_float(x).ravel()
        if x.size == 0:
            return self
        if not np.all(np.isfinite(x)):
            i = int(np.argmax(~np.isfinite(x)))
            raise ValueError(f"{self.name}: non-finite value {x[i]} at flat index {i}")
        lo, hi = float(x.min()), float(x.max())
        n_b = x.size
        mean_b = float(x.mean())
        m2_b = float(((x - mean_b) ** 2).sum())
        self._merge_moments(n_b, mean_b, m2_b)
        new_min, new_max = min(self.min, lo), max(self.max, hi)
        if self.bins:
            self._rebin(new_min, new_max)
            self.hist += _bin_counts(x, new_min, new_max, self.bins)
        self.min, self.max = new_min, new_max
        return self

    def _merge_moments(self, n_b, mean_b, m2_b):
        n_a = self.count
        n = n_a + n_b
        delta = mean_b - self.mean
        self.mean = self.mean + delta * n_b / n
        self.m2 = self.m2 + m2_b + delta * delta * n_a * n_b / n
        self.count = n

    def _rebin(self, lo, hi):
        if self.hist is None:
            self.hist = np.zeros(self.bins, dtype=np.int64)
            return
        if lo == self.min and hi == self.max:
            return
        # move each old bin's mass to the new bin holding its centre
        centres = _edges(self.min, self.max, self.bins)[:-1] + 0.5 * (self.max - self.min) / self.bins
        moved = np.zeros(self.bins, dtype=np.int64)
        np.add.at(moved, _bin_index(centres, lo, hi, self.bins), self.hist)
        self.hist = moved

    def copy(self):
        out = CalibStats(self.name, self.min, self.max, self.mean, self.m2, self.count, self.bins)
        out.hist = None if self.hist is None else self.hist.copy()
        return out

    def to_dict(self):
        d = {"min": self.min, "max": self.max, "mean": self.mean, "std": self.std,
             "m2": self.m2, "count": self.count}
        if self.hist is not None:
            d["hist"] = self.hist.tolist()
        return d

    @classmethod
    def from_dict(cls, name, d):
        hist = d.get("hist")
        out = cls(name, d["min"], d["max"], d["mean"], d["m2"], d["count"],
                  len(hist) if hist is not None else 0)
        if hist is not None:
            out.hist = np.asarray(hist, dtype=np.int64)
        return out


def _edges(lo, hi, bins):
    return lo + (hi - lo) * np.arange(bins + 1) / bins


def _bin_index(x, lo, hi, bins):
    if hi == lo:
        return np.zeros(np.shape(x), dtype=np.int64)
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _bin_counts(x, lo, hi, bins):
    return np.bincount(_bin_index(x, lo, hi, bins), minlength=bins).astype(np.int64)


def observe(stats, x):
    """Fold tensor ``x`` into ``stats`` (in place) and return it."""
    return stats.observe(x)


def merge(a, b):
    """Combine stats from two disjoint shards of data."""
    out = a.copy()
    if b.count == 0:
        return out
    if a.count == 0:
        return b.copy()
    out._merge_moments(b.count, b.mean, b.m2)
    lo, hi = min(a.min, b.min), max(a.max, b.max)
    if a.hist is not None and b.hist is not None:
        if a.bins != b.bins:
            raise ValueError(f"cannot merge histograms with {a.bins} and {b.bins} bins")
        other = b.copy()
        out._rebin(lo, hi)
        other._rebin(lo, hi)
        out.hist = out.hist + other.hist
    else:
        out.hist = None
        out.bins = 0
    out.min, out.max = lo, hi
    return out


def finalize(stats, observer=MINMAX):
    """Return the clipping range (alpha, beta) chosen by ``observer``."""
    if stats.count == 0:
        raise ValueError(f"{stats.name}: cannot finalize stats with no observations")
    if observer.kind == "minmax":
        return stats.min, stats.max
    if stats.hist is None:
        raise ValueError(f"{stats.name}: percentile observer needs histogram collection")
    total = int(stats.hist.sum())
    tail = (1.0 - observer.p) / 2.0 * total
    cum = np.cumsum(stats.hist)
    lo_bin = int(np.searchsorted(cum, tail, side="right"))
    hi_bin = int(np.searchsorted(cum, total - tail, side="left"))
    hi_bin = max(hi_bin, lo_bin)
    edges = _edges(stats.min, stats.max, stats.hist.size)
    alpha = max(float(edges[lo_bin]), stats.min)
    beta = min(float(edges[hi_bin + 1]), stats.max)
    return alpha, beta


def weight_stats(weights, layers, observer=MINMAX):
    out = {}
    for name, w in weights.items():
        if name.endswith(".weight") and name.split(".")[0] in layers:
            out[name] = CalibStats.for_observer(name, observer).observe(w)
    return out


def run_calibration(weights, config, dataset, layers=None, observer=MINMAX):
    """Collect input statistics for each quantizable layer over ``dataset``.

    Every kernel input inside a layer feeds that layer's single activation
    site. Weight stats for the same layers are keyed by tensor name.
    """
    from .model import LAYER_NAMES, forward

    layers = list(LAYER_NAMES) if layers is None else [l for l in LAYER_NAMES if l in set(layers)]
    feats = list(dataset.features())
    if not feats:
        raise ValueError("calibration dataset is empty")
    stats = {l: CalibStats.for_observer(l, observer) for l in layers}

    def hook(layer, x):
        if layer in stats:
            stats[layer].observe(x)

    for x in feats:
        forward(weights, config, x, hook=hook)
    stats.update(weight_stats(weights, layers, observer))
    return stats
