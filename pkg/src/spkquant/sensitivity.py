"""Layer-wise quantization sweep, mixed-precision selection and size accounting."""
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .calibration import MINMAX, run_calibration
from .model import LAYER_NAMES, build_qcontext
from .modelfile import serialize_model
from .scoring import evaluate_model

REPORT_KIND = "sensitivity"
CONFIG_KIND = "comparison"


def model_size(config, weights, quantized=()):
    """Exact byte size of the QSVM file with ``quantized`` layers stored as int8."""
    return len(serialize_model(config, weights, quantized))


@dataclass(frozen=True)
class SensitivityRow:
    layer: str
    eer: float
    size_bytes: int
    delta_eer: float
    delta_size: int

    def to_dict(self):
        return {"layer": self.layer, "eer": self.eer, "size_bytes": self.size_bytes,
                "delta_eer": self.delta_eer, "delta_size": self.delta_size}


@dataclass
class SensitivityReport:
    baseline_eer: float
    baseline_size: int
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if [r.layer for r in self.rows] != list(LAYER_NAMES):
            raise ValueError(f"report rows must be exactly {list(LAYER_NAMES)} in order")

    @classmethod
    def from_values(cls, baseline_eer, baseline_size, layer_values, metadata=None):
        """Build from (eer, size_bytes) per layer, filling in deltas."""
        rows = [SensitivityRow(l, eer, size, eer - baseline_eer, size - baseline_size)
                for l, (eer, size) in zip(LAYER_NAMES, layer_values)]
        return cls(baseline_eer, baseline_size, rows, dict(metadata or {}))

    def delta(self, layer):
        return next(r.delta_eer for r in self.rows if r.layer == layer)

    def to_dict(self):
        return {"kind": REPORT_KIND,
                "baseline": {"eer": self.baseline_eer, "size_bytes": self.baseline_size},
                "rows": [r.to_dict() for r in self.rows],
                "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d):
        if d.get("kind", REPORT_KIND) != REPORT_KIND:
            raise ValueError(f"not a sensitivity report (kind={d.get('kind')!r})")
        base = d["baseline"]
        eer, size = base["eer"], base.get("size_bytes", 0)
        rows = []
        for r in d["rows"]:
            r_size = r.get("size_bytes", 0)
            rows.append(SensitivityRow(r["layer"], r["eer"], r_size,
                                       r.get("delta_eer", r["eer"] - eer),
                                       r.get("delta_size", r_size - size)))
        return cls(eer, size, rows, d.get("metadata", {}))


@dataclass(frozen=True)
class SelectionPolicy:
    """Which layers to keep in float, given per-layer EER deltas.

    ``threshold`` and ``budget`` values are in EER percentage points, the
    unit the report tables use.
    """

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("threshold", "topk", "budget"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.value < 0 or math.isnan(self.value):
            raise ValueError(f"policy value must be >= 0, got {self.value}")
        if self.kind == "topk" and (self.value != int(self.value) or self.value > len(LAYER_NAMES)):
            raise ValueError(f"topk needs an integer k <= {len(LAYER_NAMES)}, got {self.value}")

    @classmethod
    def parse(cls, text):
        """``threshold:t``, ``topk:k`` or ``budget:e`` (``=`` also accepted)."""
        kind, sep, arg = text.replace("=", ":").partition(":")
        if not sep:
            raise ValueError(f"bad policy {text!r}; expected threshold:t, topk:k or budget:e")
        if kind == "top_k_exclude":
            kind = "topk"
        return cls(kind, float(arg))

    def __str__(self):
        v = int(self.value) if self.kind == "topk" else self.value
        return f"{self.kind}:{v}"


def select(report, policy):
    """Return the set of layers to quantize, in table order."""
    pp = {r.layer: 100.0 * r.delta_eer for r in report.rows}
    if policy.kind == "threshold":
        chosen = {l for l in LAYER_NAMES if pp[l] < policy.value}
    elif policy.kind == "topk":
        # largest delta first; on ties the later layer goes first
        ranked = sorted(range(len(LAYER_NAMES)), key=lambda i: (-pp[LAYER_NAMES[i]], -i))
        excluded = {LAYER_NAMES[i] for i in ranked[: int(policy.value)]}
        chosen = set(LAYER_NAMES) - excluded
    else:
        chosen = set()
        running = 0.0
        for i in sorted(range(len(LAYER_NAMES)), key=lambda i: (pp[LAYER_NAMES[i]], i)):
            running += pp[LAYER_NAMES[i]]
            if running > policy.value:
                break
            chosen.add(LAYER_NAMES[i])
    return tuple(l for l in LAYER_NAMES if l in chosen)


def _evaluate(weights, config, quantized, stats, observer, eval_data, trials):
    qctx = build_qcontext(weights, quantized, stats, observer) if quantized else None
    rep = evaluate_model(weights, config, qctx, eval_data, trials)
    return rep.eer, model_size(config, weights, quantized)


def sweep(weights, config, calib_data, eval_data, trials, observer=MINMAX, jobs=1, metadata=None):
    """Quantize one layer at a time and measure EER and file size against the float baseline.

    Calibration runs the float model, so one pass serves every row.
    """
    stats = run_calibration(weights, config, calib_data, LAYER_NAMES, observer)
    configs = [()] + [(l,) for l in LAYER_NAMES]

    def run(q):
        return _evaluate(weights, config, q, stats, observer, eval_data, trials)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, configs))
    else:
        results = [run(q) for q in configs]
    (base_eer, base_size), rows = results[0], results[1:]
    meta = {"observer": str(observer), "calibration_utterances": len(calib_data),
            "trials": len(trials)}
    meta.update(metadata or {})
    return SensitivityReport.from_values(base_eer, base_size, rows, meta)


def evaluate_config(weights, config, quantized, calib_data, eval_data, trials, observer=MINMAX):
    """Calibrate the chosen layers together and measure the combined configuration once."""
    quantized = tuple(l for l in LAYER_NAMES if l in set(quantized))
    stats = run_calibration(weights, config, calib_data, quantized, observer) if quantized else {}
    return _evaluate(weights, config, quantized, stats, observer, eval_data, trials)


def comparison_report(baseline, proposed, quantized, metadata=None):
    """Two-row baseline vs proposed summary."""
    return {"kind": CONFIG_KIND,
            "quantized": list(quantized),
            "rows": [{"layer": "No quantization", "eer": baseline[0], "size_bytes": baseline[1]},
                     {"layer": "Proposed", "eer": proposed[0], "size_bytes": proposed[1]}],
            "metadata": dict(metadata or {})}


def quant_config_dict(quantized):
    return {"quantized": list(quantized), "bits": 8,
            "weights": "symmetric per-output-channel",
            "activations": "affine per-tensor"}


def read_quant_config(path):
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    layers = d.get("quantized")
    if not isinstance(layers, list) or not set(layers) <= set(LAYER_NAMES):
        raise ValueError(f"{path}: 'quantized' must list layers from {list(LAYER_NAMES)}")
    return tuple(l for l in LAYER_NAMES if l in set(layers))


def dump_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def load_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
