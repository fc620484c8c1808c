import itertools
import math

import numpy as np
import pytest

from spkquant.model import LAYER_NAMES
from spkquant.modelfile import _record, _record_header
from spkquant.quant import quantize_weight
from spkquant.sensitivity import (SelectionPolicy, SensitivityReport, evaluate_config, model_size,
                                  select, sweep)
from spkquant.scoring import evaluate_model

# Table 1 EER column (percent) and model size (MB) of the pretrained full-scale model
PAPER_BASELINE = (1.665, 63.571)
PAPER_ROWS = [(1.660, 60.413), (1.680, 53.501), (1.716, 53.389), (1.766, 53.381),
              (1.688, 48.365), (1.681, 56.594), (1.665, 60.100)]


def paper_report():
    return SensitivityReport.from_values(
        PAPER_BASELINE[0] / 100, round(PAPER_BASELINE[1] * 1e6),
        [(e / 100, round(s * 1e6)) for e, s in PAPER_ROWS])


def report_with_deltas(deltas_pp):
    return SensitivityReport.from_values(0.01, 1000, [(0.01 + d / 100, 900) for d in deltas_pp])


def excluded(chosen):
    return set(LAYER_NAMES) - set(chosen)


def test_record_size_arithmetic():
    w = np.ones((10, 100), np.float32)
    header = len(_record_header("t.weight", 0, (10, 100)))
    assert len(_record("t.weight", w)) == header + 4000
    assert len(_record("t.weight", quantize_weight(w))) == header + 1000 + 10 * 8
    assert len(_record("t.weight", w)) - len(_record("t.weight", quantize_weight(w))) == 2920


def test_model_size_matches_format_arithmetic(config, weights):
    base = model_size(config, weights)
    for layer in LAYER_NAMES:
        ws = [w for n, w in weights.items() if n.startswith(layer + ".") and n.endswith(".weight")]
        saved = sum(3 * w.size - 8 * w.shape[0] for w in ws)
        assert base - model_size(config, weights, [layer]) == saved


def test_size_additive_and_monotone(config, weights):
    base = model_size(config, weights)
    single = {l: base - model_size(config, weights, [l]) for l in LAYER_NAMES}
    assert all(v > 0 for v in single.values())
    for a, b in itertools.combinations(LAYER_NAMES, 2):
        assert base - model_size(config, weights, [a, b]) == single[a] + single[b]
    assert base - model_size(config, weights, LAYER_NAMES) == sum(single.values())


def test_select_paper_table():
    rep = paper_report()
    for text in ("threshold:0.05", "topk:2", "budget:0.06"):
        assert excluded(select(rep, SelectionPolicy.parse(text))) == {"se_res2block_2", "se_res2block_3"}


def test_select_edge_cases():
    rep = paper_report()
    assert select(rep, SelectionPolicy("threshold", math.inf)) == LAYER_NAMES
    assert select(rep, SelectionPolicy("threshold", 0.0)) == ("conv1d_1",)
    assert select(rep, SelectionPolicy("topk", 7)) == ()
    assert select(rep, SelectionPolicy("topk", 0)) == LAYER_NAMES
    zeros = report_with_deltas([0.0] * 7)
    for policy in (SelectionPolicy("threshold", 0.01), SelectionPolicy("budget", 0.01)):
        assert select(zeros, policy) == LAYER_NAMES


def test_topk_ties_exclude_later_layer_first():
    rep = report_with_deltas([0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1])
    assert excluded(select(rep, SelectionPolicy("topk", 1))) == {"linear"}
    assert excluded(select(rep, SelectionPolicy("topk", 2))) == {"linear", "conv1d_1"}
    assert excluded(select(rep, SelectionPolicy("topk", 3))) == {"linear", "conv1d_1", "attentive_stat_pooling"}


def test_budget_is_greedy_by_ascending_delta():
    rep = report_with_deltas([0.03, -0.02, 0.01, 0.02, 0.5, 0.0, 0.04])
    # ascending: se1 -0.02, asp 0, se2 0.01, se3 0.02, conv1d_1 0.03 (sum 0.04) | linear pushes to 0.08
    assert excluded(select(rep, SelectionPolicy("budget", 0.05))) == {"linear", "conv1d_2"}


def test_policy_parse():
    assert SelectionPolicy.parse("threshold=0.05") == SelectionPolicy("threshold", 0.05)
    assert SelectionPolicy.parse("top_k_exclude:2") == SelectionPolicy("topk", 2)
    for bad in ("topk:8", "topk:1.5", "threshold:-1", "median:3", "threshold"):
        with pytest.raises(ValueError):
            SelectionPolicy.parse(bad)


def test_report_requires_table_order():
    rep = paper_report()
    with pytest.raises(ValueError):
        SensitivityReport(rep.baseline_eer, rep.baseline_size, rep.rows[::-1])
    assert SensitivityReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()


@pytest.fixture(scope="module")
def small_sweep(weights, config, small_calib, small_eval, small_trials):
    return sweep(weights, config, small_calib, small_eval, small_trials)


def test_sweep_structure(small_sweep, weights, config, small_eval, small_trials):
    assert [r.layer for r in small_sweep.rows] == list(LAYER_NAMES)
    base = evaluate_model(weights, config, None, small_eval, small_trials)
    assert small_sweep.baseline_eer == base.eer
    assert small_sweep.baseline_size == model_size(config, weights)
    for r in small_sweep.rows:
        assert r.size_bytes < small_sweep.baseline_size
        assert r.delta_eer == r.eer - small_sweep.baseline_eer
        assert r.delta_size == r.size_bytes - small_sweep.baseline_size


def test_sweep_rows_match_singleton_enumeration(small_sweep, weights, config, small_calib, small_eval, small_trials):
    for layer in ("conv1d_1", "linear"):
        row = next(r for r in small_sweep.rows if r.layer == layer)
        assert (row.eer, row.size_bytes) == evaluate_config(
            weights, config, [layer], small_calib, small_eval, small_trials)


def test_sweep_parallel_is_identical(small_sweep, weights, config, small_calib, small_eval, small_trials):
    par = sweep(weights, config, small_calib, small_eval, small_trials, jobs=4)
    assert par.to_dict() == small_sweep.to_dict()


def test_evaluate_config_empty_is_baseline(small_sweep, weights, config, small_calib, small_eval, small_trials):
    assert evaluate_config(weights, config, (), small_calib, small_eval, small_trials) == (
        small_sweep.baseline_eer, small_sweep.baseline_size)


def test_selected_config_runs_end_to_end(small_sweep, weights, config, small_calib, small_eval, small_trials):
    chosen = select(small_sweep, SelectionPolicy("threshold", 0.05))
    eer, size = evaluate_config(weights, config, chosen, small_calib, small_eval, small_trials)
    assert 0.0 <= eer <= 1.0
    assert size == model_size(config, weights, chosen)
