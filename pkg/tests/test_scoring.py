import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spkquant.data import Trial
from spkquant.scoring import compute_eer, cosine_score, evaluate_model


def brute_force_eer(scores, labels):
    """Try every midpoint threshold (plus +-inf) with plain loops."""
    n_tar = sum(labels)
    n_non = len(labels) - n_tar
    uniq = sorted(set(scores))
    cands = [-np.inf] + [(a + b) / 2.0 for a, b in zip(uniq, uniq[1:])] + [np.inf]
    best = None
    for t in cands:
        fa = sum(1 for s, l in zip(scores, labels) if s >= t and not l)
        fr = sum(1 for s, l in zip(scores, labels) if s < t and l)
        gap = abs(fa * n_tar - fr * n_non)
        if best is None or gap < best[0]:
            best = (gap, (fa / n_non + fr / n_tar) / 2.0, t)
    return best[1], best[2]


def test_cosine_examples():
    v = np.array([1.0, 2.0, -3.0])
    assert cosine_score(v, v) == pytest.approx(1.0)
    assert cosine_score([1, 0], [0, 5]) == 0.0
    assert cosine_score(v, -v) == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="zero-norm"):
        cosine_score([0, 0], [1, 0])
    with pytest.raises(ValueError):
        cosine_score([1, 0], [1, 0, 0])


def test_eer_examples():
    assert compute_eer([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])[0] == 0.0
    eer, thr = compute_eer([0.8, 0.2, 0.7, 0.1], [1, 1, 0, 0])
    assert (eer, thr) == brute_force_eer([0.8, 0.2, 0.7, 0.1], [1, 1, 0, 0])
    assert eer == 0.5 and 0.2 < thr < 0.7
    assert compute_eer([0.9, 0.1], [1, 0])[0] == 0.0
    with pytest.raises(ValueError):
        compute_eer([0.1, 0.2], [1, 1])


trial_sets = st.lists(st.tuples(st.integers(0, 20).map(lambda i: i / 20), st.booleans()),
                      min_size=2, max_size=64).filter(lambda xs: 0 < sum(l for _, l in xs) < len(xs))


@settings(max_examples=300, deadline=None)
@given(trial_sets)
def test_eer_matches_brute_force(trials):
    scores = [s for s, _ in trials]
    labels = [l for _, l in trials]
    eer, thr = compute_eer(scores, labels)
    assert (eer, thr) == brute_force_eer(scores, labels)
    assert 0.0 <= eer <= 1.0
    # strictly increasing transforms keep the operating point
    assert compute_eer([np.exp(3 * s) - 7 for s in scores], labels)[0] == eer


def test_eer_ties_accept():
    # all scores tied: accept-all vs reject-all have equal gaps, lower threshold wins
    eer, thr = compute_eer([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0])
    assert thr == -np.inf and eer == 0.5


def test_evaluate_model_invariances(weights, config, small_eval, small_trials):
    base = evaluate_model(weights, config, None, small_eval, small_trials)
    assert base.n_target == 20 and base.n_nontarget == 30
    assert evaluate_model(weights, config, None, small_eval, small_trials * 2).eer == base.eer
    swapped = [Trial(t.target, t.test, t.enroll) for t in small_trials]
    assert evaluate_model(weights, config, None, small_eval, swapped).eer == base.eer
    assert evaluate_model(weights, config, None, small_eval, small_trials) == base


def test_evaluate_model_unknown_utterance(weights, config, small_eval):
    with pytest.raises(KeyError, match="nobody"):
        evaluate_model(weights, config, None, small_eval, [Trial(True, "spk000/utt000", "nobody")])
