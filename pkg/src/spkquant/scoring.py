"""Cosine trial scoring and equal error rate."""
from dataclasses import dataclass

import numpy as np

from .model import forward


@dataclass(frozen=True)
class EvalReport:
    eer: float
    threshold: float
    n_target: int
    n_nontarget: int


def cosine_score(e1, e2):
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0:
        raise ValueError("cannot score a zero-norm embedding")
    return float(np.clip(e1 @ e2 / (n1 * n2), -1.0, 1.0))


def error_counts(scores, labels, threshold):
    """(false accepts, false rejects) with accept <=> score >= threshold."""
    accept = scores >= threshold
    return int(np.sum(accept & ~labels)), int(np.sum(~accept & labels))


def candidate_thresholds(scores):
    s = np.unique(scores)
    return np.concatenate([[-np.inf], (s[:-1] + s[1:]) / 2.0, [np.inf]])


def compute_eer(scores, labels):
    """EER over midpoint thresholds.

    Picks the threshold minimising |FAR - FRR| (lowest threshold on ties) and
    reports (FAR + FRR) / 2 there. Returns (eer, threshold).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_tar = int(labels.sum())
    n_non = labels.size - n_tar
    if n_tar == 0 or n_non == 0:
        raise ValueError("EER needs at least one target and one nontarget score")
    s = np.unique(scores)
    # counts at threshold index i accept every score strictly above s[i-1]
    order = np.searchsorted(s, scores)
    tar_at = np.bincount(order[labels], minlength=s.size)
    non_at = np.bincount(order[~labels], minlength=s.size)
    fr = np.concatenate([[0], np.cumsum(tar_at)])
    fa = n_non - np.concatenate([[0], np.cumsum(non_at)])
    gap = np.abs(fa * n_tar - fr * n_non)
    i = int(np.argmin(gap))
    thresholds = candidate_thresholds(scores)
    eer = (fa[i] / n_non + fr[i] / n_tar) / 2.0
    return float(eer), float(thresholds[i])


def embed_all(weights, config, featureset, utt_ids, qctx=None, cache=None):
    cache = {} if cache is None else cache
    for u in utt_ids:
        if u not in cache:
            cache[u] = forward(weights, config, featureset[u], qctx)
    return cache


def evaluate_model(weights, config, qctx, featureset, trials, cache=None):
    if not trials:
        raise ValueError("no trials to evaluate")
    ids = []
    for t in trials:
        for u in (t.enroll, t.test):
            if u not in featureset.utterances:
                raise KeyError(f"trial references unknown utterance {u!r}")
            ids.append(u)
    emb = embed_all(weights, config, featureset, dict.fromkeys(ids), qctx, cache)
    scores = [cosine_score(emb[t.enroll], emb[t.test]) for t in trials]
    labels = [t.target for t in trials]
    eer, thr = compute_eer(scores, labels)
    n_tar = sum(labels)
    return EvalReport(eer, thr, n_tar, len(labels) - n_tar)
