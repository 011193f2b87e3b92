"""Exact AUC and log loss over score/label arrays.

auc() is the Mann-Whitney statistic computed from a rank sum with average
ranks for ties, O(N log N). auc_pairwise() is the O(P*N) pair-counting
definition, kept as the reference the fast path is tested against.
"""

from __future__ import annotations

import numpy as np

from .errors import MetricUndefinedError, ShapeError

SCORE_EPS = 1e-15


def _checked(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} vs labels {labels.shape}")
    return scores, labels


def auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative) + half ties."""
    scores, labels = _checked(scores, labels)
    n = scores.shape[0]
    pos = float(labels.sum())
    neg = n - pos
    if pos == 0 or neg == 0:
        raise MetricUndefinedError("auc needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # average 1-based rank within each tie group
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    starts = np.concatenate([[0], boundary + 1])
    ends = np.concatenate([boundary + 1, [n]])
    group_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(group_rank, ends - starts)
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - pos * (pos + 1) / 2.0) / (pos * neg)


def auc_pairwise(scores, labels) -> float:
    """Brute-force pair counting; reference implementation for tests."""
    scores, labels = _checked(scores, labels)
    pos_scores = scores[labels == 1]
    neg_scores = scores[labels == 0]
    if pos_scores.size == 0 or neg_scores.size == 0:
        raise MetricUndefinedError("auc needs at least one positive and one negative")
    diff = pos_scores[:, None] - neg_scores[None, :]
    wins = float((diff > 0).sum())
    ties = float((diff == 0).sum())
    return (wins + 0.5 * ties) / (pos_scores.size * neg_scores.size)


def logloss(scores, labels) -> float:
    """Mean negative Bernoulli log-likelihood; scores clamped away from 0/1."""
    scores, labels = _checked(scores, labels)
    if scores.size == 0:
        raise MetricUndefinedError("logloss of an empty set")
    p = np.clip(scores, SCORE_EPS, 1.0 - SCORE_EPS)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def auc_monotone_invariance_check(scores, labels, transform) -> bool:
    """True iff auc is unchanged under the (strictly increasing) transform."""
    scores, labels = _checked(scores, labels)
    transformed = np.asarray([transform(float(s)) for s in scores], dtype=np.float64)
    return auc(scores, labels) == auc(transformed, labels)
