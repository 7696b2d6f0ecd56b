"""Reference implementations written independently of the package code.

They favour obviousness over speed: loops, plain floats and no shared
helpers with the library.
"""

import math

import numpy as np


def soft_labels_by_hand(scores, epsilon):
    M = len(scores)
    top = max(scores)
    denom = top if top > 1 else 1
    p = [max(0.0, a / denom) for a in scores]
    total = sum(p)
    if total == 0:
        p = [1.0 / M] * M
    else:
        p = [v / total for v in p]
    return [(1 - epsilon) * v + epsilon / M for v in p]


def brute_force_metrics(ranked, target, K):
    """(HR, NDCG, MRR) at K by scanning the list position by position."""
    hr = ndcg = mrr = 0.0
    for position, item in enumerate(ranked, start=1):
        if position > K:
            break
        if item == target:
            hr = 1.0
            ndcg = 1.0 / math.log(position + 1, 2)
            mrr = 1.0 / position
    return hr, ndcg, mrr


def numeric_gradient(f, x, h=1e-5):
    """Central differences of the scalar function f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(x.copy())
        x[i] = old - h
        down = f(x.copy())
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(1e-6, np.abs(a) + np.abs(n))))


def softmax_reference(z):
    e = [math.exp(v - max(z)) for v in z]
    return [v / sum(e) for v in e]


def pairwise_softmax_loss(pos, negs):
    """-log(exp(pos) / (exp(pos) + sum exp(neg)))."""
    return -pos + math.log(math.exp(pos) + sum(math.exp(v) for v in negs))


def roc_auc_by_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))
