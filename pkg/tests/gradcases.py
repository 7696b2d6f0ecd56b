"""Finite-difference gradient cases for every kernel op and composite loss.

Each case builds random inputs and a scalar function of Tensors; the check
compares backward() against central differences for every input.
"""

import numpy as np

from conceptrec import dkt as dk
from conceptrec import numkernel as nk
from conceptrec import reranker as rr
from conceptrec import student as st
from oracles import numeric_gradient, relative_error


def _weighted(out, w):
    return nk.sum(nk.mul(out, nk.Tensor(w)))


def _unary(op, positive=False):
    def build(rng):
        x = rng.uniform(0.2, 2.0, (4, 4)) if positive else rng.standard_normal((4, 4))
        w = rng.standard_normal((4, 4))
        return [x], lambda t: _weighted(op(t[0]), w)

    return build


def _binary(op):
    def build(rng):
        a, b, w = rng.standard_normal((3, 4, 4))
        return [a, b], lambda t: _weighted(op(t[0], t[1]), w)

    return build


def _broadcast_add(rng):
    a, b, w = rng.standard_normal((4, 4)), rng.standard_normal(4), rng.standard_normal((4, 4))
    return [a, b], lambda t: _weighted(nk.add(t[0], t[1]), w)


def _scale(rng):
    a, w = rng.standard_normal((2, 4, 4))
    return [a], lambda t: _weighted(nk.scale(t[0], -1.7), w)


def _matmul(rng):
    a, b, w = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    return [a, b], lambda t: _weighted(nk.matmul(t[0], t[1]), w)


def _matvec(rng):
    a, b, w = rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal(4)
    return [a, b], lambda t: _weighted(nk.matmul(t[0], t[1]), w)


def _dot(rng):
    a, b = rng.standard_normal((2, 6))
    return [a, b], lambda t: nk.dot(t[0], t[1])


def _rowdot(rng):
    a, b = rng.standard_normal((2, 4, 4))
    w = rng.standard_normal(4)
    return [a, b], lambda t: _weighted(nk.rowdot(t[0], t[1]), w)


def _transpose(rng):
    a, w = rng.standard_normal((3, 5)), rng.standard_normal((5, 3))
    return [a], lambda t: _weighted(nk.transpose(t[0]), w)


def _reshape(rng):
    a, w = rng.standard_normal((4, 4)), rng.standard_normal((2, 8))
    return [a], lambda t: _weighted(nk.reshape(t[0], (2, 8)), w)


def _concat(rng):
    a, b, w = rng.standard_normal((4, 2)), rng.standard_normal((4, 3)), rng.standard_normal((4, 5))
    return [a, b], lambda t: _weighted(nk.concat([t[0], t[1]], axis=1), w)


def _take(rng):
    a = rng.standard_normal((4, 4))
    idx = rng.integers(0, 4, size=6)  # repeats accumulate
    w = rng.standard_normal((6, 4))
    return [a], lambda t: _weighted(nk.take(t[0], idx), w)


def _pick(rng):
    a = rng.standard_normal((4, 4))
    idx = rng.integers(0, 4, size=4)
    w = rng.standard_normal(4)
    return [a], lambda t: _weighted(nk.pick(t[0], idx), w)


def _pick2(rng):
    a = rng.standard_normal((4, 4))
    idx = rng.integers(0, 4, size=(4, 3))
    w = rng.standard_normal((4, 3))
    return [a], lambda t: _weighted(nk.pick(t[0], idx), w)


def _softmax(rng):
    a, w = rng.standard_normal((2, 4, 4))
    tau = rng.uniform(0.5, 3.0)
    return [a], lambda t: _weighted(nk.softmax(t[0], tau=tau), w)


def _log_softmax(rng):
    a, w = rng.standard_normal((2, 4, 4))
    tau = rng.uniform(0.5, 3.0)
    return [a], lambda t: _weighted(nk.log_softmax(t[0], tau=tau), w)


def _sum_axis(rng):
    a, w = rng.standard_normal((4, 4)), rng.standard_normal(4)
    return [a], lambda t: _weighted(nk.sum(t[0], axis=0), w)


def _mean(rng):
    a = rng.standard_normal((4, 4))
    w = rng.standard_normal(4)
    return [a], lambda t: _weighted(nk.mean(t[0], axis=1), w)


def _lstm(rng):
    H = 3
    x, h, c = rng.standard_normal((4, 4)), rng.standard_normal((4, H)), rng.standard_normal((4, H))
    wx, wh, b = rng.standard_normal((4, 4 * H)), rng.standard_normal((H, 4 * H)), rng.standard_normal(4 * H)
    w1, w2 = rng.standard_normal((2, 4, H))

    def f(t):
        h2, c2 = nk.lstm_cell(t[0], t[1], t[2], (t[3], t[4], t[5]))
        return nk.add(_weighted(h2, w1), _weighted(c2, w2))

    return [x, h, c, wx, wh, b], f


def _distill(rng):
    s = rng.standard_normal((4, 6))
    y = rng.dirichlet(np.ones(6), size=4)
    tau = rng.uniform(0.5, 3.0)
    return [s], lambda t: st.distill_loss(t[0], y, tau)


def _pref(rng):
    d = 4
    q, u, cp = rng.standard_normal((3, d))
    negs = rng.standard_normal((3, d))
    alpha = np.array(rng.uniform(-1, 1))
    return [q, u, cp, negs, alpha], lambda t: st.pref_loss(t[0], t[1], t[2], t[3], t[4])


def _batch_pref(rng):
    S = rng.standard_normal((4, 8))
    pos = rng.integers(0, 8, size=4)
    neg = st.sample_negatives(rng, pos, 8, 3)
    return [S], lambda t: st.batch_pref_loss(t[0], pos, neg)


def _student_scores(rng):
    d, M, n = 4, 6, 3
    X, U, C = rng.standard_normal((n, d)), rng.standard_normal((n, d)), rng.standard_normal((M, d))
    W, alpha = rng.standard_normal((d, d)), np.array(0.5)
    y = rng.dirichlet(np.ones(M), size=n)
    return [W, alpha], lambda t: st.distill_loss(st.score_tensor(st.StudentParams(t[0], t[1]), X, U, C), y, 2.0)


def _ranking(rng):
    scores = rng.standard_normal(9)
    groups = [[0, 1, 2], [3, 4], [5, 6, 7, 8]]
    return [scores], lambda t: rr.reranker_loss(t[0], groups, 4)


def _reranker_full(rng):
    d, h, M = 4, 3, 6
    E, C = rng.standard_normal((3, d)), rng.standard_normal((M, d))
    params = rr.RerankerParams.init(d, h, rng, proj=3, width=4)
    contexts = [
        rr.RerankContext(0, (1, 2), np.array([0, 3, 4]), rng.standard_normal(3), rng.standard_normal(h), 3),
        rr.RerankContext(2, (), np.array([5, 1]), rng.standard_normal(2), rng.standard_normal(h), 1),
    ]
    ctx_index, cand_ids, coarse, groups = rr.training_rows(contexts, rng, 5)
    values = [t.data.copy() for t in params.tensors()]

    def f(t):
        p = rr.RerankerParams(*t)
        feats = rr.feature_tensor(contexts, ctx_index, cand_ids, coarse, E, C, p)
        return rr.reranker_loss(rr.mlp_scores(feats, p), groups, len(contexts))

    return values, f


def _dkt_bce(rng):
    M, H = 3, 4
    params = dk.DktParams.init(M, H, rng)
    batch = [[(int(rng.integers(M)), bool(rng.integers(2))) for _ in range(n)] for n in (4, 2, 3)]
    values = [t.data.copy() for t in params.tensors()]

    def f(t):
        logits, labels = dk.next_step_logits(batch, dk.DktParams(*t))
        return dk.bce_loss(logits, labels)

    return values, f


CASES = {
    "add": _binary(nk.add),
    "add_broadcast": _broadcast_add,
    "sub": _binary(nk.sub),
    "mul": _binary(nk.mul),
    "scale": _scale,
    "matmul": _matmul,
    "matvec": _matvec,
    "dot": _dot,
    "rowdot": _rowdot,
    "transpose": _transpose,
    "reshape": _reshape,
    "concat": _concat,
    "take": _take,
    "pick": _pick,
    "pick_2d": _pick2,
    "sigmoid": _unary(nk.sigmoid),
    "tanh": _unary(nk.tanh),
    "exp": _unary(nk.exp),
    "log": _unary(nk.log, positive=True),
    "softplus": _unary(nk.softplus),
    "softmax": _softmax,
    "log_softmax": _log_softmax,
    "sum": _unary(nk.sum),
    "sum_axis": _sum_axis,
    "mean": _mean,
    "lstm_cell": _lstm,
    "distill_loss": _distill,
    "pref_loss": _pref,
    "batch_pref_loss": _batch_pref,
    "student_scores": _student_scores,
    "reranker_loss": _ranking,
    "reranker_end_to_end": _reranker_full,
    "dkt_bce": _dkt_bce,
}


def check_case(build, seed) -> float:
    """Largest relative error over all inputs of one random instance."""
    rng = np.random.default_rng(seed)
    values, f = build(rng)
    tensors = [nk.parameter(np.array(v, dtype=np.float64)) for v in values]
    analytic = nk.grad(f(tensors), tensors)
    worst = 0.0
    for i, v in enumerate(values):

        def at(x, i=i):
            args = [nk.Tensor(x if j == i else values[j]) for j in range(len(values))]
            return f(args).item()

        worst = max(worst, relative_error(analytic[i], numeric_gradient(at, v)))
    return worst
