"""Fine ranker over the coarse candidate list.

Four scalar matching features per (context, candidate):
  user     projected learner embedding . projected concept embedding
  history  LSTM summary of recent concept embeddings, read out to concept space, . concept
  coarse   the student's score, passed through
  dkt      projected knowledge-tracing state . concept
are fused by a 4 -> hidden -> 1 tanh MLP.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numkernel as nk

log = logging.getLogger(__name__)

HISTORY_WINDOW = 50
MAX_NEGATIVES = 10
_PAD = -1e9


class RerankError(ValueError):
    pass


@dataclass(frozen=True)
class RerankFeatures:
    f_user: float
    f_hist: float
    f_coarse: float
    f_dkt: float

    def as_array(self):
        return np.array([self.f_user, self.f_hist, self.f_coarse, self.f_dkt])


@dataclass
class RerankContext:
    learner: int
    history: tuple  # concept ids, oldest first
    candidates: np.ndarray  # coarse top-C concept ids
    coarse: np.ndarray  # coarse scores aligned with candidates
    dkt_state: np.ndarray
    positive: int | None = None

    @property
    def covered(self):
        return self.positive is not None and self.positive in set(int(c) for c in self.candidates)


@dataclass
class RerankerParams:
    P_user: nk.Tensor  # (d, d')
    P_concept: nk.Tensor  # (d, d')
    H_x: nk.Tensor  # (d, 4d') history LSTM
    H_h: nk.Tensor  # (d', 4d')
    H_b: nk.Tensor  # (4d',)
    R_hist: nk.Tensor  # (d', d)
    P_dkt: nk.Tensor  # (h, d)
    W1: nk.Tensor  # (4, width)
    b1: nk.Tensor  # (width,)
    W2: nk.Tensor  # (width,)
    b2: nk.Tensor  # ()

    NAMES = ("P_user", "P_concept", "H_x", "H_h", "H_b", "R_hist", "P_dkt", "W1", "b1", "W2", "b2")

    @classmethod
    def init(cls, d, dkt_hidden, rng: np.random.Generator, proj=64, width=32):
        if width < 4:
            raise RerankError("MLP hidden width must be at least 4")
        u = nk.init_uniform
        return cls(
            u(rng, (d, proj), name="P_user"),
            u(rng, (d, proj), name="P_concept"),
            u(rng, (d, 4 * proj), fan_in=proj, name="H_x"),
            u(rng, (proj, 4 * proj), name="H_h"),
            u(rng, (4 * proj,), fan_in=proj, name="H_b"),
            u(rng, (proj, d), name="R_hist"),
            u(rng, (dkt_hidden, d), name="P_dkt"),
            u(rng, (4, width), name="W1"),
            u(rng, (width,), fan_in=4, name="b1"),
            u(rng, (width,), name="W2"),
            nk.parameter(0.0, name="b2"),
        )

    def tensors(self):
        return [getattr(self, n) for n in self.NAMES]

    def copy(self):
        return RerankerParams(*(nk.parameter(t.data.copy(), n) for n, t in zip(self.NAMES, self.tensors())))

    def save(self, path, meta=None):
        nk.save_params(path, dict(zip(self.NAMES, self.tensors())), meta)

    @classmethod
    def load(cls, path):
        params, meta = nk.load_params(path)
        return cls(*(params[n] for n in cls.NAMES)), meta


def encode_history(histories, C, params: RerankerParams, window=HISTORY_WINDOW) -> nk.Tensor:
    """LSTM over the last `window` concept embeddings of each history, read out to (B, d).

    Histories are left-padded; a row's state stays at zero until its first
    real step, so an empty history reads out as the zero vector.
    """
    proj = params.H_h.shape[0]
    B = len(histories)
    hist = [list(h)[-window:] if window else list(h) for h in histories]
    L = max((len(h) for h in hist), default=0)
    h = nk.Tensor(np.zeros((B, proj)))
    c = nk.Tensor(np.zeros((B, proj)))
    weights = (params.H_x, params.H_h, params.H_b)
    for t in range(L):
        ids = np.array([hh[t - (L - len(hh))] if t >= L - len(hh) else 0 for hh in hist])
        live = np.array([t >= L - len(hh) for hh in hist], dtype=np.float64)
        h_new, c_new = nk.lstm_cell(nk.Tensor(C[ids]), h, c, weights)
        if live.all():
            h, c = h_new, c_new
        else:
            keep = nk.Tensor(np.repeat(live[:, None], proj, axis=1))
            drop = nk.Tensor(np.repeat(1.0 - live[:, None], proj, axis=1))
            h = nk.add(nk.mul(keep, h_new), nk.mul(drop, h))
            c = nk.add(nk.mul(keep, c_new), nk.mul(drop, c))
    return nk.matmul(h, params.R_hist)


def feature_tensor(contexts, ctx_index, cand_ids, coarse, E, C, params: RerankerParams, use_dkt=True) -> nk.Tensor:
    """(n, 4) feature rows; row i pairs contexts[ctx_index[i]] with concept cand_ids[i]."""
    ctx_index = np.asarray(ctx_index, dtype=np.int64)
    cand_ids = np.asarray(cand_ids, dtype=np.int64)
    n = len(cand_ids)
    if n == 0:
        raise RerankError("no candidates to score")
    if cand_ids.min() < 0 or cand_ids.max() >= C.shape[0]:
        raise RerankError("candidate id without a concept embedding")
    cand = nk.Tensor(C[cand_ids])

    users = nk.matmul(nk.Tensor(E[[c.learner for c in contexts]]), params.P_user)
    f_user = nk.rowdot(nk.take(users, ctx_index), nk.matmul(cand, params.P_concept))

    hist = encode_history([c.history for c in contexts], C, params)
    f_hist = nk.rowdot(nk.take(hist, ctx_index), cand)

    if use_dkt:
        states = nk.matmul(nk.Tensor(np.stack([c.dkt_state for c in contexts])), params.P_dkt)
        f_dkt = nk.rowdot(nk.take(states, ctx_index), cand)
    else:
        f_dkt = nk.Tensor(np.zeros(n))

    if not isinstance(coarse, nk.Tensor):
        coarse = nk.Tensor(np.asarray(coarse, dtype=np.float64))
    cols = [f_user, f_hist, coarse, f_dkt]
    return nk.concat([nk.reshape(f, (n, 1)) for f in cols], axis=1)


def mlp_scores(features, params: RerankerParams) -> nk.Tensor:
    hidden = nk.tanh(nk.add(nk.matmul(nk.as_tensor(features), params.W1), params.b1))
    return nk.add(nk.matmul(hidden, params.W2), params.b2)


def rerank_score(features, params: RerankerParams) -> float:
    f = features.as_array() if isinstance(features, RerankFeatures) else np.asarray(features, dtype=np.float64)
    return float(mlp_scores(f.reshape(1, 4), params).data[0])


def compute_features(context: RerankContext, candidate: int, coarse_score, E, C, params, use_dkt=True):
    f = feature_tensor([context], [0], [candidate], [coarse_score], E, C, params, use_dkt).data[0]
    return RerankFeatures(*(float(v) for v in f))


def reranker_loss(scores: nk.Tensor, groups, batch_size: int) -> nk.Tensor:
    """Softmax ranking loss over covered contexts, averaged over the whole batch.

    groups holds, per covered context, the row indices [positive, negative, ...]
    into `scores`; contexts whose positive missed the candidate list are
    simply absent and contribute zero.
    """
    if batch_size < 1:
        raise RerankError("empty batch")
    if not groups:
        return nk.Tensor(0.0)
    width = max(len(g) for g in groups)
    index = np.zeros((len(groups), width), dtype=np.int64)
    pad = np.zeros((len(groups), width))
    for i, g in enumerate(groups):
        index[i, : len(g)] = g
        pad[i, len(g) :] = _PAD
    s = nk.add(nk.reshape(nk.take(scores, index.ravel()), index.shape), nk.Tensor(pad))
    logp = nk.log_softmax(s, axis=-1)
    first = nk.pick(logp, np.zeros(len(groups), dtype=np.int64))
    return nk.scale(nk.sum(first), -1.0 / batch_size)


def training_rows(contexts, rng, max_negatives=MAX_NEGATIVES):
    """Rows (ctx_index, candidate, coarse) and loss groups for one pass."""
    ctx_index, cand_ids, coarse, groups = [], [], [], []
    for i, ctx in enumerate(contexts):
        if not ctx.covered:
            continue
        cands = [int(c) for c in ctx.candidates]
        pos_slot = cands.index(int(ctx.positive))
        neg_slots = [j for j in range(len(cands)) if j != pos_slot]
        if not neg_slots:
            continue
        if len(neg_slots) > max_negatives:
            neg_slots = sorted(rng.choice(neg_slots, size=max_negatives, replace=False).tolist())
        group = []
        for j in [pos_slot, *neg_slots]:
            group.append(len(cand_ids))
            ctx_index.append(i)
            cand_ids.append(cands[j])
            coarse.append(ctx.coarse[j])
        groups.append(group)
    return ctx_index, cand_ids, coarse, groups


@dataclass
class RerankHyper:
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    proj: int = 64
    width: int = 32
    max_negatives: int = MAX_NEGATIVES
    use_dkt: bool = True
    seed: int = 0


def batch_loss(contexts, E, C, params, rng, hyper: RerankHyper):
    ctx_index, cand_ids, coarse, groups = training_rows(contexts, rng, hyper.max_negatives)
    if not groups:
        return nk.Tensor(0.0)
    feats = feature_tensor(contexts, ctx_index, cand_ids, coarse, E, C, params, hyper.use_dkt)
    return reranker_loss(mlp_scores(feats, params), groups, len(contexts))


def train_reranker(contexts, E, C, dkt_hidden, hyper: RerankHyper, init: RerankerParams | None = None):
    """Adam over minibatches of contexts; returns (params, log rows (epoch, loss))."""
    if not contexts:
        raise RerankError("no training contexts")
    rng = np.random.default_rng(hyper.seed)
    params = init.copy() if init is not None else RerankerParams.init(C.shape[1], dkt_hidden, rng, hyper.proj, hyper.width)
    opt = nk.Adam(params.tensors(), lr=hyper.lr)
    rows = []
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(contexts))
        total = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = [contexts[i] for i in order[start : start + hyper.batch_size]]
            loss = batch_loss(batch, E, C, params, rng, hyper)
            opt.zero_grad()
            nk.backward(loss)
            opt.step()
            total += loss.item() * len(batch)
        rows.append((epoch, total / len(contexts)))
        log.info("reranker epoch %d loss %.4f", epoch, total / len(contexts))
    return params, rows


def order_by_score(ids, scores) -> list[int]:
    """Descending score, lower id first on ties."""
    ids = np.asarray(ids, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    return [int(ids[i]) for i in np.lexsort((ids, -scores))]


def rerank_many(contexts, E, C, params: RerankerParams, use_dkt=True):
    """Final order and scores for each context's candidate list."""
    ctx_index, cand_ids, coarse = [], [], []
    for i, ctx in enumerate(contexts):
        if len(ctx.candidates) == 0:
            raise RerankError("empty candidate list")
        ctx_index += [i] * len(ctx.candidates)
        cand_ids += [int(c) for c in ctx.candidates]
        coarse += [float(s) for s in ctx.coarse]
    scores = mlp_scores(feature_tensor(contexts, ctx_index, cand_ids, coarse, E, C, params, use_dkt), params).data
    out, start = [], 0
    for ctx in contexts:
        n = len(ctx.candidates)
        s = scores[start : start + n]
        ranked = order_by_score(ctx.candidates, s)
        by_id = {int(c): float(v) for c, v in zip(ctx.candidates, s)}
        out.append((ranked, [by_id[c] for c in ranked]))
        start += n
    return out


def rerank(context: RerankContext, E, C, params: RerankerParams, use_dkt=True) -> list[int]:
    return rerank_many([context], E, C, params, use_dkt)[0][0]
