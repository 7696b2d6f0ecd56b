"""Personalized coarse ranker: prompt-conditioned dot-product scores over all concepts.

A context's ranking prompt is embedded with the encoder backend, projected
by a learned d x d matrix and scored against every concept embedding, plus
a learned multiple of the learner's own affinity to each concept.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .encoder import CONCEPT_ANCHOR, AnchorPrompt, encode_many

log = logging.getLogger(__name__)


class StudentConfigError(ValueError):
    pass


def render_kd_prompt(history, target) -> str:
    return f"History: {' | '.join(history)}\nTarget: {target}\nRecommend the next concept:"


def render_pref_prompt(history) -> str:
    return f"History: {' | '.join(history)}\nRecommend the next concept:"


def query_prompt(text: str) -> AnchorPrompt:
    # ranking prompts carry no anchor token; the backend reads the whole prompt
    return AnchorPrompt(text, CONCEPT_ANCHOR)


def encode_queries(texts, backend) -> np.ndarray:
    return encode_many([query_prompt(t) for t in texts], backend)


@dataclass
class StudentParams:
    W: nk.Tensor
    alpha: nk.Tensor

    @classmethod
    def init(cls, d, rng: np.random.Generator):
        return cls(nk.init_uniform(rng, (d, d), name="W"), nk.parameter(0.5, name="alpha"))

    def tensors(self):
        return [self.W, self.alpha]

    def copy(self):
        return StudentParams(nk.parameter(self.W.data.copy(), "W"), nk.parameter(self.alpha.data.copy(), "alpha"))

    def save(self, path, meta=None):
        nk.save_params(path, {"W": self.W, "alpha": self.alpha}, meta)

    @classmethod
    def load(cls, path):
        params, meta = nk.load_params(path)
        return cls(params["W"], params["alpha"]), meta


def coarse_scores(q, e_u, C, alpha) -> np.ndarray:
    """s_j = q . c_j + alpha * (e_u . c_j) for every concept row c_j of C."""
    q, e_u, C = np.asarray(q, float), np.asarray(e_u, float), np.asarray(C, float)
    if C.ndim != 2 or q.shape != (C.shape[1],) or e_u.shape != q.shape:
        raise nk.ShapeError(f"dimension mismatch: q {q.shape}, e_u {e_u.shape}, C {C.shape}")
    return C @ q + float(alpha) * (C @ e_u)


def query_vectors(params: StudentParams, X) -> np.ndarray:
    return np.asarray(X) @ params.W.data.T


def score_table(params: StudentParams, X, U, C) -> np.ndarray:
    """Scores for many contexts at once: rows of X are prompt embeddings, rows of U learner embeddings."""
    return query_vectors(params, X) @ C.T + float(params.alpha.data) * (np.asarray(U) @ C.T)


def score_tensor(params: StudentParams, X, U, C) -> nk.Tensor:
    """Differentiable version of score_table, (n, M)."""
    C_t = nk.Tensor(np.asarray(C).T)
    Q = nk.matmul(nk.Tensor(X), nk.transpose(params.W))
    return nk.add(nk.matmul(Q, C_t), nk.mul(params.alpha, nk.Tensor(np.asarray(U) @ np.asarray(C).T)))


def distill_loss(s, y, tau) -> nk.Tensor:
    """Cross-entropy of softmax(s / tau) against the soft labels y.

    For a matrix of scores the per-row losses are averaged.
    """
    if tau <= 0:
        raise StudentConfigError("tau must be positive")
    s = nk.as_tensor(s)
    y = np.asarray(y, dtype=np.float64)
    ce = nk.scale(nk.sum(nk.mul(nk.Tensor(y), nk.log_softmax(s, tau=tau, axis=-1)), axis=-1), -1.0)
    return nk.mean(ce) if ce.data.ndim else ce


def pref_loss(q, e_u, c_plus, negatives, alpha) -> nk.Tensor:
    """-log of the positive's softmax share among the positive and K negatives."""
    negatives = nk.as_tensor(negatives)
    if negatives.data.ndim != 2 or negatives.shape[0] == 0:
        raise StudentConfigError("pref_loss needs at least one negative")
    cands = nk.concat([nk.reshape(nk.as_tensor(c_plus), (1, -1)), negatives], axis=0)
    u = nk.as_tensor(e_u)
    phi = nk.add(nk.matmul(cands, nk.as_tensor(q)), nk.mul(alpha, nk.matmul(cands, u)))
    return nk.scale(nk.sum(nk.pick(nk.reshape(nk.log_softmax(phi), (1, -1)), [0])), -1.0)


def batch_pref_loss(S: nk.Tensor, positives, negatives) -> nk.Tensor:
    """Mean contrastive loss for a score table S (n, M); negatives is (n, K)."""
    negatives = np.asarray(negatives, dtype=np.int64)
    if negatives.ndim != 2 or negatives.shape[1] == 0:
        raise StudentConfigError("at least one negative per context is required")
    idx = np.concatenate([np.asarray(positives, dtype=np.int64)[:, None], negatives], axis=1)
    logp = nk.log_softmax(nk.pick(S, idx), axis=-1)
    return nk.scale(nk.mean(nk.pick(logp, np.zeros(len(idx), dtype=np.int64))), -1.0)


def sample_negatives(rng, positives, M, K, histories=None):
    """K distinct negatives per context, uniform over concepts other than the positive.

    When `histories` is given, concepts already in the context's history
    are excluded as well (falling back to the full pool if too few remain).
    """
    if K < 1:
        raise StudentConfigError("the preference stage needs K >= 1 negatives")
    if K > M - 1:
        raise StudentConfigError(f"K={K} negatives requested but only {M - 1} concepts are available")
    positives = np.asarray(positives, dtype=np.int64)
    rows = np.arange(len(positives))
    keys = rng.random((len(positives), M))
    if histories is not None:
        for i, hist in enumerate(histories):
            banned = np.unique(np.asarray(hist, dtype=np.int64))
            if M - 1 - np.count_nonzero(banned != positives[i]) >= K:
                keys[i, banned] = np.inf
    keys[rows, positives] = np.inf
    # the K smallest random keys are a uniform draw without replacement
    return np.argsort(keys, axis=1, kind="stable")[:, :K]


@dataclass
class StudentHyper:
    lr: float = 0.05
    epochs: int = 600
    batch_size: int = 64
    tau: float = 2.0
    negatives: int = 8
    exclude_history: bool = False
    patience: int = 50
    min_delta: float = 1e-6
    seed: int = 0


@dataclass
class StageData:
    """Inputs for one training stage.

    X holds the prompt embeddings, learners the learner id per row.  The
    kd stage reads soft labels Y; the pref stage reads positives and the
    history concept ids used for optional negative filtering.
    """

    X: np.ndarray
    learners: np.ndarray
    Y: np.ndarray | None = None
    positives: np.ndarray | None = None
    histories: list = field(default_factory=list)

    def __len__(self):
        return len(self.learners)


def train_student(data: StageData, E, C, stage: str, hyper: StudentHyper, init: StudentParams | None = None):
    """Minibatch Adam on the stage loss; returns (params, log rows (epoch, stage, loss))."""
    if stage not in ("kd", "pref"):
        raise StudentConfigError(f"unknown stage {stage!r}")
    if stage == "kd" and data.Y is None:
        raise StudentConfigError("the kd stage needs a soft-label store; run distill first")
    if stage == "pref":
        if data.positives is None:
            raise StudentConfigError("the pref stage needs positives")
        if hyper.negatives < 1:
            raise StudentConfigError("the preference stage needs K >= 1 negatives")
    if len(data) == 0:
        raise StudentConfigError("no training contexts")

    rng = np.random.default_rng(hyper.seed)
    d = C.shape[1]
    params = init.copy() if init is not None else StudentParams.init(d, rng)
    opt = nk.Adam(params.tensors(), lr=hyper.lr)
    U_all = np.asarray(E)
    n = len(data)
    rows = []
    best, stale = np.inf, 0
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            b = order[start : start + hyper.batch_size]
            S = score_tensor(params, data.X[b], U_all[data.learners[b]], C)
            if stage == "kd":
                loss = distill_loss(S, data.Y[b], hyper.tau)
            else:
                hist = [data.histories[i] for i in b] if hyper.exclude_history else None
                neg = sample_negatives(rng, data.positives[b], C.shape[0], hyper.negatives, hist)
                loss = batch_pref_loss(S, data.positives[b], neg)
            opt.zero_grad()
            nk.backward(loss)
            opt.step()
            total += loss.item() * len(b)
        epoch_loss = total / n
        rows.append((epoch, stage, epoch_loss))
        if epoch_loss < best - hyper.min_delta:
            best, stale = epoch_loss, 0
        else:
            stale += 1
            if hyper.patience and stale >= hyper.patience:
                log.info("%s stage stopped early at epoch %d", stage, epoch)
                break
    return params, rows


def write_training_log(path, rows, append=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not append or not path.exists()
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["epoch", "stage", "loss"])
        for epoch, stage, loss in rows:
            w.writerow([epoch, stage, f"{loss:.10g}"])


def top_k(s, K) -> list[int]:
    """Indices of the K largest scores; equal scores rank the lower id first."""
    s = np.asarray(s)
    if K > s.size:
        raise ValueError(f"K={K} exceeds the {s.size} available concepts")
    if K < 0:
        raise ValueError("K must be non-negative")
    return [int(i) for i in np.argsort(-s, kind="stable")[:K]]
