"""Deep knowledge tracing: an LSTM over (concept, correctness) steps.

Each step is one-hot encoded at concept + M * correct.  After consuming
step t the model predicts, for every concept, the probability that the
learner answers it correctly next.  The hidden state doubles as the
learner's cognitive state for the fine ranker.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import numkernel as nk

log = logging.getLogger(__name__)

MAX_STEPS = 200


class DktError(ValueError):
    pass


def encode_step(concept: int, correct: bool, M: int) -> np.ndarray:
    if not 0 <= concept < M:
        raise DktError(f"concept id {concept} outside [0, {M})")
    x = np.zeros(2 * M)
    x[concept + M * int(bool(correct))] = 1.0
    return x


@dataclass
class DktParams:
    W_x: nk.Tensor  # (2M, 4h)
    W_h: nk.Tensor  # (h, 4h)
    b: nk.Tensor  # (4h,)
    W_out: nk.Tensor  # (h, M)
    b_out: nk.Tensor  # (M,)

    NAMES = ("W_x", "W_h", "b", "W_out", "b_out")

    @property
    def M(self):
        return self.W_out.shape[1]

    @property
    def hidden(self):
        return self.W_h.shape[0]

    @classmethod
    def init(cls, M, hidden, rng: np.random.Generator):
        if hidden < 4:
            raise DktError("hidden size must be at least 4")
        return cls(
            nk.init_uniform(rng, (2 * M, 4 * hidden), fan_in=hidden, name="W_x"),
            nk.init_uniform(rng, (hidden, 4 * hidden), name="W_h"),
            nk.init_uniform(rng, (4 * hidden,), fan_in=hidden, name="b"),
            nk.init_uniform(rng, (hidden, M), name="W_out"),
            nk.init_uniform(rng, (M,), fan_in=hidden, name="b_out"),
        )

    @classmethod
    def zeros(cls, M, hidden):
        return cls(
            nk.parameter(np.zeros((2 * M, 4 * hidden))),
            nk.parameter(np.zeros((hidden, 4 * hidden))),
            nk.parameter(np.zeros(4 * hidden)),
            nk.parameter(np.zeros((hidden, M))),
            nk.parameter(np.zeros(M)),
        )

    def tensors(self):
        return [getattr(self, n) for n in self.NAMES]

    def save(self, path, meta=None):
        nk.save_params(path, dict(zip(self.NAMES, self.tensors())), meta)

    @classmethod
    def load(cls, path):
        params, meta = nk.load_params(path)
        return cls(*(params[n] for n in cls.NAMES)), meta


def _run(steps, params: DktParams):
    """Hidden states before any step and after each step, as numpy (T + 1, h)."""
    M, H = params.M, params.hidden
    weights = (params.W_x, params.W_h, params.b)
    h = nk.Tensor(np.zeros(H))
    c = nk.Tensor(np.zeros(H))
    states = [h.data]
    for k, ok in steps:
        h, c = nk.lstm_cell(nk.Tensor(encode_step(k, ok, M)), h, c, weights)
        states.append(h.data)
    return np.stack(states)


def hidden_states(steps, params: DktParams) -> np.ndarray:
    """Row t is the cognitive state after consuming the first t steps."""
    return _run(list(steps), params)


def dkt_forward(steps, params: DktParams):
    """Returns (mastery, final hidden state).

    mastery has one row per step: row t predicts the next step after
    steps[: t + 1].  An empty sequence yields the zero state and a single
    row sigmoid(b_out).
    """
    steps = list(steps)
    states = _run(steps, params)
    rows = states[1:] if steps else states
    logits = rows @ params.W_out.data + params.b_out.data
    return expit(logits), states[-1]


def cognitive_state(steps, params: DktParams) -> np.ndarray:
    return _run(list(steps), params)[-1]


def _pad(batch, M):
    T = max(len(s) for s in batch)
    B = len(batch)
    concept = np.zeros((B, T), dtype=np.int64)
    correct = np.zeros((B, T))
    valid = np.zeros((B, T), dtype=bool)
    for i, s in enumerate(batch):
        for t, (k, ok) in enumerate(s):
            concept[i, t] = k
            correct[i, t] = float(ok)
            valid[i, t] = True
    return concept, correct, valid


def next_step_logits(batch, params: DktParams):
    """Logits for each observed next step of each sequence in the batch.

    Returns (logits Tensor (P,), labels (P,)) over the P positions that have
    a successor.  Sequences are right-padded; padded steps never reach the
    output.
    """
    M, H = params.M, params.hidden
    concept, correct, valid = _pad(batch, M)
    B, T = concept.shape
    weights = (params.W_x, params.W_h, params.b)
    h = nk.Tensor(np.zeros((B, H)))
    c = nk.Tensor(np.zeros((B, H)))
    pieces, labels = [], []
    for t in range(T - 1):
        x = np.zeros((B, 2 * M))
        x[np.arange(B), concept[:, t] + M * correct[:, t].astype(np.int64)] = 1.0
        h, c = nk.lstm_cell(nk.Tensor(x), h, c, weights)
        rows = np.flatnonzero(valid[:, t + 1])
        if rows.size == 0:
            continue
        logits = nk.add(nk.matmul(nk.take(h, rows), params.W_out), params.b_out)
        pieces.append(nk.pick(logits, concept[rows, t + 1]))
        labels.append(correct[rows, t + 1])
    if not pieces:
        return None, np.zeros(0)
    return nk.concat(pieces, axis=0), np.concatenate(labels)


def bce_loss(logits: nk.Tensor, labels) -> nk.Tensor:
    """Mean binary cross-entropy on logits: softplus(z) - y z."""
    y = nk.Tensor(np.asarray(labels, dtype=np.float64))
    return nk.mean(nk.sub(nk.softplus(logits), nk.mul(y, logits)))


@dataclass
class DktHyper:
    hidden: int = 64
    lr: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    max_steps: int = MAX_STEPS
    seed: int = 0


def _truncate(seq_steps, max_steps):
    steps = list(seq_steps)
    return steps[-max_steps:] if max_steps else steps


def train_dkt(sequences, M, hyper: DktHyper, init: DktParams | None = None):
    """Adam on next-step binary cross-entropy; returns (params, log rows (epoch, loss))."""
    batches = [_truncate(s.steps, hyper.max_steps) for s in sequences]
    for s in batches:
        for step in s:
            if len(step) != 2 or step[1] is None:
                raise DktError("every step needs a correctness flag")
    batches = [s for s in batches if len(s) >= 2]
    if not batches:
        raise DktError("no sequence has two or more steps")
    rng = np.random.default_rng(hyper.seed)
    params = init if init is not None else DktParams.init(M, hyper.hidden, rng)
    opt = nk.Adam(params.tensors(), lr=hyper.lr)
    rows = []
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(batches))
        total, count = 0.0, 0
        for start in range(0, len(order), hyper.batch_size):
            batch = [batches[i] for i in order[start : start + hyper.batch_size]]
            logits, labels = next_step_logits(batch, params)
            loss = bce_loss(logits, labels)
            opt.zero_grad()
            nk.backward(loss)
            opt.step()
            total += loss.item() * labels.size
            count += labels.size
        rows.append((epoch, total / count))
        log.info("dkt epoch %d loss %.4f", epoch, total / count)
    return params, rows


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DktError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate_dkt(sequences, params: DktParams, max_steps=MAX_STEPS, batch_size=64) -> dict:
    """Next-step AUC and BCE over held-out sequences."""
    seqs = [_truncate(s.steps, max_steps) for s in sequences]
    seqs = [s for s in seqs if len(s) >= 2]
    zs, ys = [], []
    for start in range(0, len(seqs), batch_size):
        logits, labels = next_step_logits(seqs[start : start + batch_size], params)
        zs.append(logits.data)
        ys.append(labels)
    z, y = np.concatenate(zs), np.concatenate(ys)
    bce = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return {"auc": auc(z, y), "bce": bce, "n": int(y.size)}


def final_step_metrics(sequences, params: DktParams) -> dict:
    """AUC and BCE for predicting each sequence's last answer from the steps before it."""
    z, y = [], []
    for s in sequences:
        if len(s.steps) < 2:
            continue
        h = hidden_states(s.steps[:-1], params)[-1]
        k, ok = s.steps[-1]
        z.append(float(h @ params.W_out.data[:, k] + params.b_out.data[k]))
        y.append(float(ok))
    z, y = np.asarray(z), np.asarray(y)
    if z.size == 0:
        raise DktError("no sequence has a held-out step")
    bce = float(np.mean(np.logaddexp(0.0, z) - y * z))
    try:
        score = auc(z, y)
    except DktError:
        score = float("nan")
    return {"auc": score, "bce": bce, "n": int(y.size)}


def write_report(path, metrics: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in ("auc", "bce", "n"):
            w.writerow([key, f"{metrics[key]:.10g}" if key != "n" else metrics[key]])
