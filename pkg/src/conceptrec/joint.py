"""Optional joint fine-tuning of student and fine ranker on a weighted sum of their losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from . import reranker as rr
from . import student as st


class JointConfigError(ValueError):
    pass


@dataclass
class JointHyper:
    lambda1: float = 1.0  # distillation
    lambda2: float = 1.0  # preference
    lambda3: float = 1.0  # fine ranking
    lr: float = 1e-3
    epochs: int = 5
    kd_batch: int = 64
    pref_batch: int = 256
    tau: float = 2.0
    negatives: int = 8
    pool: int = 20
    max_negatives: int = rr.MAX_NEGATIVES
    seed: int = 0


def joint_train(
    kd: st.StageData,
    pref: st.StageData,
    pref_meta: list,
    E,
    C,
    student: st.StudentParams,
    reranker: rr.RerankerParams,
    hyper: JointHyper,
):
    """Adam on lambda1 * distill + lambda2 * preference + lambda3 * ranking.

    pref_meta holds, per preference row, (history ids, dkt state) for the
    fine ranker.  Candidate pools are drawn once, from the starting
    student, so the objective is a smooth function of the parameters; the
    coarse feature stays differentiable, so ranking gradients still reach
    the student.  One epoch is one pass over the
    distillation contexts, batched exactly as in distillation-only training;
    preference batches cycle alongside.  Terms with a zero weight are not
    computed.  Returns (student, reranker, log rows (epoch, objective)),
    where the objective is `joint_objective` on a fixed sample and row 0
    is the starting point.
    """
    lams = (hyper.lambda1, hyper.lambda2, hyper.lambda3)
    if any(lam < 0 for lam in lams):
        raise JointConfigError("loss weights must be >= 0")
    if len(kd) == 0:
        raise JointConfigError("joint training needs distillation contexts")
    student = student.copy()
    reranker = reranker.copy()
    opt = nk.Adam(student.tensors() + reranker.tensors(), lr=hyper.lr)
    rng_kd = np.random.default_rng(hyper.seed)
    rng_pref = np.random.default_rng([hyper.seed, 1])
    pref_order = np.zeros(0, dtype=np.int64)
    pools = candidate_pools(pref, E, C, student, hyper.pool)
    rows = [(0, joint_objective(kd, pref, pref_meta, E, C, student, reranker, hyper, pools))]
    for epoch in range(1, hyper.epochs + 1):
        order = rng_kd.permutation(len(kd))
        for start in range(0, len(kd), hyper.kd_batch):
            b = order[start : start + hyper.kd_batch]
            terms = []
            if hyper.lambda1 > 0:
                S = st.score_tensor(student, kd.X[b], E[kd.learners[b]], C)
                terms.append(nk.scale(st.distill_loss(S, kd.Y[b], hyper.tau), hyper.lambda1))
            if (hyper.lambda2 > 0 or hyper.lambda3 > 0) and len(pref):
                if pref_order.size < hyper.pref_batch:
                    pref_order = np.concatenate([pref_order, rng_pref.permutation(len(pref))])
                pb, pref_order = pref_order[: hyper.pref_batch], pref_order[hyper.pref_batch :]
                S = st.score_tensor(student, pref.X[pb], E[pref.learners[pb]], C)
                if hyper.lambda2 > 0:
                    neg = st.sample_negatives(rng_pref, pref.positives[pb], C.shape[0], hyper.negatives)
                    terms.append(nk.scale(st.batch_pref_loss(S, pref.positives[pb], neg), hyper.lambda2))
                if hyper.lambda3 > 0:
                    term = _ranking_term(S, pools[pb], pref, pref_meta, pb, E, C, reranker, rng_pref, hyper)
                    terms.append(nk.scale(term, hyper.lambda3))
            if not terms:
                continue
            loss = terms[0]
            for t in terms[1:]:
                loss = nk.add(loss, t)
            opt.zero_grad()
            nk.backward(loss)
            opt.step()
        rows.append((epoch, joint_objective(kd, pref, pref_meta, E, C, student, reranker, hyper, pools)))
    return student, reranker, rows


def candidate_pools(pref: st.StageData, E, C, student, pool, chunk=512):
    """Top `pool` concepts per preference row under the given student."""
    out = np.zeros((len(pref), min(pool, C.shape[0])), dtype=np.int64)
    for start in range(0, len(pref), chunk):
        pb = np.arange(start, min(start + chunk, len(pref)))
        S = st.score_table(student, pref.X[pb], E[pref.learners[pb]], C)
        out[pb] = [st.top_k(row, out.shape[1]) for row in S]
    return out


def joint_objective(kd, pref, pref_meta, E, C, student, reranker, hyper: JointHyper, pools=None, chunk=512) -> float:
    """Weighted loss over every row, with negatives drawn from a fixed stream."""
    rng = np.random.default_rng([hyper.seed, 2])
    if pools is None and hyper.lambda3 > 0:
        pools = candidate_pools(pref, E, C, student, hyper.pool)
    total = 0.0
    if hyper.lambda1 > 0 and len(kd):
        S = st.score_table(student, kd.X, E[kd.learners], C)
        total += hyper.lambda1 * st.distill_loss(nk.Tensor(S), kd.Y, hyper.tau).item()
    if (hyper.lambda2 > 0 or hyper.lambda3 > 0) and len(pref):
        pref_sum = rank_sum = 0.0
        for start in range(0, len(pref), chunk):
            pb = np.arange(start, min(start + chunk, len(pref)))
            S = nk.Tensor(st.score_table(student, pref.X[pb], E[pref.learners[pb]], C))
            if hyper.lambda2 > 0:
                neg = st.sample_negatives(rng, pref.positives[pb], C.shape[0], hyper.negatives)
                pref_sum += st.batch_pref_loss(S, pref.positives[pb], neg).item() * len(pb)
            if hyper.lambda3 > 0:
                rank_sum += _ranking_term(S, pools[pb], pref, pref_meta, pb, E, C, reranker, rng, hyper).item() * len(pb)
        total += (hyper.lambda2 * pref_sum + hyper.lambda3 * rank_sum) / len(pref)
    return float(total)


def _ranking_term(S, pools, pref, pref_meta, pb, E, C, reranker, rng, hyper):
    contexts = []
    for i, row in enumerate(pb):
        history, state = pref_meta[row]
        cands = pools[i]
        contexts.append(
            rr.RerankContext(
                learner=int(pref.learners[row]),
                history=tuple(history),
                candidates=cands,
                coarse=S.data[i, cands],
                dkt_state=state,
                positive=int(pref.positives[row]),
            )
        )
    ctx_index, cand_ids, _, groups = rr.training_rows(contexts, rng, hyper.max_negatives)
    if not groups:
        return nk.Tensor(0.0)
    coarse = nk.pick(nk.take(S, ctx_index), cand_ids)
    feats = rr.feature_tensor(contexts, ctx_index, cand_ids, coarse, E, C, reranker)
    return rr.reranker_loss(rr.mlp_scores(feats, reranker), groups, len(contexts))
