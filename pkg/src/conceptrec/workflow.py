"""In-memory pipeline steps shared by the experiment runner and the command line.

A context is a (learner, prefix_len) pair: the history is the learner's
first prefix_len steps and the positive is the step right after.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import dkt as dk
from . import reranker as rr
from . import student as st
from . import teacher as tc
from .evaluation import RankingOutcome


@dataclass
class Corpus:
    catalog: ds.Catalog
    records: list
    split: ds.SplitSpec

    @classmethod
    def from_records(cls, catalog, records):
        return cls(catalog, list(records), ds.split_leave_one_out(ds.build_sequences(records)))

    @property
    def sequences(self):
        return self.split.sequences

    def history(self, learner, prefix) -> list[int]:
        return self.sequences[learner].concepts[:prefix]

    def steps(self, learner, prefix) -> tuple:
        return self.sequences[learner].steps[:prefix]

    def next_concept(self, learner, prefix) -> int:
        return self.sequences[learner].concepts[prefix]

    def names(self, ids) -> list[str]:
        return [self.catalog.concepts[k] for k in ids]

    def test_contexts(self):
        return [(u, len(self.sequences[u]) - 1) for u, _ in self.split.test_targets]

    def training_sequences(self):
        return [ds.LearnerSequence(u, self.split.train_steps(u)) for u in sorted(self.sequences)]


def distill_contexts(corpus: Corpus, budget, rng):
    """Training contexts for the teacher, spread evenly over target concepts."""
    contexts = list(corpus.split.train_contexts)
    return ds.stratified_subsample(contexts, budget, lambda c: corpus.next_concept(*c), rng)


def kd_prompts(corpus: Corpus, contexts):
    return [
        st.render_kd_prompt(corpus.names(corpus.history(u, p)), corpus.catalog.concepts[corpus.next_concept(u, p)])
        for u, p in contexts
    ]


def pref_prompts(corpus: Corpus, contexts):
    return [st.render_pref_prompt(corpus.names(corpus.history(u, p))) for u, p in contexts]


def labelled(contexts, labels: tc.SoftLabelStore):
    return [c for c in contexts if tc.context_key(*c) in labels]


def kd_stage_data(corpus, contexts, labels: tc.SoftLabelStore, backend) -> st.StageData:
    contexts = labelled(contexts, labels)
    Y = np.stack([labels.get(tc.context_key(*c))[1] for c in contexts]) if contexts else None
    return st.StageData(
        X=st.encode_queries(kd_prompts(corpus, contexts), backend),
        learners=np.array([u for u, _ in contexts], dtype=np.int64),
        Y=Y,
    )


def pref_stage_data(corpus, contexts, backend) -> st.StageData:
    return st.StageData(
        X=st.encode_queries(pref_prompts(corpus, contexts), backend),
        learners=np.array([u for u, _ in contexts], dtype=np.int64),
        positives=np.array([corpus.next_concept(u, p) for u, p in contexts], dtype=np.int64),
        histories=[corpus.history(u, p) for u, p in contexts],
    )


def coarse_table(params: st.StudentParams, corpus, contexts, E, C, backend, prompt="pref"):
    texts = pref_prompts(corpus, contexts) if prompt == "pref" else kd_prompts(corpus, contexts)
    X = st.encode_queries(texts, backend)
    U = E[[u for u, _ in contexts]]
    return st.score_table(params, X, U, C)


def teacher_eval_outcomes(params, corpus, contexts, labels, E, C, backend):
    """Student top list under the target-aware prompt vs the teacher's argmax.

    Contexts without labels or with a tied teacher maximum are skipped.
    """
    keep, targets = [], []
    for c in contexts:
        key = tc.context_key(*c)
        if key not in labels:
            continue
        best = tc.teacher_argmax(labels.get(key)[1])
        if best is not None:
            keep.append(c)
            targets.append(best)
    if not keep:
        return []
    S = coarse_table(params, corpus, keep, E, C, backend, prompt="kd")
    return [RankingOutcome(t, tuple(st.top_k(s, min(10, len(s))))) for t, s in zip(targets, S)]


def dkt_states(params: dk.DktParams, corpus, contexts):
    """Cognitive state after each context's history, sharing one pass per learner."""
    cache = {}
    out = []
    for u, p in contexts:
        if u not in cache:
            cache[u] = dk.hidden_states(corpus.sequences[u].steps, params)
        out.append(cache[u][p])
    return out


def rerank_contexts(corpus, contexts, S, dkt_params, pool, with_positive=True):
    states = dkt_states(dkt_params, corpus, contexts)
    out = []
    for (u, p), s, state in zip(contexts, S, states):
        cands = np.asarray(st.top_k(s, pool), dtype=np.int64)
        out.append(
            rr.RerankContext(
                learner=u,
                history=tuple(corpus.history(u, p)),
                candidates=cands,
                coarse=s[cands],
                dkt_state=state,
                positive=corpus.next_concept(u, p) if with_positive else None,
            )
        )
    return out


def coarse_outcomes(rcontexts):
    return [RankingOutcome(c.positive, tuple(int(i) for i in c.candidates)) for c in rcontexts]


def reranked_outcomes(rcontexts, E, C, params, use_dkt=True):
    ranked = rr.rerank_many(rcontexts, E, C, params, use_dkt)
    return [RankingOutcome(c.positive, tuple(r)) for c, (r, _) in zip(rcontexts, ranked)]
