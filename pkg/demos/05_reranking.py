# coding: utf-8

# # Fine ranking with the cognitive state
#
# The coarse ranker proposes 20 candidates.  A small MLP re-scores each one
# from four features: learner match, history match, the coarse score and
# the match between the candidate and the knowledge-tracing state.
#
# On the readiness fixture, learners retry a concept until they get it
# right.  Whether the next step is a retry or a new unit therefore depends
# on readiness, which only the correctness history reveals.

import numpy as np

from conceptrec import dkt as dk
from conceptrec import encoder as enc
from conceptrec import evaluation as ev
from conceptrec import reranker as rr
from conceptrec import student as st
from conceptrec import synthetic
from conceptrec import workflow as wf

fx = synthetic.readiness_fixture(seed=0)
corpus = wf.Corpus.from_records(fx.catalog, fx.records)
backend = enc.StubBackend(d=32)
E, C = enc.encode_catalog(corpus.catalog, backend)
train, test = list(corpus.split.train_contexts), corpus.test_contexts()

# A preference-trained coarse ranker (distillation skipped for brevity).
pref = wf.pref_stage_data(corpus, train, backend)
student, _ = st.train_student(pref, E, C, "pref", st.StudentHyper(lr=0.05, epochs=40, batch_size=256))

# Knowledge tracing on the training part of every sequence.
tracer, _ = dk.train_dkt(corpus.training_sequences(), corpus.catalog.M, dk.DktHyper(epochs=10))


def pools(contexts):
    S = wf.coarse_table(student, corpus, contexts, E, C, backend)
    return wf.rerank_contexts(corpus, contexts, S, tracer, pool=20)


train_pools, test_pools = pools(train), pools(test)
coarse = ev.mean_metrics(wf.coarse_outcomes(test_pools), (5,))[("NDCG", 5)]
print(f"coarse only       NDCG@5 {coarse:.4f}")

trained = {}
for use_dkt in (True, False):
    hyper = rr.RerankHyper(lr=0.02, epochs=5, batch_size=256, use_dkt=use_dkt)
    params, rows = rr.train_reranker(train_pools, E, C, tracer.hidden, hyper)
    trained[use_dkt] = params
    ndcg = ev.mean_metrics(wf.reranked_outcomes(test_pools, E, C, params, use_dkt), (5,))[("NDCG", 5)]
    label = "with state" if use_dkt else "without state"
    print(f"reranked {label:<13} NDCG@5 {ndcg:.4f}  ({ndcg / coarse - 1:+.1%})")

# Dropping the knowledge-tracing feature removes most of the gain.

# The four features for the first test candidate list:
ctx = test_pools[0]
f = rr.compute_features(ctx, int(ctx.candidates[0]), float(ctx.coarse[0]), E, C, trained[True])
print(f)
