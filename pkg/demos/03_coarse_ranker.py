# coding: utf-8

# # Coarse ranking: distillation, then preferences
#
# The coarse ranker scores every concept with
#
#     score = (W q) . c  +  alpha * (u . c)
#
# where q embeds the prompt, u the learner and c the concept.  It is trained
# in two stages.  First it imitates the teacher's soft labels.  Then it learns
# from what learners actually studied next.

import numpy as np

from conceptrec import encoder as enc
from conceptrec import evaluation as ev
from conceptrec import student as st
from conceptrec import synthetic
from conceptrec import teacher as tc
from conceptrec import workflow as wf
from conceptrec.dkt import DktParams

fx = synthetic.prerequisite_fixture(n_concepts=50, n_families=10, n_learners=300, seed=0)
corpus = wf.Corpus.from_records(fx.catalog, fx.records)
backend = enc.StubBackend(d=32)
E, C = enc.encode_catalog(corpus.catalog, backend)
print("learner and concept embeddings:", E.shape, C.shape)


# ## Soft labels for 200 training contexts and every held-out context

rng = np.random.default_rng(0)
train = wf.distill_contexts(corpus, 200, rng)
test = corpus.test_contexts()
labels = tc.SoftLabelStore()
teacher = tc.SyntheticTeacher(fx.prerequisites, corpus.catalog.concepts)
summary = tc.distill_corpus(train + test, corpus.sequences, corpus.catalog.concepts, teacher, tc.DistillParams(), labels)
print(f"{summary.completed} contexts labelled with {teacher.calls} teacher calls")


# ## Stage one: distillation

kd_data = wf.kd_stage_data(corpus, train, labels, backend)
kd_student, rows = st.train_student(kd_data, E, C, "kd", st.StudentHyper(lr=0.05, epochs=300, batch_size=64))
print("distillation loss:", round(rows[0][2], 4), "->", round(rows[-1][2], 4))


def report(params, name):
    teacher_view = ev.mean_metrics(wf.teacher_eval_outcomes(params, corpus, test, labels, E, C, backend), (1,))
    S = wf.coarse_table(params, corpus, test, E, C, backend)
    contexts = wf.rerank_contexts(corpus, test, S, DktParams.zeros(corpus.catalog.M, 4), 20)
    learner_view = ev.mean_metrics(wf.coarse_outcomes(contexts), (1, 5))
    print(
        f"{name:>6}: agrees with teacher HR@1 {teacher_view[('HR', 1)]:.3f} | "
        f"predicts next concept HR@1 {learner_view[('HR', 1)]:.3f}, MRR@5 {learner_view[('MRR', 5)]:.3f}"
    )


report(kd_student, "kd")

# The distilled student reproduces the teacher almost perfectly, yet rarely
# predicts the concept learners really took next: the teacher answers a
# different question (what should come before the target).


# ## Stage two: preferences, starting from the distilled weights

pref_data = wf.pref_stage_data(corpus, list(corpus.split.train_contexts), backend)
pref_student, _ = st.train_student(
    pref_data, E, C, "pref", st.StudentHyper(lr=0.05, epochs=40, batch_size=256), init=kd_student
)
report(pref_student, "pref")

# Top five unseen concepts for one learner, straight from the coarse scores:
u, prefix = test[0]
history = corpus.history(u, prefix)
q = st.encode_queries([st.render_pref_prompt(corpus.names(history))], backend)
scores = st.score_table(pref_student, q, E[[u]], C)[0]
scores[history] = -np.inf
print("history:", corpus.names(history)[-3:])
print("top five:", corpus.names(st.top_k(scores, 5)))
print("actual next:", corpus.names([corpus.next_concept(u, prefix)]))
