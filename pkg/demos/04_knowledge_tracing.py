# coding: utf-8

# # Knowledge tracing
#
# An LSTM reads (concept, correct) steps and predicts, for every concept,
# the probability that the next answer on it is correct.  Its hidden state
# is the learner's cognitive state, which the fine ranker consumes later.

import numpy as np

from conceptrec import dkt as dk
from conceptrec import synthetic

# Simulated learners get better at a concept the more they practise it.
train = synthetic.mastery_sequences(n_learners=500, signal=True, seed=0)
held_out = synthetic.mastery_sequences(n_learners=200, signal=True, seed=1)
print("first steps of learner 0:", train[0].steps[:6])

params, rows = dk.train_dkt(train, 10, dk.DktHyper(hidden=16, lr=0.01, epochs=10))
for epoch, loss in rows[::3]:
    print(f"epoch {epoch:2d}  loss {loss:.4f}")

print("held-out next-step metrics:", dk.evaluate_dkt(held_out, params))


# ## Mastery rises with practice
#
# Feed one learner eight correct answers on concept 2.  The predicted
# mastery of concept 2 ends well above where it started.

steps = [(2, True)] * 8
mastery, state = dk.dkt_forward(steps, params)
print("mastery of concept 2 after each step:", np.round(mastery[:, 2], 3))
print("cognitive state shape:", state.shape)


# ## A control: coin-flip answers
#
# With nothing to learn, the model should do no better than chance.

noise = synthetic.mastery_sequences(n_learners=500, signal=False, seed=0)
noise_params, _ = dk.train_dkt(noise, 10, dk.DktHyper(hidden=16, lr=0.01, epochs=10))
noise_eval = dk.evaluate_dkt(synthetic.mastery_sequences(n_learners=200, signal=False, seed=1), noise_params)
print("AUC on signal-free data:", round(noise_eval["auc"], 3))
