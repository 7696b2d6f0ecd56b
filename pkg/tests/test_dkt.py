import numpy as np
import pytest

from conceptrec import dataset as ds
from conceptrec import dkt as dk
from oracles import roc_auc_by_pairs


def test_step_encoding():
    assert int(np.argmax(dk.encode_step(2, True, 4))) == 6
    assert int(np.argmax(dk.encode_step(0, False, 4))) == 0
    for k in range(3):
        for ok in (False, True):
            assert dk.encode_step(k, ok, 3).sum() == 1
    with pytest.raises(dk.DktError):
        dk.encode_step(3, True, 3)


def test_zero_parameters_predict_one_half():
    mastery, state = dk.dkt_forward([(0, True), (1, False)], dk.DktParams.zeros(3, 4))
    assert np.array_equal(mastery, np.full((2, 3), 0.5))
    assert np.array_equal(state, np.zeros(4))


def test_one_step_one_mastery_row(rng):
    params = dk.DktParams.init(5, 8, rng)
    mastery, _ = dk.dkt_forward([(1, True)], params)
    assert mastery.shape == (1, 5)
    empty, state = dk.dkt_forward([], params)
    assert empty.shape == (1, 5) and np.array_equal(state, np.zeros(8))


def test_states_are_deterministic_and_learner_free(rng):
    params = dk.DktParams.init(4, 6, rng)
    steps = [(0, True), (3, False), (2, True), (2, True)]
    a = dk.cognitive_state(steps, params)
    assert np.array_equal(a, dk.cognitive_state(list(steps), params))
    assert a.shape == (6,)
    assert dk.cognitive_state(steps * 10, params).shape == (6,)
    assert dk.hidden_states(steps, params).shape == (5, 6)


def test_mastery_strictly_inside_unit_interval(rng):
    params = dk.DktParams.init(4, 6, rng)
    mastery, _ = dk.dkt_forward([(int(k), bool(k % 2)) for k in rng.integers(0, 4, 40)], params)
    assert np.all((mastery > 0) & (mastery < 1))


def _exposure_data(n, seed):
    """Concept 0 is always answered correctly from its fourth exposure on."""
    rng = np.random.default_rng(seed)
    out = []
    for u in range(n):
        count, steps = [0, 0], []
        for _ in range(20):
            k = int(rng.integers(2))
            ok = True if k == 0 and count[0] >= 3 else bool(rng.random() < (0.2 if k == 0 else 0.5))
            count[k] += 1
            steps.append((k, ok))
        out.append(ds.LearnerSequence(u, tuple(steps)))
    return out


def test_trained_mastery_rises_with_exposures():
    params, rows = dk.train_dkt(_exposure_data(200, 0), 2, dk.DktHyper(hidden=8, lr=0.05, epochs=15, batch_size=32))
    assert rows[-1][1] < rows[0][1]
    by_exposure = [[] for _ in range(4)]
    for seq in _exposure_data(100, 1):
        mastery, _ = dk.dkt_forward(seq.steps, params)
        seen = 0
        for t, (k, _) in enumerate(seq.steps):
            if k == 0 and seen < 4:
                by_exposure[seen].append(mastery[t, 0])
                seen += 1
    means = [np.mean(v) for v in by_exposure]
    assert all(b > a for a, b in zip(means, means[1:])), means


def test_zero_learning_rate_keeps_parameters(rng):
    init = dk.DktParams.init(2, 4, rng)
    before = [t.data.copy() for t in init.tensors()]
    params, _ = dk.train_dkt(_exposure_data(10, 0), 2, dk.DktHyper(hidden=4, lr=0.0, epochs=2), init=init)
    assert all(np.array_equal(a, t.data) for a, t in zip(before, params.tensors()))


def test_training_needs_usable_sequences():
    with pytest.raises(dk.DktError):
        dk.train_dkt([ds.LearnerSequence(0, ((0, True),))], 2, dk.DktHyper(hidden=4))


def test_padding_does_not_change_logits(rng):
    params = dk.DktParams.init(3, 4, rng)
    short = [(0, True), (1, False), (2, True)]
    long = [(1, True)] * 7
    alone, _ = dk.next_step_logits([short], params)
    together, labels = dk.next_step_logits([short, long], params)
    assert len(labels) == 2 + 6
    # positions are time-major: t=0 gives rows (short, long), t=1 likewise
    assert np.allclose(together.data[[0, 2]], alone.data)


def test_auc_matches_pair_counting(rng):
    scores = rng.integers(0, 5, 60).astype(float)  # plenty of ties
    labels = rng.random(60) < 0.4
    assert dk.auc(scores, labels) == pytest.approx(roc_auc_by_pairs(scores, labels))
    with pytest.raises(dk.DktError):
        dk.auc([0.1, 0.2], [True, True])


def test_evaluation_and_report(tmp_path, rng):
    params = dk.DktParams.init(2, 4, rng)
    seqs = _exposure_data(30, 2)
    metrics = dk.evaluate_dkt(seqs, params)
    assert metrics["n"] == 30 * 19 and 0 <= metrics["auc"] <= 1
    final = dk.final_step_metrics(seqs, params)
    assert final["n"] == 30
    dk.write_report(tmp_path / "r.csv", final)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "metric,value"


def test_checkpoint_round_trip(tmp_path, rng):
    params = dk.DktParams.init(3, 4, rng)
    params.save(tmp_path / "d.json")
    loaded, _ = dk.DktParams.load(tmp_path / "d.json")
    steps = [(0, True), (2, False)]
    assert np.array_equal(dk.dkt_forward(steps, params)[0], dk.dkt_forward(steps, loaded)[0])
