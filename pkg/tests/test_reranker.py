import math

import numpy as np
import pytest

from conceptrec import numkernel as nk
from conceptrec import reranker as rr


def _identity_params(width=4):
    """d = proj = dkt hidden = 2, identity projections, zero history LSTM."""
    eye = np.eye(2)
    return rr.RerankerParams(
        P_user=nk.parameter(eye),
        P_concept=nk.parameter(eye),
        H_x=nk.parameter(np.zeros((2, 8))),
        H_h=nk.parameter(np.zeros((2, 8))),
        H_b=nk.parameter(np.zeros(8)),
        R_hist=nk.parameter(eye),
        P_dkt=nk.parameter(eye),
        W1=nk.parameter(np.zeros((4, width))),
        b1=nk.parameter(np.zeros(width)),
        W2=nk.parameter(np.zeros(width)),
        b2=nk.parameter(0.0),
    )


def _monotone(params, column):
    """MLP that passes one feature through a rising tanh."""
    W1 = np.zeros((4, params.W1.shape[1]))
    W1[column, 0] = 0.5
    W2 = np.zeros(params.W1.shape[1])
    W2[0] = 2.0
    params.W1, params.W2 = nk.parameter(W1), nk.parameter(W2)
    return params


E = np.array([[1.0, 2.0]])
C = np.array([[0.5, -1.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _ctx(cands, coarse, history=(), state=(3.0, 1.0), positive=None):
    return rr.RerankContext(0, tuple(history), np.array(cands), np.array(coarse, float), np.array(state), positive)


def test_features_match_hand_arithmetic_without_history():
    f = rr.compute_features(_ctx([0], [0.7]), 0, 0.7, E, C, _identity_params())
    assert f == rr.RerankFeatures(f_user=-1.5, f_hist=0.0, f_coarse=0.7, f_dkt=0.5)


def test_history_feature_matches_hand_lstm_step():
    params = _identity_params()
    b = np.zeros(8)
    b[0:2], b[2:4], b[4:6], b[6:8] = 0.4, -1.0, 0.9, 1.2  # input, forget, candidate, output gates
    params.H_b = nk.parameter(b)
    sig = lambda z: 1 / (1 + math.exp(-z))  # noqa: E731
    c1 = sig(0.4) * math.tanh(0.9)
    h1 = sig(1.2) * math.tanh(c1)
    f = rr.compute_features(_ctx([2], [0.0], history=(3,)), 2, 0.0, E, C, params)
    assert f.f_hist == pytest.approx(h1 * 1.0)


def test_orthogonal_candidate_has_zero_matching_features():
    f = rr.compute_features(_ctx([1], [0.2], history=(2, 3)), 1, 0.2, E, C, _identity_params())
    assert (f.f_user, f.f_hist, f.f_dkt) == (0.0, 0.0, 0.0)


def test_zero_mlp_returns_output_bias():
    params = _identity_params()
    params.b2 = nk.parameter(0.37)
    for feats in ([1, 2, 3, 4], [-5, 0, 2, 9]):
        assert rr.rerank_score(np.array(feats, float), params) == pytest.approx(0.37)


def test_identical_features_identical_scores(rng):
    params = rr.RerankerParams.init(2, 2, rng, proj=3, width=5)
    f = rr.RerankFeatures(0.1, -0.2, 0.3, 0.4)
    assert rr.rerank_score(f, params) == rr.rerank_score(f, params)


def test_score_rises_with_coarse_feature_under_monotone_mlp():
    params = _monotone(_identity_params(), column=2)
    scores = [rr.rerank_score(np.array([0.0, 0.0, c, 0.0]), params) for c in (-1.0, 0.0, 0.5, 2.0)]
    assert all(b > a for a, b in zip(scores, scores[1:]))


def test_order_follows_dkt_feature_when_only_it_differs():
    params = _monotone(_identity_params(), column=3)
    # with a zero user embedding only the knowledge-state feature varies
    ctx = rr.RerankContext(0, (), np.array([2, 3, 1]), np.zeros(3), np.array([1.0, 2.0]))
    ranked = rr.rerank(ctx, np.zeros((1, 2)), C, params)
    assert ranked == [3, 2, 1]  # f_dkt = 2, 1, 0


def test_single_candidate_and_tie_rules(rng):
    params = _identity_params()
    assert rr.rerank(_ctx([2], [0.0]), E, C, params) == [2]
    assert rr.rerank(_ctx([3, 0, 2], [0.0, 0.0, 0.0]), E, C, params) == [0, 2, 3]
    assert rr.order_by_score([5, 1, 3], [1.0, 2.0, 1.0]) == [1, 3, 5]


def test_ranking_loss_examples():
    equal = rr.reranker_loss(nk.Tensor([0.4, 0.4]), [[0, 1]], 1)
    assert equal.item() == pytest.approx(math.log(2))
    one_zero = rr.reranker_loss(nk.Tensor([1.0, 0.0]), [[0, 1]], 1)
    assert one_zero.item() == pytest.approx(0.3133, abs=1e-4)


def test_loss_averages_over_whole_batch():
    covered = rr.reranker_loss(nk.Tensor([1.0, 0.0]), [[0, 1]], 1).item()
    assert rr.reranker_loss(nk.Tensor([1.0, 0.0]), [[0, 1]], 4).item() == pytest.approx(covered / 4)


def test_uncovered_positives_contribute_nothing(rng):
    params = rr.RerankerParams.init(2, 2, rng, proj=2, width=4)
    contexts = [_ctx([0, 2], [0.3, 0.1], positive=3), _ctx([2, 3], [0.0, 0.2], positive=1)]
    loss = rr.batch_loss(contexts, E, C, params, rng, rr.RerankHyper())
    grads = nk.grad(loss, params.tensors())
    assert loss.item() == 0.0
    assert all(not np.any(g) for g in grads)


def test_training_rows_cap_negatives(rng):
    ctx = _ctx(list(range(4)), [0.0] * 4, positive=2)
    ctx_index, cand_ids, coarse, groups = rr.training_rows([ctx], rng, max_negatives=2)
    assert len(groups) == 1 and len(groups[0]) == 3
    assert cand_ids[groups[0][0]] == 2


def test_training_lowers_loss_and_is_deterministic():
    rng = np.random.default_rng(0)
    M, d = 12, 6
    Cm = rng.standard_normal((M, d))
    Em = rng.standard_normal((5, d))
    contexts = []
    for i in range(60):
        state = rng.standard_normal(3)
        cands = rng.permutation(M)[:6]
        # the positive is the candidate best aligned with the knowledge state
        pos = int(cands[np.argmax(Cm[cands, :3] @ state)])
        contexts.append(rr.RerankContext(i % 5, tuple(rng.integers(0, M, 3)), cands, rng.standard_normal(6), state, pos))
    hyper = rr.RerankHyper(lr=0.02, epochs=15, batch_size=20, proj=4, width=8)
    a, rows = rr.train_reranker(contexts, Em, Cm, 3, hyper)
    b, rows_b = rr.train_reranker(contexts, Em, Cm, 3, hyper)
    assert rows[-1][1] < rows[0][1]
    assert rows == rows_b
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.tensors(), b.tensors()))


def test_errors(rng):
    params = rr.RerankerParams.init(2, 2, rng, proj=2, width=4)
    with pytest.raises(rr.RerankError):
        rr.rerank(_ctx([], []), E, C, params)
    with pytest.raises(rr.RerankError):
        rr.rerank(_ctx([9], [0.0]), E, C, params)
    with pytest.raises(rr.RerankError):
        rr.reranker_loss(nk.Tensor([0.0]), [], 0)
    with pytest.raises(rr.RerankError):
        rr.RerankerParams.init(2, 2, rng, width=2)


def test_checkpoint_round_trip(tmp_path, rng):
    params = rr.RerankerParams.init(2, 2, rng, proj=3, width=4)
    params.save(tmp_path / "r.json")
    loaded, _ = rr.RerankerParams.load(tmp_path / "r.json")
    ctx = _ctx([0, 2, 3], [0.1, 0.5, -0.2], history=(1, 2))
    assert rr.rerank_many([ctx], E, C, params) == rr.rerank_many([ctx], E, C, loaded)
