import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst
from hypothesis.extra.numpy import arrays

from conceptrec import numkernel as nk
from gradcases import CASES, check_case


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradient_matches_central_differences(name):
    worst = max(check_case(CASES[name], seed) for seed in range(20))
    assert worst < 1e-4, f"{name}: relative error {worst:.2e}"


def test_softmax_examples():
    assert np.allclose(nk.softmax([0.0, 0.0]).data, [0.5, 0.5])
    assert np.allclose(nk.softmax([math.log(3), 0.0]).data, [0.75, 0.25])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 5), elements=hst.floats(-30, 30)), hst.floats(0.1, 5.0))
def test_softmax_rows_are_distributions(z, tau):
    p = nk.softmax(z, tau=tau).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(np.exp(nk.log_softmax(z, tau=tau).data), p)


def test_softmax_rejects_non_positive_temperature():
    with pytest.raises(ValueError):
        nk.softmax([1.0, 2.0], tau=0.0)


def test_lstm_cell_zero_weights_and_inputs():
    H = 4
    zeros = (nk.Tensor(np.zeros((3, 4 * H))), nk.Tensor(np.zeros((H, 4 * H))), nk.Tensor(np.zeros(4 * H)))
    h, c = nk.lstm_cell(nk.Tensor(np.zeros(3)), nk.Tensor(np.zeros(H)), nk.Tensor(np.zeros(H)), zeros)
    assert np.array_equal(h.data, np.zeros(H))
    assert np.array_equal(c.data, np.zeros(H))


def test_linear_gradient_is_exact():
    x = np.array([0.5, -2.0, 3.25])
    w = nk.parameter(np.array([1.0, 2.0, 3.0]))
    (g,) = nk.grad(nk.dot(w, nk.Tensor(x)), [w])
    assert np.array_equal(g, x)


def test_unused_parameter_gets_zero_gradient():
    a, b = nk.parameter(np.ones(3)), nk.parameter(np.ones(3))
    ga, gb = nk.grad(nk.sum(nk.mul(a, a)), [a, b])
    assert np.allclose(ga, 2.0)
    assert np.array_equal(gb, np.zeros(3))


def test_shared_subexpression_accumulates():
    x = nk.parameter(np.array(3.0))
    y = nk.mul(x, x)
    (g,) = nk.grad(nk.add(y, y), [x])
    assert g == pytest.approx(12.0)


def test_adam_zero_gradient_leaves_parameters():
    p = nk.parameter(np.array([1.0, -1.0]))
    opt = nk.Adam([p], lr=0.1)
    for _ in range(5):
        opt.step([np.zeros(2)])
    assert np.array_equal(p.data, [1.0, -1.0])


def test_adam_constant_gradient_moves_by_lr():
    p = nk.parameter(np.zeros(3))
    opt = nk.Adam([p], lr=0.01)
    before = p.data.copy()
    for _ in range(200):
        before = p.data.copy()
        opt.step([np.array([0.3, -5.0, 1e-3])])
    step = np.abs(p.data - before)
    assert np.allclose(step, 0.01, rtol=1e-3)


def test_adam_zero_learning_rate_is_identity(rng):
    p = nk.parameter(rng.standard_normal((3, 3)))
    start = p.data.copy()
    opt = nk.Adam([p], lr=0.0)
    for _ in range(10):
        opt.step([rng.standard_normal((3, 3))])
    assert np.array_equal(p.data, start)


def test_adam_rejects_mismatched_gradient():
    opt = nk.Adam([nk.parameter(np.zeros(2))])
    with pytest.raises(nk.ShapeError):
        opt.step([np.zeros(3)])


def test_shape_errors():
    with pytest.raises(nk.ShapeError):
        nk.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(nk.ShapeError):
        nk.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(nk.ShapeError):
        nk.backward(nk.parameter(np.ones(2)))


def test_non_finite_values_are_refused():
    with pytest.raises(nk.NonFiniteError):
        nk.Tensor([1.0, np.nan])
    with pytest.raises(nk.NonFiniteError):
        nk.log(nk.Tensor([0.0]))
    with pytest.raises(nk.NonFiniteError):
        nk.exp(nk.Tensor([1000.0]))


def test_sigmoid_and_softplus_are_stable_at_extremes():
    z = nk.Tensor([-800.0, 0.0, 800.0])
    assert np.allclose(nk.sigmoid(z).data, [0.0, 0.5, 1.0])
    assert np.allclose(nk.softplus(z).data, [0.0, math.log(2), 800.0])


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"W": nk.parameter(rng.standard_normal((3, 2))), "b": nk.parameter(0.25)}
    nk.save_params(tmp_path / "p.json", params, {"note": "x"})
    loaded, meta = nk.load_params(tmp_path / "p.json")
    assert meta == {"note": "x"}
    assert np.array_equal(loaded["W"].data, params["W"].data)
    assert loaded["b"].data.shape == ()
    assert loaded["W"].requires_grad


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        nk.load_params(tmp_path / "x.json")


def test_init_uniform_bounds(rng):
    t = nk.init_uniform(rng, (16, 8))
    assert np.all(np.abs(t.data) <= 1 / math.sqrt(16))
    assert t.requires_grad
