import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shinemeg.exceptions import DegenerateTarget, LengthMismatch, ShapeMismatch, TooShort, ZeroVariance
from shinemeg.signal_core import (
    ScoreSequence,
    neg_pearson_loss,
    neg_pearson_loss_torch,
    pearson_corr,
    row_stats,
    trim_edges,
    zscore_normalize,
)


def central_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


@pytest.mark.parametrize(
    "x, y, expected",
    [
        ([1, 2, 3], [2, 4, 6], 1.0),
        ([1, 2, 3], [3, 2, 1], -1.0),
        ([1, 2, 3, 4], [1, 3, 2, 4], 0.8),
    ],
)
def test_pearson_fixtures(x, y, expected):
    assert pearson_corr(x, y) == pytest.approx(expected, abs=1e-15)


def test_pearson_hand_value():
    # covariance sum 4.0 over sqrt(5) * sqrt(5)
    x = np.array([1, 2, 3, 4.0]) - 2.5
    y = np.array([1, 3, 2, 4.0]) - 2.5
    assert np.dot(x, y) == 4.0 and np.dot(x, x) == 5.0 and np.dot(y, y) == 5.0


def test_pearson_errors():
    with pytest.raises(ZeroVariance):
        pearson_corr([1, 1, 1], [0, 1, 0])
    with pytest.raises(LengthMismatch):
        pearson_corr([1, 2, 3], [1, 2])
    with pytest.raises(TooShort):
        pearson_corr([1], [2])


finite = st.floats(-1e3, 1e3, allow_nan=False, width=64)


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.integers(3, 50), elements=finite),
    st.floats(0.01, 100),
    st.floats(-100, 100),
    st.integers(0, 2**32 - 1),
)
def test_pearson_properties(x, a, b, seed):
    y = np.random.default_rng(seed).standard_normal(x.size)
    if np.std(x) < 1e-3:
        return
    r = pearson_corr(x, y)
    assert abs(r) <= 1 + 1e-12
    assert pearson_corr(y, x) == pytest.approx(r, abs=1e-12)
    assert pearson_corr(a * x + b, y) == pytest.approx(r, abs=1e-9)


def test_loss_examples():
    t = np.array([[1.0, 2, 3, 4], [4.0, 1, 3, 2]])
    assert neg_pearson_loss(t, t) == pytest.approx(-1.0, abs=1e-7)
    assert neg_pearson_loss(-t, t) == pytest.approx(1.0, abs=1e-7)
    # row 1 prediction is orthogonal to its centered target
    target = np.array([[1.0, 2, 3, 4], [1.0, 2, 3, 4]])
    pred = np.array([[1.0, 2, 3, 4], [1.0, -1, -1, 1]])
    assert pearson_corr(pred[1], target[1]) == pytest.approx(0.0, abs=1e-15)
    assert neg_pearson_loss(pred, target) == pytest.approx(-0.5, abs=1e-7)


def test_loss_constant_rows():
    target = np.array([[0.0, 0, 0, 0], [1.0, 2, 3, 4]])
    pred = np.array([[1.0, 2, 3, 4], [1.0, 2, 3, 4]])
    assert neg_pearson_loss(pred, target) == pytest.approx(-1.0, abs=1e-7)
    with pytest.raises(DegenerateTarget):
        neg_pearson_loss(pred, target, constant_rows="error")
    assert neg_pearson_loss(pred, np.zeros_like(pred)) == 0.0
    with pytest.raises(ShapeMismatch):
        neg_pearson_loss(pred, target[:, :3])


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    pred = rng.standard_normal((3, 64))
    target = rng.standard_normal((3, 64))
    _, grad = neg_pearson_loss(pred, target, return_grad=True)
    fd = central_difference(lambda p: neg_pearson_loss(p, target), pred, h=1e-5)
    rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
    assert rel < 1e-5


def test_torch_loss_matches_reference():
    rng = np.random.default_rng(1)
    pred = rng.standard_normal((3, 64))
    target = rng.standard_normal((3, 64))
    target[1] = 2.0
    p = torch.tensor(pred, requires_grad=True)
    loss = neg_pearson_loss_torch(p, torch.tensor(target))
    loss.backward()
    ref, grad = neg_pearson_loss(pred, target, return_grad=True)
    assert float(loss.detach()) == pytest.approx(ref, abs=1e-12)
    np.testing.assert_allclose(p.grad.numpy(), grad, atol=1e-12)


def test_torch_loss_batch_mean_of_windows():
    rng = np.random.default_rng(2)
    pred = rng.standard_normal((4, 2, 32))
    target = rng.standard_normal((4, 2, 32))
    batch = float(neg_pearson_loss_torch(torch.tensor(pred), torch.tensor(target)))
    per_window = [neg_pearson_loss(pred[i], target[i]) for i in range(4)]
    assert batch == pytest.approx(np.mean(per_window), abs=1e-12)


def test_torch_loss_constant_prediction_finite_gradient():
    p = torch.ones(1, 16, requires_grad=True)
    loss = neg_pearson_loss_torch(p, torch.arange(16.0).unsqueeze(0))
    loss.backward()
    assert torch.isfinite(p.grad).all()


def test_zscore_examples():
    out = zscore_normalize(np.array([[2.0, 4, 6]]))
    assert out.mean() == pytest.approx(0, abs=1e-7)
    assert out.std() == pytest.approx(1, abs=1e-6)
    np.testing.assert_array_equal(zscore_normalize(np.array([[5.0, 5, 5]])), [[0, 0, 0]])
    np.testing.assert_allclose(zscore_normalize(np.array([[0.0, 10]]), ([5.0], [5.0])), [[-1, 1]])
    mean, std = row_stats(np.array([[0.0, 10]]))
    assert mean[0] == 5 and std[0] == 5


def test_trim_examples():
    s = ScoreSequence(np.arange(7500), 250.0)
    assert len(trim_edges(s, 5.0)) == 5000
    assert trim_edges(s, 5.0).values[0] == 1250
    assert trim_edges(s, 0.0) is s
    with pytest.raises(TooShort):
        trim_edges(ScoreSequence(np.zeros(2000), 250.0), 5.0)


@given(st.integers(1, 4000), st.floats(0, 3), st.floats(0, 3))
def test_trim_composes(n, a, b):
    s = ScoreSequence(np.arange(n, dtype=np.float32), 100.0)
    na, nb = round(a * 100), round(b * 100)
    if round((a + b) * 100) != na + nb or n <= 2 * (na + nb):
        return
    np.testing.assert_array_equal(trim_edges(trim_edges(s, a), b).values, trim_edges(s, a + b).values)


def test_score_sequence_invariants():
    with pytest.raises(ShapeMismatch):
        ScoreSequence(np.array([]), 250.0)
    with pytest.raises(ValueError):
        ScoreSequence(np.ones(3), 0.0)
