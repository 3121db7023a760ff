from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from auxsearch import autodiff as ad
from auxsearch.autodiff import Tensor
from auxsearch.loss_dsl import ALL_OPERATORS, Measure, OperatorSpec
from auxsearch.operators import (
    TRAINING_EPS,
    BatchTooSmall,
    LossBatch,
    OperatorParams,
    ZeroNormVector,
    derangement_negatives,
    operator_loss,
    similarity,
)

import oracles


def _batch(seed=0, n=6, d=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.normal(size=(n, d)), np.eye(d) + 0.1 * rng.normal(size=(d, d))


@pytest.mark.parametrize("spec", ALL_OPERATORS, ids=lambda o: o.name)
def test_loss_value_matches_numpy_reference(spec):
    y, y_hat, w = _batch()
    params = OperatorParams.for_spec(spec, y.shape[1])
    if params.bilinear is not None:
        params.bilinear.data = w.copy()
    got = operator_loss(spec, LossBatch(Tensor(y), Tensor(y_hat)), params, eps=TRAINING_EPS).item()
    want = oracles.reference_operator_loss(spec.measure.value, spec.negatives, y, y_hat, w)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("spec", ALL_OPERATORS, ids=lambda o: o.name)
def test_loss_gradients_match_differences(spec):
    y, y_hat, w = _batch(1)
    ty, th = Tensor(y.copy(), True), Tensor(y_hat.copy(), True)
    params = OperatorParams.for_spec(spec, y.shape[1])
    if params.bilinear is not None:
        params.bilinear.data = w.copy()
    tensors = [ty, th] + list(params.tensors().values())

    def loss():
        return operator_loss(spec, LossBatch(ty, th), params, eps=TRAINING_EPS)

    grads = ad.backward(loss(), tensors)
    for i, t in enumerate(tensors):
        numeric = oracles.central_difference(lambda: loss().item(), t.data)
        assert oracles.max_relative_error(grads[i], numeric) < 1e-4


def test_bilinear_starts_at_identity():
    p = OperatorParams.for_spec(OperatorSpec(Measure.BILINEAR), 3)
    np.testing.assert_array_equal(p.bilinear.data, np.eye(3))
    assert OperatorParams.for_spec(OperatorSpec(Measure.MSE), 3).tensors() == {}


def test_similarity_examples():
    y, yh = np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]])
    assert similarity(Measure.INNER, y, yh).item() == 1.0
    assert similarity(Measure.COSINE, [[3.0, 4.0]], [[6.0, 8.0]]).item() == pytest.approx(1.0)
    assert similarity(Measure.INNER, [[1.0, 0.0]], [[0.0, 1.0]]).item() == 0.0
    with pytest.raises(ZeroNormVector):
        similarity(Measure.COSINE, [[0.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(ad.ShapeMismatch):
        similarity(Measure.INNER, [[1.0]], [[1.0, 2.0]])


def test_mse_zero_when_equal():
    y, _, _ = _batch()
    assert operator_loss(OperatorSpec(), LossBatch(Tensor(y), Tensor(y))).item() == 0.0


def test_nmse_zero_norm_strict_but_eps_in_training():
    y = np.zeros((3, 2))
    batch = LossBatch(Tensor(y), Tensor(np.ones((3, 2))))
    with pytest.raises(ZeroNormVector):
        operator_loss(OperatorSpec(Measure.NMSE), batch)
    assert np.isfinite(operator_loss(OperatorSpec(Measure.NMSE), batch, eps=TRAINING_EPS).item())


def test_negatives_need_two_rows():
    one = LossBatch(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))))
    with pytest.raises(BatchTooSmall):
        operator_loss(OperatorSpec(Measure.INNER, True), one)
    with pytest.raises(BatchTooSmall):
        derangement_negatives(Tensor(np.ones((1, 2))))


def test_derangement_has_no_fixed_points():
    t = Tensor(np.arange(10.0).reshape(5, 2))
    neg = derangement_negatives(t).data
    assert not np.any(np.all(neg == t.data, axis=1))
    np.testing.assert_array_equal(neg, np.roll(t.data, -1, axis=0))


def test_batch_shape_mismatch():
    with pytest.raises(ad.ShapeMismatch):
        LossBatch(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_infonce_perfect_alignment_is_low():
    # scaled one-hot rows: the positive logit dominates every row
    y = np.eye(4) * 20.0
    loss = operator_loss(OperatorSpec(Measure.INNER, True), LossBatch(Tensor(y), Tensor(y))).item()
    assert 0.0 <= loss < 1e-6


finite = st.floats(-10, 10, allow_nan=False)


@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, (5, 3), elements=finite),
       st.floats(0.1, 10.0))
@settings(max_examples=100, deadline=None)
def test_cosine_and_nmse_scale_invariant(y, yh, c):
    if np.any(np.linalg.norm(y, axis=1) < 1e-3) or np.any(np.linalg.norm(yh, axis=1) < 1e-3):
        return
    for spec in (OperatorSpec(Measure.COSINE), OperatorSpec(Measure.NMSE), OperatorSpec(Measure.COSINE, True)):
        base = operator_loss(spec, LossBatch(Tensor(y), Tensor(yh))).item()
        scaled = operator_loss(spec, LossBatch(Tensor(c * y), Tensor(yh))).item()
        assert scaled == pytest.approx(base, rel=1e-9, abs=1e-9)


@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (4, 3), elements=finite))
@settings(max_examples=100, deadline=None)
def test_mse_nonnegative_and_symmetric(y, yh):
    ab = operator_loss(OperatorSpec(), LossBatch(Tensor(y), Tensor(yh))).item()
    ba = operator_loss(OperatorSpec(), LossBatch(Tensor(yh), Tensor(y))).item()
    assert ab >= 0.0
    assert ab == pytest.approx(ba)
