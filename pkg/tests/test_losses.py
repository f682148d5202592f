import math

import numpy as np
import pytest

from protoot.exceptions import BatchTooSmallError, DimMismatchError, NonPositiveTauError
from protoot.losses import LossValue, loss_cross, loss_intra, loss_pretrain, loss_total, with_param_grad
from protoot.representation import MlpEncoder

from conftest import central_diff, rel_error, unit_rows

HAND = math.log1p(math.exp(-5.0))


def test_hand_value():
    assert HAND == pytest.approx(0.006715, abs=5e-7)


def test_intra_scalar_instance():
    q = np.array([[1.0, 0.0]])
    pos = np.tile(q, (3, 1))[:, None, :]  # three positives, each with q.p = 1
    neg = np.array([[[0.0, 1.0]]])
    assert loss_intra(q, pos, neg, 0.2).value == pytest.approx(HAND, rel=1e-12)


def test_intra_empty_negatives_is_zero(rng):
    q = unit_rows(rng, 4, 3)
    pos = [unit_rows(rng, 4, 3) for _ in range(3)]
    out = loss_intra(q, pos, np.zeros((4, 0, 3)))
    assert out.value == 0.0
    np.testing.assert_array_equal(out.grad_q, 0.0)


def test_cross_scalar_instance():
    out = loss_cross([[1.0, 0.0]], [[1.0, 0.0]], [[[0.0, 1.0]]], 0.2)
    assert out.value == pytest.approx(HAND, rel=1e-12)


@pytest.mark.parametrize("k", [1, 4, 9])
def test_cross_uniform_softmax(k, rng):
    q = unit_rows(rng, 1, 3)
    neg = np.tile(q, (k, 1))[None]
    assert loss_cross(q, q, neg).value == pytest.approx(math.log(k + 1), rel=1e-12)


def test_pretrain_scalar_instance():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    out = loss_pretrain(q, q, 0.2)
    # both samples see the same configuration, so the sum is twice the hand term
    assert out.value == pytest.approx(2 * HAND, rel=1e-12)


@pytest.mark.parametrize("batch", [2, 5, 16])
def test_pretrain_identical_views(batch):
    q = np.tile([0.6, 0.8], (batch, 1))
    assert loss_pretrain(q, q).value == pytest.approx(batch * math.log(batch), rel=1e-12)


def test_errors(rng):
    q = unit_rows(rng, 2, 3)
    with pytest.raises(NonPositiveTauError):
        loss_cross(q, q, np.zeros((2, 0, 3)), tau=0.0)
    with pytest.raises(NonPositiveTauError):
        loss_pretrain(q, q, tau=-1.0)
    with pytest.raises(BatchTooSmallError):
        loss_pretrain(q[:1], q[:1])
    with pytest.raises(DimMismatchError):
        loss_cross(q, q[:1], np.zeros((2, 0, 3)))
    with pytest.raises(DimMismatchError):
        loss_intra(q, [q, q, q], [np.zeros((1, 3))])


@pytest.mark.parametrize("seed", range(20))
def test_intra_gradient(seed):
    rng = np.random.default_rng(seed)
    q = unit_rows(rng, 4, 5)
    pos = [unit_rows(rng, 4, 5) for _ in range(3)]
    neg = [unit_rows(rng, m, 5) for m in (0, 1, 3, 2)]
    num = central_diff(lambda v: loss_intra(v, pos, neg).value, q)
    assert rel_error(loss_intra(q, pos, neg).grad_q, num) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_cross_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    q, matched = unit_rows(rng, 4, 5), unit_rows(rng, 4, 5)
    neg = unit_rows(rng, 12, 5).reshape(4, 3, 5)
    num = central_diff(lambda v: loss_cross(v, matched, neg).value, q)
    assert rel_error(loss_cross(q, matched, neg).grad_q, num) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_pretrain_gradient(seed):
    rng = np.random.default_rng(200 + seed)
    q, q_aug = unit_rows(rng, 6, 5), unit_rows(rng, 6, 5)
    num = central_diff(lambda v: loss_pretrain(v, q_aug).value, q)
    assert rel_error(loss_pretrain(q, q_aug).grad_q, num) < 1e-4


def composite_loss(enc, x, pos, neg, matched, neg_cr, lam):
    q = enc.forward(x)
    l_in = with_param_grad(loss_intra(q, pos, neg), enc)
    l_cr = with_param_grad(loss_cross(q, matched, neg_cr), enc)
    return loss_total(l_in, l_cr, lam)


@pytest.mark.parametrize("seed", range(20))
def test_total_gradient_through_encoder(seed):
    rng = np.random.default_rng(300 + seed)
    enc = MlpEncoder(4, 6, 3, rng=rng, init="he")
    enc.b1 = rng.normal(scale=0.1, size=6)
    enc.b2 = rng.normal(scale=0.1, size=3)
    x = rng.normal(size=(3, 4))
    pos = [unit_rows(rng, 3, 3) for _ in range(3)]
    neg, neg_cr = unit_rows(rng, 6, 3).reshape(3, 2, 3), unit_rows(rng, 6, 3).reshape(3, 2, 3)
    matched = unit_rows(rng, 3, 3)
    theta = enc.get_flat()

    def objective(flat):
        probe = enc.copy()
        probe.set_flat(flat)
        return composite_loss(probe, x, pos, neg, matched, neg_cr, 0.5).value

    analytic = composite_loss(enc, x, pos, neg, matched, neg_cr, 0.5).grad
    assert analytic.size == enc.n_params
    assert rel_error(analytic, central_diff(objective, theta)) < 1e-4


def test_total_examples():
    a = LossValue(1.5, np.ones((1, 2)), np.ones(3))
    b = LossValue(0.5, np.full((1, 2), 2.0), np.full(3, 4.0))
    zero = loss_total(a, b, 0.0)
    assert zero.value == a.value
    np.testing.assert_array_equal(zero.grad, a.grad)
    assert loss_total(a, a, 1.0).value == 3.0
    default = loss_total(a, b)
    assert default.value == pytest.approx(1.5 + 0.01 * 0.5)
    np.testing.assert_allclose(default.grad, 1.0 + 0.04)
    with pytest.raises(ValueError):
        loss_total(a, b, -0.1)


def test_losses_nonnegative_and_finite(rng):
    for tau in (0.05, 0.2, 1.0):
        q = unit_rows(rng, 8, 4)
        neg = unit_rows(rng, 24, 4).reshape(8, 3, 4)
        for val in (loss_intra(q, [unit_rows(rng, 8, 4)] * 3, neg, tau).value,
                    loss_cross(q, unit_rows(rng, 8, 4), neg, tau).value,
                    loss_pretrain(q, unit_rows(rng, 8, 4), tau).value):
            assert np.isfinite(val) and val >= 0


def test_intra_invariant_to_negative_order(rng):
    q = unit_rows(rng, 5, 4)
    pos = [unit_rows(rng, 5, 4) for _ in range(3)]
    neg = unit_rows(rng, 20, 4).reshape(5, 4, 4)
    shuffled = neg[:, rng.permutation(4)]
    a, b = loss_intra(q, pos, neg), loss_intra(q, pos, shuffled)
    assert a.value == pytest.approx(b.value, rel=1e-14)
    np.testing.assert_allclose(a.grad_q, b.grad_q, atol=1e-14)


def test_cross_decreases_with_matched_similarity():
    q = np.array([[1.0, 0.0, 0.0]])
    neg = np.array([[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
    values = []
    for angle in np.linspace(np.pi / 2, 0.0, 9):
        matched = np.array([[np.cos(angle), 0.0, np.sin(angle)]])
        values.append(loss_cross(q, matched, neg).value)
    assert np.all(np.diff(values) < 0)


def test_scaled():
    v = LossValue(2.0, np.ones(2), np.ones(3)).scaled(0.5)
    assert v.value == 1.0 and v.grad_q.tolist() == [0.5, 0.5] and v.grad.tolist() == [0.5] * 3
