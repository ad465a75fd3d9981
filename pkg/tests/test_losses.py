import math

import numpy as np
import pytest

from rla import losses as L
from rla import tensor as T
from rla.errors import ContractError, DimensionError
from rla.tensor import GradientTape, Tensor

from oracles import numeric_grad, rel_error


def batch(rng, K=3, P=6):
    X_rec, X_occ, X = (rng.random((K, P)) for _ in range(3))
    S = rng.uniform(0.01, 0.99, (K, P))
    return X_rec, S, X_occ, X


def test_mse_zero_for_perfect_reconstruction(rng):
    X_rec, S, X_occ, X = batch(rng)
    assert L.mse_loss(X, np.ones_like(S), X_occ, X).item() == 0.0
    assert L.mse_loss(X_rec, np.zeros_like(S), X, X).item() == 0.0


def test_mse_scalar_case():
    one = np.ones((1, 1))
    assert L.mse_loss(one, one * 0.5, one * 0, one * 0).item() == 0.125


def test_mse_accepts_image_batches(rng):
    X_rec, S, X_occ, X = (a.reshape(3, 2, 3) for a in batch(rng))
    flat = L.mse_loss(*(a.reshape(3, 6) for a in (X_rec, S, X_occ, X))).item()
    assert L.mse_loss(X_rec, S, X_occ, X).item() == flat


def test_mse_shape_errors(rng):
    X_rec, S, X_occ, X = batch(rng)
    with pytest.raises(DimensionError):
        L.mse_loss(X_rec, S[:, :5], X_occ, X)
    with pytest.raises(ContractError):
        L.mse_loss(*(np.zeros((0, 4)) for _ in range(4)))


def test_grads_zero_when_composite_is_exact(rng):
    X_rec, S, X_occ, X = batch(rng)
    dX, dS = L.mse_grads(X, X, S, X_rec, X_occ, 3)
    assert not dX.any() and not dS.any()


def test_rec_grad_vanishes_where_score_is_zero(rng):
    X_rec, S, X_occ, X = batch(rng)
    S[:, :3] = 0.0
    X_tilde = X_rec * S + X_occ * (1 - S)
    dX, _ = L.mse_grads(X_tilde, X, S, X_rec, X_occ, 3)
    assert not dX[:, :3].any()


def autodiff_mse_grads(X_rec, S, X_occ, X):
    tr, ts = Tensor(X_rec, requires_grad=True), Tensor(S, requires_grad=True)
    with GradientTape() as tape:
        loss = L.mse_loss(tr, ts, X_occ, X)
    g = tape.backward(loss)
    return g[tr], g[ts]


def test_analytic_grads_match_autodiff(rng):
    for _ in range(20):
        X_rec, S, X_occ, X = batch(rng, K=int(rng.integers(1, 6)), P=7)
        X_tilde = T.blend(X_rec, X_occ, S).data
        dX, dS = L.mse_grads(X_tilde, X, S, X_rec, X_occ, len(X))
        aX, aS = autodiff_mse_grads(X_rec, S, X_occ, X)
        np.testing.assert_allclose(dX, aX, rtol=0, atol=1e-10)
        np.testing.assert_allclose(dS, aS, rtol=0, atol=1e-10)


def test_reconstruction_loss_and_grads(rng):
    X_rec, _, _, X = batch(rng)
    assert L.reconstruction_loss(X_rec, X).item() == pytest.approx(
        0.5 / 3 * np.sum((X_rec - X) ** 2), rel=1e-14)
    t = Tensor(X_rec, requires_grad=True)
    with GradientTape() as tape:
        loss = L.reconstruction_loss(t, X)
    np.testing.assert_allclose(tape.backward(loss)[t], L.reconstruction_grads(X_rec, X, 3),
                               atol=1e-15)


# ---------------------------------------------------------------- identity loss


def test_nll_examples():
    assert L.nll(np.log([[1.0, 1e-300]]).clip(-800), [0]).item() == 0.0
    assert L.nll(np.array([[-1.0, -5.0]]), [0]).item() == pytest.approx(1.0, abs=1e-15)
    lp = np.log(np.array([[0.5, 0.5], [0.25, 0.75]]))
    assert L.nll(lp, [0, 0]).item() == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-15)
    assert L.nll(lp, [0, 0]).item() == pytest.approx(1.0397, abs=1e-4)


def test_nll_clamps_tiny_probabilities():
    before = L.clamp_events["probe"]
    v = L.nll(np.array([[-100.0, 0.0]]), [0], name="probe").item()
    assert v == pytest.approx(-math.log(1e-12))
    assert L.clamp_events["probe"] == before + 1


def test_sup_loss_uses_classifier_log_proba():
    class Fixed:
        def log_proba(self, X):
            return Tensor(np.log(np.array([[0.5, 0.5], [0.25, 0.75]])))

    assert L.sup_loss(Fixed(), None, [0, 0]).item() == pytest.approx(1.0397, abs=1e-4)


# ---------------------------------------------------------------- adversarial terms


def test_adv_half_discriminator():
    d, g = L.adv_terms(np.full((4, 1), 0.5), np.full((4, 1), 0.5))
    assert d.item() == pytest.approx(2 * math.log(0.5), abs=1e-12)
    assert d.item() == pytest.approx(-1.3863, abs=1e-4)


def test_adv_perfect_discriminator_reaches_supremum():
    d, _ = L.adv_terms(np.ones((3, 1)), np.zeros((3, 1)))
    assert d.item() == pytest.approx(0.0, abs=1e-11)
    assert d.item() <= 0


def test_generator_gradient_ignores_real_term(rng):
    real = Tensor(rng.uniform(0.1, 0.9, (4, 1)), requires_grad=True)
    fake = Tensor(rng.uniform(0.1, 0.9, (4, 1)), requires_grad=True)
    with GradientTape() as tape:
        _, g = L.adv_terms(real, fake)
    grads = tape.backward(g)
    assert not grads[real].any()
    np.testing.assert_allclose(grads[fake], -1 / (1 - fake.data) / 4, rtol=1e-12)


def test_non_saturating_variant(rng):
    fake = rng.uniform(0.1, 0.9, (4, 1))
    _, g = L.adv_terms(np.full((4, 1), 0.5), fake, non_saturating=True)
    assert g.item() == pytest.approx(-np.mean(np.log(fake)), rel=1e-14)


def test_adv_finite_with_extreme_outputs():
    d, g = L.adv_terms(np.zeros((2, 1)), np.ones((2, 1)))
    assert np.isfinite(d.item()) and np.isfinite(g.item())


def test_adv_losses_gradient_check(rng):
    class Sig:
        def proba(self, X):
            return T.sigmoid(T.reshape(T.tsum(X) * 0.1 + X[:, :1], (X.shape[0], 1)))

    x = rng.random((3, 4))

    def f(t):
        return L.adv_losses(Sig(), np.ones((3, 4)) * 0.3, t)[1]

    t = Tensor(x, requires_grad=True)
    with GradientTape() as tape:
        loss = f(t)
    g = tape.backward(loss)[t]
    num = numeric_grad(lambda: f(Tensor(x)).item(), x)
    assert rel_error(g, num) < 1e-6


# ---------------------------------------------------------------- joint loss


def test_joint_loss_is_exact_sum():
    total, rep = L.joint_loss(Tensor(0.25), Tensor(1.5), Tensor(-0.75))
    assert rep.total == 0.25 + 1.5 + -0.75 == total.item()
    assert rep.as_record() == {"l_mse": 0.25, "total": 1.0, "l_sup": 1.5, "l_adv_g": -0.75}


def test_joint_loss_weights_and_inactive_terms():
    total, rep = L.joint_loss(Tensor(1.0), Tensor(2.0), Tensor(4.0), weights=(1.0, 0.5, 0.25))
    assert total.item() == 3.0
    total, rep = L.joint_loss(Tensor(0.5))
    assert rep.total == 0.5 and rep.l_sup is None
