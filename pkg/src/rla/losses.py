"""Training objectives: composited MSE, identity NLL, adversarial terms and their sum."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError

LOG_EPS = 1e-12

# how many probabilities were clamped, keyed by loss name
clamp_events = Counter()


def _flat(t):
    t = T.as_tensor(t)
    if t.ndim == 3:
        return T.reshape(t, (t.shape[0], -1))
    if t.ndim == 2:
        return t
    raise DimensionError(f"expected a batch of images, got shape {t.shape}")


def _batch_size(*ts):
    K = ts[0].shape[0]
    if K < 1:
        raise ContractError("loss over an empty batch")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise DimensionError(f"inconsistent shapes {ts[0].shape} and {t.shape}")
    return K


def mse_loss(X_rec, S_det, X_occ, X):
    """(1/2K) Σ‖X_rec⊙S + X_occ⊙(1−S) − X‖² over a batch of K images."""
    X_rec, S_det, X_occ, X = (_flat(a) for a in (X_rec, S_det, X_occ, X))
    K = _batch_size(X_rec, S_det, X_occ, X)
    d = T.blend(X_rec, X_occ, S_det) - X
    return T.tsum(d * d) * (0.5 / K)


def reconstruction_loss(X_rec, X):
    """(1/2K) Σ‖X_rec − X‖², the objective while the detector is ignored."""
    X_rec, X = _flat(X_rec), _flat(X)
    K = _batch_size(X_rec, X)
    d = X_rec - X
    return T.tsum(d * d) * (0.5 / K)


def mse_grads(X_tilde, X, S_det, X_rec, X_occ, K):
    """Closed-form gradients of :func:`mse_loss` w.r.t. X_rec and S_det."""
    X_tilde, X, S_det, X_rec, X_occ = (np.asarray(a, dtype=np.float64)
                                       for a in (X_tilde, X, S_det, X_rec, X_occ))
    shapes = {a.shape for a in (X_tilde, X, S_det, X_rec, X_occ)}
    if len(shapes) != 1:
        raise DimensionError(f"mse_grads: inconsistent shapes {sorted(shapes)}")
    r = (X_tilde - X) / K
    return r * S_det, r * (X_rec - X_occ)


def reconstruction_grads(X_rec, X, K):
    return (np.asarray(X_rec) - np.asarray(X)) / K


def nll(log_probs, y, name="sup"):
    """Mean negative log-likelihood of integer labels under row log-probabilities.

    Probabilities below 1e-12 are clamped; each clamp is tallied in
    ``clamp_events[name]``.
    """
    log_probs = T.as_tensor(log_probs)
    y = np.asarray(y, dtype=np.intp)
    if log_probs.shape[0] < 1:
        raise ContractError("loss over an empty batch")
    picked = T.pick(log_probs, y)
    floor = math.log(LOG_EPS)
    n_low = int(np.sum(picked.data < floor))
    if n_low:
        clamp_events[name] += n_low
    picked = T.clip(picked, floor, 0.0)
    return -T.mean(picked)


def sup_loss(classifier, X_tilde, y):
    """Identity loss (1/K) Σ −log P(y_i | X̃_i) under a frozen classifier."""
    return nll(classifier.log_proba(X_tilde), y)


def _clamped_log(p, name):
    n_bad = int(np.sum((p.data < LOG_EPS) | (p.data > 1.0 - LOG_EPS)))
    if n_bad:
        clamp_events[name] += n_bad
    return T.log(T.clip(p, LOG_EPS, 1.0 - LOG_EPS))


def adv_terms(d_real, d_fake, non_saturating=False):
    """Adversarial objectives from discriminator outputs on real and fake batches.

    Returns ``(d_objective, g_objective)``. The discriminator maximizes
    ``d_objective = mean(log D(real) + log(1 − D(fake)))``; the generator
    minimizes the same expression (only the fake term depends on it). With
    ``non_saturating`` the generator instead minimizes ``−mean(log D(fake))``.
    """
    d_real, d_fake = T.as_tensor(d_real), T.as_tensor(d_fake)
    if d_real.shape[0] < 1 or d_fake.shape[0] < 1:
        raise ContractError("adversarial loss over an empty batch")
    if d_real.shape != d_fake.shape:
        raise DimensionError(f"real {d_real.shape} and fake {d_fake.shape} outputs differ")
    K = d_real.shape[0]
    log_real = _clamped_log(d_real, "adv")
    log_fake_c = _clamped_log(1.0 - d_fake, "adv")
    d_obj = (T.tsum(log_real) + T.tsum(log_fake_c)) * (1.0 / K)
    if non_saturating:
        g_obj = -T.mean(_clamped_log(d_fake, "adv"))
    else:
        # the real term is data-only, so the generator's gradient sees just the fake term
        g_obj = (T.tsum(log_real.detach()) + T.tsum(log_fake_c)) * (1.0 / K)
    return d_obj, g_obj


def adv_losses(discriminator, X_real, X_fake, non_saturating=False):
    return adv_terms(discriminator.proba(X_real), discriminator.proba(X_fake),
                     non_saturating=non_saturating)


@dataclass
class LossReport:
    l_mse: float
    total: float
    l_sup: float | None = None
    l_adv_g: float | None = None
    l_adv_d: float | None = None

    def as_record(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def joint_loss(l_mse, l_sup=None, l_adv_g=None, weights=(1.0, 1.0, 1.0)):
    """Weighted sum of the active terms; unit weights give the plain sum.

    Returns the differentiable total and a :class:`LossReport` of float values.
    """
    w_mse, w_sup, w_adv = weights
    total = l_mse * w_mse if w_mse != 1.0 else l_mse
    if l_sup is not None:
        total = total + (l_sup * w_sup if w_sup != 1.0 else l_sup)
    if l_adv_g is not None:
        total = total + (l_adv_g * w_adv if w_adv != 1.0 else l_adv_g)
    report = LossReport(
        l_mse=T.as_tensor(l_mse).item(),
        total=T.as_tensor(total).item(),
        l_sup=None if l_sup is None else T.as_tensor(l_sup).item(),
        l_adv_g=None if l_adv_g is None else T.as_tensor(l_adv_g).item(),
    )
    return total, report
