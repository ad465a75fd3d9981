"""Small convolutional identity classifier and real/recovered discriminator.

Architecture: conv 3×3 (8 ch) → ReLU → 2×2 max-pool → conv 3×3 (16 ch) → ReLU →
2×2 max-pool → affine (64) → ReLU → affine head. The 64-wide hidden layer is
the feature vector used for verification.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .losses import adv_terms, nll

CHANNELS = (8, 16)
FEATURES = 64


def _conv_out(n):
    return (n - 2) // 2


class ConvNet:
    def __init__(self, n_out, height=32, width=32, seed=0, channels=CHANNELS, features=FEATURES):
        rng = np.random.default_rng(seed)
        self.height, self.width, self.n_out = height, width, n_out
        self.trained = False
        c1, c2 = channels
        h2, w2 = _conv_out(_conv_out(height)), _conv_out(_conv_out(width))
        if h2 < 1 or w2 < 1:
            raise DimensionError(f"{height}x{width} images are too small for two conv/pool stages")
        flat = c2 * h2 * w2

        def he(shape, fan_in):
            bound = np.sqrt(6.0 / fan_in)
            return T.Tensor(rng.uniform(-bound, bound, shape))

        self.params = {
            "conv1.w": he((c1, 1, 3, 3), 9),
            "conv1.b": T.Tensor(np.zeros(c1)),
            "conv2.w": he((c2, c1, 3, 3), 9 * c1),
            "conv2.b": T.Tensor(np.zeros(c2)),
            "fc.W": he((features, flat), flat),
            "fc.b": T.Tensor(np.zeros(features)),
            "head.W": T.Tensor(rng.uniform(-1, 1, (n_out, features)) / np.sqrt(features)),
            "head.b": T.Tensor(np.zeros(n_out)),
        }
        for n, t in self.params.items():
            t.name = n

    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def set_trainable(self, flag):
        for t in self.params.values():
            t.requires_grad = bool(flag)

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state):
        for n, t in self.params.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"{n}: shape {arr.shape} != expected {t.shape}")
            t.data = arr.copy()

    def fingerprint(self):
        h = hashlib.sha256()
        for n, t in self.params.items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def _images(self, images):
        x = T.as_tensor(images)
        if x.ndim == 2 and x.shape[1] == self.height * self.width:
            x = T.reshape(x, (x.shape[0], 1, self.height, self.width))
        elif x.ndim == 3 and x.shape[1:] == (self.height, self.width):
            x = T.reshape(x, (x.shape[0], 1, self.height, self.width))
        elif x.shape == (self.height, self.width):
            x = T.reshape(x, (1, 1, self.height, self.width))
        if x.ndim != 4 or x.shape[1:] != (1, self.height, self.width):
            raise DimensionError(
                f"images of shape {x.shape} do not match {self.height}x{self.width}")
        return x - 0.5

    def features(self, images):
        p = self.params
        x = self._images(images)
        x = T.max_pool2d(T.relu(T.conv2d(x, p["conv1.w"], p["conv1.b"])))
        x = T.max_pool2d(T.relu(T.conv2d(x, p["conv2.w"], p["conv2.b"])))
        x = T.reshape(x, (x.shape[0], -1))
        return T.relu(T.linear(x, p["fc.W"], p["fc.b"]))

    def logits(self, images):
        return T.linear(self.features(images), self.params["head.W"], self.params["head.b"])


def conv_forward(net, images):
    return net.logits(images)


class Classifier(ConvNet):
    """Identity classifier; ``proba`` rows are a probability simplex."""

    def log_proba(self, images):
        return T.log_softmax(self.logits(images))

    def proba(self, images):
        return np.exp(self.log_proba(images).data)

    def predict(self, images):
        return self.logits(images).data.argmax(axis=1)

    def accuracy(self, images, labels):
        return float(np.mean(self.predict(images) == np.asarray(labels)))


class Discriminator(ConvNet):
    """Binary real-vs-recovered discriminator with a single sigmoid output."""

    def __init__(self, height=32, width=32, seed=0, **kw):
        super().__init__(1, height, width, seed=seed, **kw)

    def proba(self, images):
        return T.sigmoid(self.logits(images))


def _sgd(params, grads, lr):
    for t in params:
        g = grads.get(t)
        if g is not None:
            t.data -= lr * g


def pretrain_classifier(images, labels, epochs, lr=0.05, batch=16, seed=0, classifier=None):
    """Minibatch SGD on cross-entropy over clean labelled images.

    Returns the trained classifier; with ``epochs == 0`` the initial network is
    returned untouched.
    """
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    n_classes = int(y.max()) + 1 if y.size else 0
    if len(np.unique(y)) < 2:
        raise ContractError("classifier pretraining needs at least two identities")
    if x.ndim == 2:
        side = int(round(np.sqrt(x.shape[1])))
        x = x.reshape(-1, side, side)
    if classifier is None:
        classifier = Classifier(n_classes, x.shape[1], x.shape[2], seed=seed)
    elif classifier.n_out < n_classes:
        raise ContractError(f"classifier has {classifier.n_out} outputs, labels need {n_classes}")
    rng = np.random.default_rng(seed)
    classifier.set_trainable(True)
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch):
            idx = order[start:start + batch]
            with T.GradientTape() as tape:
                loss = nll(classifier.log_proba(x[idx]), y[idx], name="pretrain")
            grads = tape.backward(loss)
            _sgd(classifier.parameters(), grads, lr)
    classifier.set_trainable(False)
    classifier.trained = classifier.trained or epochs > 0
    return classifier


def discriminator_step(disc, real, fake, lr):
    """One gradient-ascent step on the discriminator objective.

    ``fake`` must be plain data (already detached from the generator).
    Returns ``(d_objective, accuracy)`` measured before the update.
    """
    disc.set_trainable(True)
    fake = np.asarray(fake.data if isinstance(fake, T.Tensor) else fake)
    with T.GradientTape() as tape:
        p_real = disc.proba(real)
        p_fake = disc.proba(fake)
        d_obj, _ = adv_terms(p_real, p_fake)
        loss = -d_obj
    grads = tape.backward(loss)
    _sgd(disc.parameters(), grads, lr)
    disc.set_trainable(False)
    acc = 0.5 * (np.mean(p_real.data >= 0.5) + np.mean(p_fake.data < 0.5))
    return d_obj.item(), float(acc)


def pretrain_discriminator(disc, real, fake, epochs, lr=0.05, batch=16, seed=0):
    """Alternate real/fake minibatches for a few epochs; returns the last accuracy."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n = min(len(real), len(fake))
    acc = 0.5
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            _, acc = discriminator_step(disc, real[idx], fake[idx], lr)
    return acc
