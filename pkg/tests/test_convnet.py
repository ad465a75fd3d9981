import numpy as np
import pytest

from rla import tensor as T
from rla.convnet import (Classifier, Discriminator, conv_forward, discriminator_step,
                         pretrain_classifier, pretrain_discriminator)
from rla.errors import ContractError, DimensionError
from rla.synth import make_identity, render_face
from rla.tensor import GradientTape

from oracles import numeric_grad, rel_error


def faces(ids, per_id, jitter0=0, size=32):
    X = np.stack([render_face(make_identity(i, 0), jitter0 + k, size)
                  for i in ids for k in range(per_id)])
    y = np.repeat(np.arange(len(ids)), per_id)
    return X, y


def scalar_forward(net, img):
    """Loop implementation of conv-relu-pool ×2, fc-relu, head."""
    p = {k: v.data for k, v in net.params.items()}

    def conv(x, w, b):
        C_out, C_in, kh, kw = w.shape
        H, W = len(x[0]), len(x[0][0])
        out = [[[0.0] * (W - kw + 1) for _ in range(H - kh + 1)] for _ in range(C_out)]
        for o in range(C_out):
            for i in range(H - kh + 1):
                for j in range(W - kw + 1):
                    s = b[o]
                    for c in range(C_in):
                        for u in range(kh):
                            for v in range(kw):
                                s += x[c][i + u][j + v] * w[o, c, u, v]
                    out[o][i][j] = max(s, 0.0)
        return out

    def pool(x):
        return [[[max(ch[2 * i][2 * j], ch[2 * i][2 * j + 1], ch[2 * i + 1][2 * j],
                      ch[2 * i + 1][2 * j + 1]) for j in range(len(ch[0]) // 2)]
                 for i in range(len(ch) // 2)] for ch in x]

    x = [[[v - 0.5 for v in row] for row in img.tolist()]]
    x = pool(conv(x, p["conv1.w"], p["conv1.b"]))
    x = pool(conv(x, p["conv2.w"], p["conv2.b"]))
    flat = [v for ch in x for row in ch for v in row]
    hid = [max(p["fc.b"][r] + sum(p["fc.W"][r][k] * flat[k] for k in range(len(flat))), 0.0)
           for r in range(len(p["fc.b"]))]
    return [p["head.b"][r] + sum(p["head.W"][r][k] * hid[k] for k in range(len(hid)))
            for r in range(len(p["head.b"]))]


def test_forward_matches_scalar_oracle(rng):
    net = Classifier(3, 10, 10, seed=1, channels=(2, 3), features=4)
    for t in net.parameters():
        t.data[...] = rng.uniform(-1, 1, t.shape)
    img = rng.random((10, 10))
    np.testing.assert_allclose(conv_forward(net, img).data[0], scalar_forward(net, img),
                               rtol=0, atol=1e-12)


def test_center_tap_kernels_on_two_class_toy():
    # 3x3 kernels with only the centre tap set act as 1x1 identity maps
    net = Classifier(2, 10, 10, channels=(1, 1), features=1)
    for t in net.parameters():
        t.data[...] = 0
    net.params["conv1.w"].data[0, 0, 1, 1] = 1.0
    net.params["conv2.w"].data[0, 0, 1, 1] = 1.0
    net.params["fc.W"].data[...] = 1.0
    net.params["head.W"].data[:, 0] = [1.0, -1.0]
    img = np.zeros((10, 10))
    img[4, 4] = 1.0
    assert net.predict(img[None])[0] == 0
    np.testing.assert_allclose(conv_forward(net, img).data[0], scalar_forward(net, img), atol=1e-12)
    assert net.predict(np.zeros((1, 10, 10)))[0] == 0  # tie goes to the first class


def test_zero_params_give_uniform_probabilities(rng):
    net = Classifier(5, 32, 32)
    for t in net.parameters():
        t.data[...] = 0
    np.testing.assert_allclose(net.proba(rng.random((2, 32, 32))), 0.2, atol=1e-15)


def test_output_widths(rng):
    assert Classifier(7).logits(rng.random((2, 32, 32))).shape == (2, 7)
    d = Discriminator(seed=3).proba(rng.random((2, 32, 32))).data
    assert d.shape == (2, 1) and np.all((d > 0) & (d < 1))


def test_probabilities_sum_to_one(rng):
    p = Classifier(4, seed=2).proba(rng.random((6, 32, 32)) * 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_features_are_64_wide_and_deterministic(rng):
    net = Classifier(3)
    x = rng.random((2, 32, 32))
    f = net.features(x).data
    assert f.shape == (2, 64)
    assert f.tobytes() == net.features(x).data.tobytes()


def test_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        Classifier(2).logits(rng.random((1, 30, 30)))
    with pytest.raises(DimensionError):
        Classifier(2, 4, 4)


def test_gradients_match_finite_differences(rng):
    net = Classifier(3, 10, 10, seed=4, channels=(2, 3), features=5)
    x = rng.random((2, 10, 10))
    y = np.array([0, 2])
    net.set_trainable(True)

    def f():
        return T.mean(T.pick(net.log_proba(x), y))

    with GradientTape() as tape:
        loss = f()
    grads = tape.backward(loss)
    for name, t in net.named_parameters():
        assert rel_error(grads[t], numeric_grad(lambda: f().item(), t.data)) < 1e-4, name


def test_pretrain_two_identities():
    X, y = faces([0, 1], 20)
    clf = pretrain_classifier(X, y, 50, seed=0)
    assert clf.accuracy(X, y) > 0.9
    assert clf.trained


def test_zero_epochs_returns_initial_params():
    X, y = faces([0, 1], 4)
    ref = Classifier(2, seed=5)
    clf = pretrain_classifier(X, y, 0, seed=5)
    assert clf.fingerprint() == ref.fingerprint()
    assert not clf.trained


def test_single_identity_is_rejected():
    X, _ = faces([0], 4)
    with pytest.raises(ContractError):
        pretrain_classifier(X, np.zeros(4, dtype=int), 3)


def test_shuffled_labels_give_chance_on_held_out_faces():
    X, y = faces([0, 1], 20)
    shuffled = np.random.default_rng(0).permutation(y)
    clf = pretrain_classifier(X, shuffled, 50, seed=0)
    X_new, y_new = faces([0, 1], 100, jitter0=1000)
    assert abs(clf.accuracy(X_new, y_new) - 0.5) < 0.15
    honest = pretrain_classifier(X, y, 50, seed=0)
    assert honest.accuracy(X_new, y_new) > 0.9


def test_discriminator_training_separates_batches():
    real, _ = faces([0, 1, 2], 8)
    fake = np.clip(real + np.random.default_rng(1).normal(0, 0.25, real.shape), 0, 1)
    d = Discriminator(seed=0)
    acc = pretrain_discriminator(d, real, fake, 30, lr=0.05, batch=8, seed=0)
    assert acc > 0.8
    obj, acc = discriminator_step(d, real, fake, 0.0)
    assert 0.05 < acc <= 1.0 and obj <= 0
