import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cfcl.model import (AugmentationSpec, EncoderModel, ShapeError, Triplet, augment, augment_rows,
                        batch_gradient, default_augmentations, embed, sgd_step, triplet_gradient,
                        triplet_loss)


def naive_forward(model, x):
    # independent oracle: scalar loops, no matrix products
    a = [float(v) for v in x]
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        out = []
        for r in range(W.shape[0]):
            s = float(b[r])
            for c in range(W.shape[1]):
                s += float(W[r, c]) * a[c]
            if k != last:
                if model.activation == "relu":
                    s = s if s > 0 else 0.0
                elif model.activation == "tanh":
                    s = math.tanh(s)
            out.append(s)
        a = out
    return np.array(a)


def naive_loss(ea, ep, en, m):
    pos = sum((x - y) ** 2 for x, y in zip(ea, ep))
    neg = sum((x - y) ** 2 for x, y in zip(ea, en))
    return max(0.0, pos - neg + m)


def loss_of(model, A, P, N, m):
    return float(np.mean([naive_loss(naive_forward(model, a), naive_forward(model, p),
                                     naive_forward(model, n), m) for a, p, n in zip(A, P, N)]))


def central_differences(model, A, P, N, m, h=1e-5):
    theta = model.flat()
    g = np.zeros_like(theta)
    for k in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        g[k] = (loss_of(model.with_flat(up), A, P, N, m) - loss_of(model.with_flat(down), A, P, N, m)) / (2 * h)
    return g


def test_identity_layer_embeds_unchanged():
    model = EncoderModel([2, 2], [np.eye(2)], [np.zeros(2)])
    assert np.array_equal(embed(model, [1.0, 2.0]), [1.0, 2.0])


def test_zero_model_maps_to_zero():
    model = EncoderModel.zeros([5, 4, 3])
    x = np.random.default_rng(0).standard_normal(5)
    assert np.array_equal(embed(model, x), np.zeros(3))


@pytest.mark.parametrize("activation", ["relu", "tanh", "identity"])
def test_embed_matches_naive_forward(activation):
    rng = np.random.default_rng(1)
    model = EncoderModel.init([6, 5, 4, 3], rng, activation)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(embed(model, x), naive_forward(model, x), rtol=0, atol=1e-12)


def test_embed_batch_agrees_with_rows():
    rng = np.random.default_rng(2)
    model = EncoderModel.init([4, 8, 2], rng)
    X = rng.standard_normal((7, 4))
    E = embed(model, X)
    for x, e in zip(X, E):
        np.testing.assert_allclose(embed(model, x), e, atol=1e-14)


def test_embed_is_repeatable_and_pure():
    rng = np.random.default_rng(3)
    model = EncoderModel.init([4, 8, 2], rng)
    before = model.flat().copy()
    x = rng.standard_normal(4)
    assert np.array_equal(embed(model, x), embed(model, x))
    assert np.array_equal(model.flat(), before)


def test_embed_rejects_wrong_dimension():
    model = EncoderModel.zeros([3, 2])
    with pytest.raises(ShapeError):
        embed(model, np.zeros(4))


@pytest.mark.parametrize("ea,ep,en,m,want", [
    ((0, 0), (0, 0), (1, 0), 0.5, 0.0),
    ((0, 0), (1, 0), (0, 0), 0.5, 1.5),
    ((0, 0), (0, 1), (2, 0), 1.0, 0.0),
])
def test_triplet_loss_hand_values(ea, ep, en, m, want):
    assert triplet_loss(np.array(ea, float), np.array(ep, float), np.array(en, float), m) == want


def test_triplet_loss_rejects_negative_margin_and_mismatch():
    with pytest.raises(ValueError):
        triplet_loss(np.zeros(2), np.zeros(2), np.zeros(2), -1.0)
    with pytest.raises(ShapeError):
        triplet_loss(np.zeros(2), np.zeros(3), np.zeros(2), 1.0)


vec = arrays(np.float64, 3, elements=st.floats(-10, 10))


@given(vec, vec, vec, st.floats(0, 5))
def test_triplet_loss_nonnegative_and_zero_when_separated(ea, ep, en, m):
    loss = triplet_loss(ea, ep, en, m)
    assert loss >= 0
    if ((ea - en) ** 2).sum() - ((ea - ep) ** 2).sum() >= m:
        assert loss == 0.0
    assert loss == pytest.approx(naive_loss(ea, ep, en, m), abs=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    act = ["tanh", "identity", "relu"][seed % 3]
    model = EncoderModel.init([4, 5, 3, 2], rng, act)
    A, P, N = (rng.standard_normal((3, 4)) for _ in range(3))
    m = float(rng.uniform(0.5, 3.0))
    g = batch_gradient(model, A, P, N, m)[1].flat()
    fd = central_differences(model, A, P, N, m)
    assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))) < 1e-4


def test_inactive_hinge_has_zero_gradient():
    model = EncoderModel([2, 2], [np.eye(2)], [np.zeros(2)])
    t = Triplet(np.zeros(2), np.zeros(2), np.array([5.0, 0.0]))
    assert triplet_loss(embed(model, t.anchor), embed(model, t.positive), embed(model, t.negative), 1.0) == 0
    assert np.array_equal(triplet_gradient(model, t, 1.0).flat(), np.zeros(6))


def test_batch_gradient_is_mean_of_single_gradients():
    rng = np.random.default_rng(7)
    model = EncoderModel.init([3, 4, 2], rng, "tanh")
    batch = [Triplet(*rng.standard_normal((3, 3))) for _ in range(5)]
    each = [triplet_gradient(model, t, 2.0).flat() for t in batch]
    np.testing.assert_allclose(triplet_gradient(model, batch, 2.0).flat(), np.mean(each, 0), atol=1e-12)


def test_sgd_step_unchanged_when_inactive_or_zero_rate():
    rng = np.random.default_rng(8)
    model = EncoderModel.init([3, 4, 2], rng)
    far = [Triplet(np.zeros(3), np.zeros(3), np.full(3, 1e3))]
    assert sgd_step(model, far, 0.5, 1.0).equals(model)
    batch = [Triplet(*rng.standard_normal((3, 3)))]
    assert sgd_step(model, batch, 0.0, 5.0).equals(model)


def test_sgd_step_scalar_toy():
    # single scalar weight w, zero bias; anchor 1, positive 1.25, negative 1 (= anchor), m = 0:
    # loss = w^2 (1 - 1.25)^2 = w^2/16, gradient at w = 4 is 0.5
    model = EncoderModel([1, 1], [np.array([[4.0]])], [np.zeros(1)])
    t = Triplet(np.array([1.0]), np.array([1.25]), np.array([1.0]))
    grad = triplet_gradient(model, t, 0.0)
    assert grad.weights[0][0, 0] == pytest.approx(0.5, abs=1e-12)
    step = sgd_step(model, [t], 0.1, 0.0)
    assert step.weights[0][0, 0] == pytest.approx(4.0 - 0.05, abs=1e-12)
    assert grad.biases[0][0] == 0.0


def test_repeated_step_versus_doubled_batch():
    # scalar toy: loss w^2/16, gradient w/8; a doubled batch has the same mean gradient
    # as one copy, while two sequential steps compound
    model = EncoderModel([1, 1], [np.array([[4.0]])], [np.zeros(1)])
    t = Triplet(np.array([1.0]), np.array([1.25]), np.array([1.0]))
    one = sgd_step(model, [t], 0.1, 0.0)
    doubled = sgd_step(model, [t, t], 0.1, 0.0)
    twice = sgd_step(one, [t], 0.1, 0.0)
    assert doubled.weights[0][0, 0] == pytest.approx(3.95, abs=1e-12)
    assert one.weights[0][0, 0] == pytest.approx(3.95, abs=1e-12)
    assert twice.weights[0][0, 0] == pytest.approx(3.95 - 0.1 * 3.95 / 8, abs=1e-12)


def test_model_midpoint_commutes_with_elementwise_arithmetic():
    rng = np.random.default_rng(10)
    a = EncoderModel.init([3, 4, 2], rng)
    b = EncoderModel.init([3, 4, 2], rng)
    mid = (a + b) * 0.5
    np.testing.assert_allclose(mid.flat(), (a.flat() + b.flat()) / 2, atol=1e-15)
    np.testing.assert_allclose((a * 0.5 + b * 0.5).flat(), mid.flat(), atol=1e-15)


def test_model_save_load_round_trip(tmp_path):
    model = EncoderModel.init([3, 4, 2], np.random.default_rng(11), "tanh")
    model.save(tmp_path / "m.npz")
    loaded = EncoderModel.load(tmp_path / "m.npz")
    assert loaded.equals(model) and loaded.activation == "tanh"


def test_model_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        EncoderModel([2, 2], [np.zeros((3, 2))], [np.zeros(2)])


def test_augment_identity_specs():
    x = np.arange(5.0)
    rng = np.random.default_rng(0)
    assert np.array_equal(augment(x, [AugmentationSpec("noise", sigma=0.0)], rng), x)
    assert np.array_equal(augment(x, [AugmentationSpec("scale", low=1.0, high=1.0)], rng), x)


def test_augment_deterministic_per_seed():
    x = np.arange(5.0)
    specs = default_augmentations(0.3)
    a = [augment(x, specs, np.random.default_rng(4)) for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    X = np.random.default_rng(5).standard_normal((10, 5))
    assert np.array_equal(augment_rows(X, specs, np.random.default_rng(6)),
                          augment_rows(X, specs, np.random.default_rng(6)))


def test_augmentation_spec_validation():
    with pytest.raises(ValueError):
        AugmentationSpec("rotate")
    with pytest.raises(ValueError):
        AugmentationSpec("scale", low=2.0, high=1.0)
    with pytest.raises(ValueError):
        AugmentationSpec("mask", fraction=1.5)
