import numpy as np
import pytest

from flowcodec.errors import DataError
from flowcodec.neural import (
    DenseLayer,
    TrainConfig,
    adam_step,
    backward,
    clip_global_norm,
    forward,
    global_grad_norm,
    huber_loss,
    huber_loss_grad,
    init_layers,
    leaky_relu,
    leaky_relu_grad,
)

SLOPE = 0.2


# ---------------------------------------------------------------- activations


def test_leaky_relu_values():
    x = np.array([-1.0, -0.5, 0.0, 0.5, 2.0])
    out = leaky_relu(x, SLOPE)
    assert np.allclose(out, [-0.2, -0.1, 0.0, 0.5, 2.0])
    with pytest.raises(DataError):
        leaky_relu(x, 1.5)


def test_leaky_relu_grad_values():
    x = np.array([-3.0, 0.0, 4.0])
    assert np.allclose(leaky_relu_grad(x, SLOPE), [0.2, 0.2, 1.0])


# ---------------------------------------------------------------- huber


def test_huber_loss_hand_values():
    # Quadratic branch: 0.5 * 0.5^2 = 0.125. Linear: 1*(2 - 0.5) = 1.5.
    # Boundary |r| = delta stays quadratic: 0.5.
    assert huber_loss(np.array([0.5]), np.array([0.0]), 1.0) == pytest.approx(0.125)
    assert huber_loss(np.array([2.0]), np.array([0.0]), 1.0) == pytest.approx(1.5)
    assert huber_loss(np.array([1.0]), np.array([0.0]), 1.0) == pytest.approx(0.5)


def test_huber_loss_means_over_all_elements():
    y = np.array([[0.5, 2.0], [1.0, 0.0]])
    yhat = np.zeros((2, 2))
    expected = (0.125 + 1.5 + 0.5 + 0.0) / 4.0
    assert huber_loss(y, yhat, 1.0) == pytest.approx(expected)
    with pytest.raises(DataError):
        huber_loss(y, np.zeros(3), 1.0)


def test_huber_grad_matches_finite_differences():
    rng = np.random.default_rng(21)
    for delta in (1.0, 0.7):
        y = rng.normal(size=(4, 3))
        yhat = rng.normal(size=(4, 3))
        grad = huber_loss_grad(y, yhat, delta)
        h = 1e-7
        for i in range(4):
            for j in range(3):
                up = yhat.copy()
                up[i, j] += h
                down = yhat.copy()
                down[i, j] -= h
                fd = (huber_loss(y, up, delta) - huber_loss(y, down, delta)) / (2 * h)
                assert grad[i, j] == pytest.approx(fd, abs=1e-6)


# ---------------------------------------------------------------- forward/backward


def test_forward_shapes_and_validation():
    layers = init_layers([4, 8, 2], SLOPE, seed=0)
    x = np.random.default_rng(1).normal(size=(5, 4))
    out = forward(layers, [True, False], x, SLOPE)
    assert out.shape == (5, 2)
    with pytest.raises(DataError):
        forward(layers, [True], x, SLOPE)
    with pytest.raises(DataError, match="layer 0"):
        forward(layers, [True, False], np.ones((5, 3)), SLOPE)


def test_backward_rejects_stale_cache():
    layers = init_layers([3, 4, 3], SLOPE, seed=2)
    x = np.random.default_rng(3).normal(size=(6, 3))
    out, cache = forward(layers, [True, False], x, SLOPE, with_cache=True)
    grads = backward(layers, [True, False], cache, np.ones_like(out), SLOPE)
    adam_step(layers, grads, TrainConfig(), step_count=1)
    with pytest.raises(DataError, match="stale"):
        backward(layers, [True, False], cache, np.ones_like(out), SLOPE)


def grad_check(dims, activations, seed, batch, rel_tol=1e-4):
    """Central finite differences over every parameter of a small net."""
    layers = init_layers(dims, SLOPE, seed=seed)
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(size=(batch, dims[0]))
    target = rng.normal(size=(batch, dims[-1]))
    delta = 1.0

    out, cache = forward(layers, activations, x, SLOPE, with_cache=True)
    grads = backward(layers, activations, cache, huber_loss_grad(target, out, delta), SLOPE)

    h = 1e-5
    worst = 0.0
    for li, layer in enumerate(layers):
        for arr, g in ((layer.W, grads[li][0]), (layer.b, grads[li][1])):
            flat = arr.ravel()
            gflat = np.asarray(g).ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                up = huber_loss(target, forward(layers, activations, x, SLOPE), delta)
                flat[idx] = orig - h
                down = huber_loss(target, forward(layers, activations, x, SLOPE), delta)
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                rel = abs(gflat[idx] - fd) / max(abs(gflat[idx]), abs(fd), 1e-6)
                worst = max(worst, rel)
    assert worst < rel_tol, f"gradient mismatch: relative error {worst}"


def test_gradients_match_finite_differences_small_net():
    grad_check([4, 6, 3, 6, 4], [True, True, True, False], seed=5, batch=6)


def test_gradients_match_finite_differences_asymmetric_net():
    grad_check([3, 7, 2], [True, False], seed=8, batch=4)


# ---------------------------------------------------------------- clipping


def test_global_grad_norm_hand_value():
    grads = [(np.array([[3.0]]), np.array([4.0]))]
    assert global_grad_norm(grads) == pytest.approx(5.0)


def test_clip_global_norm_scales_to_max():
    grads = [(np.array([[3.0]]), np.array([4.0]))]
    clipped = clip_global_norm(grads, 1.0)
    assert global_grad_norm(clipped) == pytest.approx(1.0, rel=1e-12)
    assert clipped[0][0][0, 0] == pytest.approx(0.6)
    assert clipped[0][1][0] == pytest.approx(0.8)


def test_clip_global_norm_noop_below_max_and_on_zero():
    grads = [(np.array([[0.3]]), np.array([0.4]))]
    out = clip_global_norm(grads, 1.0)
    assert out[0][0][0, 0] == 0.3 and out[0][1][0] == 0.4
    zero = [(np.zeros((2, 2)), np.zeros(2))]
    out = clip_global_norm(zero, 1.0)
    assert np.all(out[0][0] == 0.0)


# ---------------------------------------------------------------- adam


def reference_adam(W, g, m, v, step, lr, b1, b2, eps):
    """Textbook Adam update written independently of the implementation."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1**step)
    v_hat = v / (1 - b2**step)
    return W - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def test_adam_step_matches_reference_two_steps():
    cfg = TrainConfig(weight_decay=0.0)
    layer = DenseLayer(W=np.array([[2.0]]), b=np.array([1.0]))
    rng = np.random.default_rng(14)
    W, m, v = layer.W.copy(), np.zeros((1, 1)), np.zeros((1, 1))
    bexp, bm, bv = layer.b.copy(), np.zeros(1), np.zeros(1)
    for step in (1, 2):
        gW = rng.normal(size=(1, 1))
        gb = rng.normal(size=1)
        adam_step([layer], [(gW, gb)], cfg, step_count=step)
        W, m, v = reference_adam(W, gW, m, v, step, cfg.learning_rate,
                                 cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
        bexp, bm, bv = reference_adam(bexp, gb, bm, bv, step, cfg.learning_rate,
                                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
        assert np.allclose(layer.W, W, rtol=0, atol=1e-15)
        assert np.allclose(layer.b, bexp, rtol=0, atol=1e-15)


def test_coupled_weight_decay_adds_l2_term_and_skips_bias():
    cfg = TrainConfig(weight_decay=0.01)
    layer = DenseLayer(W=np.array([[5.0]]), b=np.array([5.0]))
    adam_step([layer], [(np.zeros((1, 1)), np.zeros(1))], cfg, step_count=1)
    # Zero raw gradient: the weight still moves because decay couples into
    # the gradient; the bias is exempt and must not move.
    W, _, _ = reference_adam(np.array([[5.0]]), 0.01 * np.array([[5.0]]),
                             np.zeros((1, 1)), np.zeros((1, 1)), 1,
                             cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                             cfg.adam_epsilon)
    assert np.allclose(layer.W, W, atol=1e-15)
    assert layer.b[0] == 5.0


def test_decoupled_weight_decay_shrinks_directly():
    cfg = TrainConfig(weight_decay=0.01, decoupled_weight_decay=True)
    layer = DenseLayer(W=np.array([[5.0]]), b=np.array([5.0]))
    adam_step([layer], [(np.zeros((1, 1)), np.zeros(1))], cfg, step_count=1)
    # Zero gradient leaves the moments at zero, so the only change is the
    # multiplicative shrink lr * wd.
    assert layer.W[0, 0] == pytest.approx(5.0 * (1 - cfg.learning_rate * 0.01), rel=1e-15)
    assert layer.b[0] == 5.0


def test_adam_learning_rate_override():
    layer1 = DenseLayer(W=np.array([[1.0]]), b=np.array([0.0]))
    layer2 = DenseLayer(W=np.array([[1.0]]), b=np.array([0.0]))
    g = [(np.array([[0.5]]), np.array([0.0]))]
    cfg = TrainConfig(weight_decay=0.0)
    adam_step([layer1], g, cfg, 1)
    adam_step([layer2], g, cfg, 1, learning_rate=cfg.learning_rate / 2)
    d1 = 1.0 - layer1.W[0, 0]
    d2 = 1.0 - layer2.W[0, 0]
    assert d2 == pytest.approx(d1 / 2, rel=1e-12)


# ---------------------------------------------------------------- init


def test_init_layers_seeded_and_bounded():
    dims = [21, 128, 64]
    a = init_layers(dims, SLOPE, seed=42)
    b = init_layers(dims, SLOPE, seed=42)
    c = init_layers(dims, SLOPE, seed=43)
    for la, lb in zip(a, b):
        assert np.array_equal(la.W, lb.W)
        assert np.all(la.b == 0.0)
    assert not np.array_equal(a[0].W, c[0].W)
    for layer in a:
        bound = np.sqrt(6.0 / ((1.0 + SLOPE**2) * layer.fan_in))
        assert np.abs(layer.W).max() <= bound
    with pytest.raises(DataError):
        init_layers([4], SLOPE, seed=0)
    with pytest.raises(DataError):
        init_layers([4, 0], SLOPE, seed=0)


def test_train_config_validation():
    with pytest.raises(DataError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(DataError):
        TrainConfig(plateau_factor=1.0)
    with pytest.raises(DataError):
        TrainConfig(batch_size=0)
    with pytest.raises(DataError):
        TrainConfig(huber_delta=0.0)
