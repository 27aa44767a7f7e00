"""Minimal dense-network machinery with exact analytic gradients.

Everything here is plain numpy and deterministic: seeded initialization,
LeakyReLU activations, mean Huber loss, global-norm gradient clipping and
Adam with L2-coupled weight decay. A full training step is a pure function
of (parameters, batch, step count, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class DenseLayer:
    """Affine layer y = x W^T + b with per-parameter Adam state."""

    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    m_W: np.ndarray = field(init=False)
    v_W: np.ndarray = field(init=False)
    m_b: np.ndarray = field(init=False)
    v_b: np.ndarray = field(init=False)
    version: int = field(init=False, default=0)

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DataError(f"inconsistent layer shapes W={self.W.shape} b={self.b.shape}")
        self.m_W = np.zeros_like(self.W)
        self.v_W = np.zeros_like(self.W)
        self.m_b = np.zeros_like(self.b)
        self.v_b = np.zeros_like(self.b)

    @property
    def fan_in(self) -> int:
        return self.W.shape[1]

    @property
    def fan_out(self) -> int:
        return self.W.shape[0]

    def copy_weights(self) -> "DenseLayer":
        return DenseLayer(W=self.W.copy(), b=self.b.copy())


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    huber_delta: float = 1.0
    clip_max_norm: float = 1.0
    batch_size: int = 256
    max_epochs: int = 200
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stop_patience: int = 20
    min_lr: float = 1e-6
    improvement_threshold: float = 1e-6
    decoupled_weight_decay: bool = False
    seed: int = 42

    def __post_init__(self):
        if self.learning_rate <= 0 or self.min_lr <= 0:
            raise DataError("learning rates must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise DataError("plateau_factor must be in (0, 1)")
        for name in ("batch_size", "max_epochs", "plateau_patience", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")
        if self.huber_delta <= 0 or self.clip_max_norm <= 0:
            raise DataError("huber_delta and clip_max_norm must be positive")


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    """Elementwise max(slope*x, x)."""
    if not 0.0 < slope < 1.0:
        raise DataError(f"slope must be in (0, 1), got {slope}")
    return np.maximum(slope * x, x)


def leaky_relu_grad(pre_activation: np.ndarray, slope: float) -> np.ndarray:
    # Sub-gradient at exactly 0 uses the negative slope, fixed for determinism.
    return np.where(pre_activation > 0.0, 1.0, slope)


def huber_loss(y: np.ndarray, yhat: np.ndarray, delta: float) -> float:
    """Mean over all elements of the Huber penalty on residuals y - yhat."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise DataError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    r = y - yhat
    a = np.abs(r)
    quad = 0.5 * r * r
    lin = delta * (a - 0.5 * delta)
    return float(np.mean(np.where(a <= delta, quad, lin)))


def huber_loss_grad(y: np.ndarray, yhat: np.ndarray, delta: float) -> np.ndarray:
    """d(mean Huber)/d(yhat); the mean is over every element."""
    if y.shape != yhat.shape:
        raise DataError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    r = y - yhat
    return -np.clip(r, -delta, delta) / r.size


@dataclass
class ForwardCache:
    """Intermediates needed by backward; pinned to the parameter versions it
    was computed with so a stale cache is rejected."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray
    versions: tuple[int, ...]


def forward(
    layers: list[DenseLayer],
    activations: list[bool],
    x: np.ndarray,
    slope: float,
    with_cache: bool = False,
):
    """Run a stack of affine layers with optional LeakyReLU after each.

    Returns the batch output, or (output, cache) when with_cache is set.
    """
    if len(activations) != len(layers):
        raise DataError("activation plan length must match layer count")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"input must be a batch matrix, got shape {x.shape}")
    inputs: list[np.ndarray] = []
    preacts: list[np.ndarray] = []
    a = x
    for i, (layer, act) in enumerate(zip(layers, activations)):
        if a.shape[1] != layer.fan_in:
            raise DataError(
                f"layer {i}: input width {a.shape[1]} does not match fan-in {layer.fan_in}"
            )
        if with_cache:
            inputs.append(a)
        z = a @ layer.W.T + layer.b
        if with_cache:
            preacts.append(z)
        a = leaky_relu(z, slope) if act else z
    if not with_cache:
        return a
    cache = ForwardCache(
        inputs=inputs, preacts=preacts, output=a, versions=tuple(l.version for l in layers)
    )
    return a, cache


def backward(
    layers: list[DenseLayer],
    activations: list[bool],
    cache: ForwardCache,
    grad_output: np.ndarray,
    slope: float,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backpropagate d(loss)/d(output) into per-layer (dW, db) gradients."""
    if cache.versions != tuple(l.version for l in layers):
        raise DataError("stale forward cache: parameters changed since the forward pass")
    if grad_output.shape != cache.output.shape:
        raise DataError("grad_output shape does not match forward output")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    da = grad_output
    for i in range(len(layers) - 1, -1, -1):
        dz = da * leaky_relu_grad(cache.preacts[i], slope) if activations[i] else da
        grads[i] = (dz.T @ cache.inputs[i], dz.sum(axis=0))
        if i > 0:
            da = dz @ layers[i].W
    return grads


def global_grad_norm(grads: list[tuple[np.ndarray, np.ndarray]]) -> float:
    total = 0.0
    for dW, db in grads:
        total += float(np.sum(dW * dW)) + float(np.sum(db * db))
    return float(np.sqrt(total))


def clip_global_norm(
    grads: list[tuple[np.ndarray, np.ndarray]], max_norm: float
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Scale all gradients jointly so their global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise DataError("max_norm must be positive")
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return [(dW * scale, db * scale) for dW, db in grads]


def adam_step(
    layers: list[DenseLayer],
    grads: list[tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    step_count: int,
    learning_rate: float | None = None,
) -> None:
    """In-place Adam update with bias correction.

    Weight decay couples as an L2 term added to the raw weight gradient
    before the moment update (biases exempt). Pass learning_rate to override
    config.learning_rate, e.g. from a scheduler.
    """
    if step_count < 1:
        raise DataError("step_count starts at 1")
    lr = config.learning_rate if learning_rate is None else learning_rate
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    bc1 = 1.0 - b1**step_count
    bc2 = 1.0 - b2**step_count
    for layer, (dW, db) in zip(layers, grads):
        gW = dW
        if config.weight_decay != 0.0 and not config.decoupled_weight_decay:
            gW = dW + config.weight_decay * layer.W
        layer.m_W = b1 * layer.m_W + (1.0 - b1) * gW
        layer.v_W = b2 * layer.v_W + (1.0 - b2) * gW * gW
        layer.m_b = b1 * layer.m_b + (1.0 - b1) * db
        layer.v_b = b2 * layer.v_b + (1.0 - b2) * db * db
        if config.weight_decay != 0.0 and config.decoupled_weight_decay:
            layer.W -= lr * config.weight_decay * layer.W
        layer.W -= lr * (layer.m_W / bc1) / (np.sqrt(layer.v_W / bc2) + eps)
        layer.b -= lr * (layer.m_b / bc1) / (np.sqrt(layer.v_b / bc2) + eps)
        layer.version += 1


def init_layers(dims: list[int], slope: float, seed) -> list[DenseLayer]:
    """Seeded uniform fan-in initialization adjusted for the leaky slope.

    Weights are uniform in +-sqrt(6 / ((1 + slope^2) * fan_in)); biases zero.
    ``seed`` may be an int or a numpy SeedSequence.
    """
    if len(dims) < 2:
        raise DataError("need at least input and output dims")
    if any(d < 1 for d in dims):
        raise DataError(f"all dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / ((1.0 + slope * slope) * fan_in))
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(W=W, b=np.zeros(fan_out)))
    return layers
