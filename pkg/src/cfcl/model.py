"""Feed-forward encoder, triplet loss with exact gradients, SGD and augmentations."""
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
AUGMENTATION_KINDS = ("noise", "scale", "mask")


class ShapeError(ValueError):
    pass


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _dact(name, z, a):
    # derivative expressed with the pre-activation z and activation a
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class EncoderModel:
    """MLP encoder. Hidden layers use ``activation``, the output layer is linear.

    ``weights[k]`` has shape ``(layer_dims[k + 1], layer_dims[k])``.
    """

    layer_dims: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise ShapeError(f"invalid layer_dims {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError("number of weight/bias arrays does not match layer_dims")
        for k in range(n_layers):
            shape = (self.layer_dims[k + 1], self.layer_dims[k])
            if self.weights[k].shape != shape:
                raise ShapeError(f"layer {k}: weight shape {self.weights[k].shape} != {shape}")
            if self.biases[k].shape != (shape[0],):
                raise ShapeError(f"layer {k}: bias shape {self.biases[k].shape} != {(shape[0],)}")

    @classmethod
    def init(cls, layer_dims, rng, activation="relu"):
        """He-normal weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases, activation)

    @classmethod
    def zeros(cls, layer_dims, activation="relu"):
        return cls(
            list(layer_dims),
            [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])],
            [np.zeros(o) for o in layer_dims[1:]],
            activation,
        )

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self):
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {theta.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(theta[pos:pos + b.size].copy())
            pos += b.size
        return EncoderModel(self.layer_dims, weights, biases, self.activation)

    def copy(self):
        return EncoderModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def _check_compatible(self, other):
        if not isinstance(other, EncoderModel) or other.layer_dims != self.layer_dims:
            raise ShapeError("models have different layer_dims")

    def __add__(self, other):
        self._check_compatible(other)
        return EncoderModel(
            self.layer_dims,
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
            self.activation,
        )

    def __sub__(self, other):
        return self + other * -1.0

    def __mul__(self, c):
        c = float(c)
        return EncoderModel(
            self.layer_dims,
            [w * c for w in self.weights],
            [b * c for b in self.biases],
            self.activation,
        )

    __rmul__ = __mul__

    def equals(self, other):
        """Bitwise parameter equality."""
        return (
            isinstance(other, EncoderModel)
            and other.layer_dims == self.layer_dims
            and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))
        )

    def save(self, path):
        arrays = {f"p{k}": a for k, a in enumerate(self.arrays())}
        np.savez(path, layer_dims=np.array(self.layer_dims), activation=np.array(self.activation), **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as f:
            dims = [int(d) for d in f["layer_dims"]]
            n = len(dims) - 1
            weights = [f[f"p{2 * k}"] for k in range(n)]
            biases = [f[f"p{2 * k + 1}"] for k in range(n)]
            return cls(dims, weights, biases, str(f["activation"]))


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input dim {model.input_dim}")
    return X, single


def _forward(model, X):
    zs, acts = [], [X]
    a = X
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = z if k == last else _act(model.activation, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def embed(model, x):
    """Embed one datapoint (1-D) or a batch of row vectors (2-D)."""
    X, single = _as_batch(model, x)
    out = _forward(model, X)[1][-1]
    return out[0] if single else out


def triplet_loss(e_a, e_p, e_n, m=1.0):
    """max(0, |e_a - e_p|^2 - |e_a - e_n|^2 + m); broadcasts over leading axes."""
    e_a, e_p, e_n = (np.asarray(e, dtype=float) for e in (e_a, e_p, e_n))
    if not (e_a.shape[-1:] == e_p.shape[-1:] == e_n.shape[-1:]):
        raise ShapeError("embedding dimensions differ")
    if m < 0:
        raise ValueError("margin must be nonnegative")
    pos = np.sum((e_a - e_p) ** 2, axis=-1)
    neg = np.sum((e_a - e_n) ** 2, axis=-1)
    out = np.maximum(0.0, pos - neg + m)
    return float(out) if out.ndim == 0 else out


@dataclass
class Triplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def _stack(batch):
    if isinstance(batch, Triplet):
        batch = [batch]
    if len(batch) == 0:
        raise ValueError("empty triplet batch")
    A = np.array([t.anchor for t in batch], dtype=float)
    P = np.array([t.positive for t in batch], dtype=float)
    N = np.array([t.negative for t in batch], dtype=float)
    return A, P, N


def _backward(model, zs, acts, grad_out):
    grads_w, grads_b = [], []
    delta = grad_out
    for k in range(len(model.weights) - 1, -1, -1):
        grads_w.append(delta.T @ acts[k])
        grads_b.append(delta.sum(axis=0))
        if k > 0:
            delta = (delta @ model.weights[k]) * _dact(model.activation, zs[k - 1], acts[k])
    return grads_w[::-1], grads_b[::-1]


def batch_gradient(model, anchors, positives, negatives, m=1.0):
    """Mean triplet loss and its exact gradient over a batch of stacked triplets.

    Returns ``(loss, grad)`` where ``grad`` is an EncoderModel holding
    d(mean loss)/d(parameters). Inactive hinges (loss <= 0) contribute zero.
    """
    A, _ = _as_batch(model, anchors)
    P, _ = _as_batch(model, positives)
    N, _ = _as_batch(model, negatives)
    b = A.shape[0]
    if b == 0:
        raise ValueError("empty triplet batch")
    if P.shape[0] != b or N.shape[0] != b:
        raise ShapeError("anchor/positive/negative counts differ")
    X = np.concatenate([A, P, N])
    zs, acts = _forward(model, X)
    E = acts[-1]
    ea, ep, en = E[:b], E[b:2 * b], E[2 * b:]
    raw = np.sum((ea - ep) ** 2, axis=1) - np.sum((ea - en) ** 2, axis=1) + m
    active = (raw > 0).astype(float)[:, None] / b
    g_out = np.concatenate([
        2.0 * (en - ep) * active,
        -2.0 * (ea - ep) * active,
        2.0 * (ea - en) * active,
    ])
    gw, gb = _backward(model, zs, acts, g_out)
    grad = EncoderModel(model.layer_dims, gw, gb, model.activation)
    return float(np.maximum(raw, 0.0).mean()), grad


def triplet_gradient(model, t, m=1.0):
    """Gradient of the triplet loss of ``t`` (or the mean over a list of triplets)."""
    return batch_gradient(model, *_stack(t), m=m)[1]


def sgd_step(model, batch, alpha, m=1.0):
    """One SGD step on the mean triplet loss of ``batch``; returns a new model."""
    return model - triplet_gradient(model, batch, m) * alpha


@dataclass(frozen=True)
class AugmentationSpec:
    """One augmentation function family member.

    kind ``noise`` adds N(0, sigma^2) per coordinate (sigma may be per-dimension),
    ``scale`` multiplies by u ~ U[low, high], ``mask`` zeroes a random ``fraction``
    of coordinates.
    """

    kind: str
    sigma: object = 0.0
    low: float = 1.0
    high: float = 1.0
    fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in AUGMENTATION_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("noise sigma must be >= 0")
        if not (0 < self.low <= self.high):
            raise ValueError("scale range must satisfy 0 < low <= high")
        if not (0.0 <= self.fraction <= 1.0):
            raise ValueError("mask fraction must lie in [0, 1]")

    def apply(self, X, rng):
        X = np.asarray(X, dtype=float)
        if self.kind == "noise":
            return X + rng.standard_normal(X.shape) * np.asarray(self.sigma, dtype=float)
        if self.kind == "scale":
            u = rng.uniform(self.low, self.high, size=X.shape[:-1] + (1,))
            return X * u
        keep = rng.random(X.shape) >= self.fraction
        return X * keep


def default_augmentations(sigma=0.1):
    return [
        AugmentationSpec("noise", sigma=sigma),
        AugmentationSpec("scale", low=0.8, high=1.2),
        AugmentationSpec("mask", fraction=0.1),
    ]


def augment(x, spec_set: Sequence[AugmentationSpec], rng):
    """Apply one augmentation drawn uniformly from ``spec_set`` to ``x``."""
    if len(spec_set) == 0:
        raise ValueError("augmentation set is empty")
    spec = spec_set[int(rng.integers(len(spec_set)))]
    return spec.apply(x, rng)


def augment_rows(X, spec_set, rng):
    """Augment each row of ``X`` with its own independently drawn augmentation."""
    if len(spec_set) == 0:
        raise ValueError("augmentation set is empty")
    X = np.asarray(X, dtype=float)
    choice = rng.integers(len(spec_set), size=X.shape[0])
    out = np.empty_like(X)
    for k, spec in enumerate(spec_set):
        rows = choice == k
        if rows.any():
            out[rows] = spec.apply(X[rows], rng)
    return out
