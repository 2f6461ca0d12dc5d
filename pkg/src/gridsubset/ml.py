"""Dense feed-forward networks, Adam, a Pegasos linear SVM and model files.

Everything is plain numpy and deterministic for a given seed.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CROSS_ENTROPY = "cross_entropy"
SQUARED = "squared"
SVM_HINGE = "svm_hinge"


class ModelFileError(ValueError):
    pass


# -- network ------------------------------------------------------------------

@dataclass
class Mlp:
    """ReLU hidden layers, identity output. Weights are (fan_in, fan_out)."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer transition")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (W.shape[1],):
                raise ValueError(f"layer {k} shape does not match layer_dims {self.layer_dims}")

    @classmethod
    def init(cls, layer_dims: Sequence[int], seed: int | np.random.Generator) -> "Mlp":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_dims), weights, biases)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, x)


def forward(model: Mlp, x: np.ndarray) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Run the network on one vector or a batch of rows.

    The cache holds ``(layer input, pre-activation)`` per layer.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.layer_dims[0]:
        raise ValueError(f"expected {model.layer_dims[0]} inputs, got {x.shape[-1]}")
    cache = []
    h = x
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        cache.append((h, z))
        h = z if k == last else relu(z)
    return h, cache


def backward(model: Mlp, cache, upstream: np.ndarray) -> list[np.ndarray]:
    """Gradients in :meth:`Mlp.params` order, summed over any batch axis."""
    grad = np.asarray(upstream, dtype=float)
    if grad.shape != cache[-1][1].shape:
        raise ValueError(f"upstream shape {grad.shape} != output shape {cache[-1][1].shape}")
    grads: list[np.ndarray] = []
    for k in range(len(model.weights) - 1, -1, -1):
        h, z = cache[k]
        if k != len(model.weights) - 1:
            grad = grad * (z > 0)
        if grad.ndim == 1:
            dW, db = np.outer(h, grad), grad.copy()
        else:
            dW, db = h.T @ grad, grad.sum(axis=0)
        grads[:0] = [dW, db]
        grad = grad @ model.weights[k].T
    return grads


# -- losses ---------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Mean loss and gradient w.r.t. the logits (one row or a batch)."""
    logits = np.asarray(logits, dtype=float)
    z = logits - np.max(logits, axis=-1, keepdims=True)
    log_p = z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))
    if logits.ndim == 1:
        onehot = np.zeros_like(logits)
        onehot[int(label)] = 1.0
        return float(-log_p[int(label)]), np.exp(log_p) - onehot
    label = np.asarray(label, dtype=int)
    n = len(label)
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), label] = 1.0
    loss = float(-np.mean(log_p[np.arange(n), label]))
    return loss, (np.exp(log_p) - onehot) / n


def squared_error(output, target) -> tuple[float, np.ndarray]:
    """(output - target)**2, averaged over a batch; gradient w.r.t. output."""
    out = np.asarray(output, dtype=float)
    diff = out - np.asarray(target, dtype=float).reshape(out.shape)
    if diff.ndim == 0:
        return float(diff ** 2), 2.0 * diff
    n = diff.shape[0]
    return float(np.mean(diff ** 2)), 2.0 * diff / n


# -- optimisation ---------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moments: list[np.ndarray] = field(default_factory=list)
    second_moments: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.first_moments:
        state.first_moments = [np.zeros_like(p) for p in params]
        state.second_moments = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


def loss_fn(kind: str) -> Callable:
    if kind == CROSS_ENTROPY:
        return softmax_cross_entropy
    if kind == SQUARED:
        return lambda out, y: squared_error(out[:, 0] if out.ndim == 2 else out, y)
    raise ValueError(f"unknown loss kind {kind!r}")


def train(
    model: Mlp,
    X: np.ndarray,
    y: np.ndarray,
    loss: str,
    adam: AdamState,
    steps: int,
    batch_size: int = 32,
    seed: int = 0,
    evaluate: Callable[[Mlp], dict] | None = None,
    eval_every: int = 1,
) -> list[dict]:
    """Mini-batch Adam training with a seeded reshuffle every epoch.

    Returns one record per step with the mini-batch loss; when ``evaluate``
    is given its metrics are merged in every ``eval_every`` steps.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("empty dataset")
    if X.shape[1] != model.layer_dims[0]:
        raise ValueError(f"dataset has {X.shape[1]} features, model expects {model.layer_dims[0]}")
    lossf = loss_fn(loss)
    rng = np.random.default_rng(seed)
    batch_size = min(batch_size, len(X))
    order, pos = rng.permutation(len(X)), 0
    curve = []
    for step in range(1, steps + 1):
        if pos + batch_size > len(X):
            order, pos = rng.permutation(len(X)), 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        out, cache = forward(model, X[idx])
        value, grad_out = lossf(out, y[idx])
        if loss == SQUARED:
            grad_out = grad_out.reshape(out.shape)
        adam_step(adam, model.params(), backward(model, cache, grad_out))
        rec = {"step": step, "train_loss": value}
        if evaluate is not None and (step % eval_every == 0 or step == steps):
            rec.update(evaluate(model))
        curve.append(rec)
    if not all(np.all(np.isfinite(p)) for p in model.params()):
        raise FloatingPointError("training produced non-finite parameters")
    return curve


def predict_classes(model: Mlp, X: np.ndarray) -> np.ndarray:
    return np.argmax(model(np.asarray(X, dtype=float)), axis=-1)


# -- gradient checking ------------------------------------------------------------

def numeric_gradient(f: Callable[[], float], params: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of ``f`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = f()
            flat[i] = keep - h
            down = f()
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(a: Sequence[np.ndarray], b: Sequence[np.ndarray], floor: float = 1e-6) -> float:
    worst = 0.0
    for x, y in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def gradient_check(model: Mlp, x: np.ndarray, target, loss: str, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences."""
    lossf = loss_fn(loss)

    def value() -> float:
        return lossf(forward(model, x)[0], target)[0]

    out, cache = forward(model, x)
    _, g = lossf(out, target)
    analytic = backward(model, cache, np.asarray(g).reshape(out.shape))
    return max_relative_error(analytic, numeric_gradient(value, model.params(), h))


def split_indices(n: int, train_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first ``train_size`` rows train."""
    if not 0 < train_size < n:
        raise ValueError(f"train_size {train_size} must lie strictly between 0 and {n}")
    order = np.random.default_rng(seed).permutation(n)
    return order[:train_size], order[train_size:]


# -- feature scaling --------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.std + self.mean


# -- linear SVM -----------------------------------------------------------------

@dataclass
class LinearSvm:
    weights: np.ndarray
    bias: float
    regularization: float

    def decision(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias


def svm_train(
    X: np.ndarray,
    y: np.ndarray,
    lam: float = 1e-3,
    epochs: int = 20,
    seed: int = 0,
    on_epoch: Callable[[int, "LinearSvm"], None] | None = None,
) -> LinearSvm:
    """Pegasos: stochastic sub-gradient descent on the primal hinge loss.

    Labels are 0/1 and the step at update t is 1/(lam*t). The bias is the
    weight of a constant feature and shrinks with the rest: left unregularised,
    the first few steps of size ~1/lam throw it far off and it never recovers.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(X) == 0:
        raise ValueError("empty dataset")
    if len(np.unique(y)) < 2:
        raise ValueError("SVM training needs both classes; dataset is single-class")
    s = np.where(y > 0, 1.0, -1.0)
    rng = np.random.default_rng(seed)
    w = np.zeros(X.shape[1])
    b = 0.0
    t = 0
    for epoch in range(1, epochs + 1):
        for i in rng.permutation(len(X)):
            t += 1
            eta = 1.0 / (lam * t)
            margin = s[i] * (X[i] @ w + b)
            w *= 1.0 - eta * lam
            b *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * s[i] * X[i]
                b += eta * s[i]
        if on_epoch is not None:
            on_epoch(epoch, LinearSvm(w.copy(), float(b), lam))
    return LinearSvm(w, float(b), lam)


def svm_predict(model: LinearSvm, x: np.ndarray) -> np.ndarray | int:
    d = model.decision(x)
    if np.ndim(d) == 0:
        return int(d > 0)
    return (d > 0).astype(int)


def hinge_objective(model: LinearSvm, X: np.ndarray, y: np.ndarray) -> float:
    s = np.where(np.asarray(y) > 0, 1.0, -1.0)
    margins = np.maximum(0.0, 1.0 - s * model.decision(X))
    return float(0.5 * model.regularization * model.weights @ model.weights + margins.mean())


# -- model files ----------------------------------------------------------------

MAGIC = b"GRIDSUBS"
FORMAT_VERSION = 1


@dataclass
class SavedModel:
    kind: str
    model: Mlp | LinearSvm
    scaler: Standardizer | None = None

    @property
    def layer_dims(self) -> list[int]:
        if isinstance(self.model, LinearSvm):
            return [len(self.model.weights), 1]
        return self.model.layer_dims

    def _prepare(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.transform(X) if self.scaler is not None else np.asarray(X, dtype=float)

    def raw_output(self, X: np.ndarray) -> np.ndarray:
        Z = self._prepare(X)
        if isinstance(self.model, LinearSvm):
            return self.model.decision(Z)
        return self.model(Z)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class indices for classifiers, scalar scores for regressors."""
        out = self.raw_output(X)
        if self.kind == SVM_HINGE:
            return (out > 0).astype(int)
        if self.kind == CROSS_ENTROPY:
            return np.argmax(out, axis=-1)
        return out[..., 0]


def _pack_array(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def model_bytes(saved: SavedModel) -> bytes:
    kind = saved.kind.encode()
    dims = saved.layer_dims
    parts = [MAGIC, struct.pack("<IB", FORMAT_VERSION, len(kind)), kind]
    parts.append(struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}I", *dims))
    if isinstance(saved.model, LinearSvm):
        parts += [_pack_array(saved.model.weights), _pack_array(np.array([saved.model.bias]))]
        parts.append(struct.pack("<d", saved.model.regularization))
    else:
        parts += [_pack_array(p) for p in saved.model.params()]
    if saved.scaler is None:
        parts.append(b"\x00")
    else:
        parts += [b"\x01", _pack_array(saved.scaler.mean), _pack_array(saved.scaler.std)]
    return b"".join(parts)


def save_model(saved: SavedModel, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(saved))


def parse_model(data: bytes) -> SavedModel:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ModelFileError("truncated model file")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def floats(n: int) -> np.ndarray:
        return np.frombuffer(take(8 * n), dtype="<f8").astype(float)

    if take(len(MAGIC)) != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    version, klen = struct.unpack("<IB", take(5))
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    kind = take(klen).decode()
    (ndims,) = struct.unpack("<I", take(4))
    dims = list(struct.unpack(f"<{ndims}I", take(4 * ndims)))
    if kind == SVM_HINGE:
        w = floats(dims[0])
        b = float(floats(1)[0])
        (lam,) = struct.unpack("<d", take(8))
        model: Mlp | LinearSvm = LinearSvm(w, b, lam)
    elif kind in (CROSS_ENTROPY, SQUARED):
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(floats(fan_in * fan_out).reshape(fan_in, fan_out))
            biases.append(floats(fan_out))
        model = Mlp(dims, weights, biases)
    else:
        raise ModelFileError(f"unknown loss kind {kind!r}")
    scaler = None
    if take(1) == b"\x01":
        scaler = Standardizer(floats(dims[0]), floats(dims[0]))
    if pos != len(data):
        raise ModelFileError("trailing bytes in model file")
    return SavedModel(kind, model, scaler)


def load_model(path: str | Path) -> SavedModel:
    return parse_model(Path(path).read_bytes())
