"""Dense feed-forward surrogate with a two-hidden-layer architecture.

The layer rule follows the surrogate design used throughout this project:
first hidden layer 1.5x the input width, second hidden layer equal to it,
single linear output, ReLU activations.  Training is plain mini-batch
Adam on mean squared error, implemented directly on numpy arrays so the
gradients can be finite-difference checked.

Inputs are normalized per variable from the search-space bounds to [0, 1]
and targets are standardized with the training-set mean/std; both sets of
constants live inside the model, so ``predict`` accepts raw solution
vectors.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sampling import Dataset, DesignSpace

__all__ = [
    "MlpSpec",
    "MlpModel",
    "TrainParams",
    "TrainResult",
    "TrainingDiverged",
    "AdamState",
    "adam_step",
    "build",
    "predict",
    "predict_batch",
    "train",
    "gradient_check",
    "save_model",
    "load_model",
]

MODEL_FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes: input D -> 1.5*D -> D -> 1, ReLU on hidden layers."""

    input_dim: int
    hidden_dims: tuple[int, int]
    output_dim: int = 1

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if len(self.hidden_dims) != 2:
            raise ValueError("exactly two hidden layers are required")

    @classmethod
    def for_dim(cls, input_dim: int) -> "MlpSpec":
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        h1 = int(math.floor(1.5 * input_dim + 0.5))
        return cls(input_dim, (h1, input_dim))


@dataclass
class TrainParams:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1.0e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8


@dataclass
class MlpModel:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    in_offset: np.ndarray
    in_scale: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def build(spec: MlpSpec, seed: int, space: DesignSpace | None = None) -> MlpModel:
    """Initialize a model with fan-scaled uniform weights and zero biases.

    Weight bounds are sqrt(6 / (fan_in + fan_out)).  When ``space`` is
    given, its bounds become the input normalization constants (fixed
    variables map to 0 to avoid dividing by a zero range).
    """
    rng = np.random.default_rng(seed)
    dims = [spec.input_dim, *spec.hidden_dims, spec.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if space is not None:
        if space.dim != spec.input_dim:
            raise ValueError("space dimension does not match the model input")
        offset = space.lower.copy()
        span = space.upper - space.lower
        scale = np.where(span > 0, span, 1.0)
    else:
        offset = np.zeros(spec.input_dim)
        scale = np.ones(spec.input_dim)
    return MlpModel(spec, weights, biases, offset, scale)


def _forward(weights, biases, xn: np.ndarray):
    w1, w2, w3 = weights
    b1, b2, b3 = biases
    z1 = xn @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ w3.T + b3
    return out, (xn, z1, a1, z2, a2)


def predict_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Forward pass over an (n, D) matrix of raw solution vectors."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected (n, {model.spec.input_dim}) input, got {x.shape}")
    xn = (x - model.in_offset) / model.in_scale
    out, _ = _forward(model.weights, model.biases, xn)
    return out[:, 0] * model.y_std + model.y_mean


def predict(model: MlpModel, x) -> float:
    """Predicted objective value for one raw solution vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.spec.input_dim:
        raise ValueError(f"expected a vector of length {model.spec.input_dim}")
    return float(predict_batch(model, x[None, :])[0])


def _backward(weights, cache, dout: np.ndarray):
    """Gradients of the loss wrt every parameter, given d(loss)/d(out)."""
    xn, z1, a1, z2, a2 = cache
    w1, w2, w3 = weights
    dw3 = dout.T @ a2
    db3 = dout.sum(axis=0)
    da2 = dout @ w3
    dz2 = da2 * (z2 > 0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2
    dz1 = da1 * (z1 > 0)
    dw1 = dz1.T @ xn
    db1 = dz1.sum(axis=0)
    return [dw1, dw2, dw3, db1, db2, db3]


def _mse_and_grads(weights, biases, xn: np.ndarray, yn: np.ndarray):
    out, cache = _forward(weights, biases, xn)
    resid = out[:, 0] - yn
    loss = float(np.mean(resid**2))
    dout = (2.0 * resid / resid.shape[0]).astype(xn.dtype)[:, None]
    return loss, _backward(weights, cache, dout)


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    scratch: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params],
                   [np.empty_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied to ``params`` in place.

    All intermediates go through per-parameter scratch buffers; the update
    allocates nothing, which matters for the large weight matrices.
    """
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v, s in zip(params, grads, state.m, state.v, state.scratch):
        m *= beta1
        np.multiply(g, 1.0 - beta1, out=s)
        m += s
        v *= beta2
        np.multiply(g, g, out=s)
        s *= 1.0 - beta2
        v += s
        np.divide(v, c2, out=s)
        np.sqrt(s, out=s)
        s += eps
        np.divide(m, s, out=s)
        s *= lr / c1
        p -= s


@dataclass
class TrainResult:
    model: MlpModel
    final_mse: float
    epoch_losses: list[float] = field(default_factory=list)


def train(model: MlpModel, data: Dataset, params: TrainParams, seed: int) -> TrainResult:
    """Mini-batch Adam/MSE training; reshuffles every epoch from ``seed``.

    The final partial batch is kept.  Losses are reported in standardized
    target units.  A non-finite loss aborts with :class:`TrainingDiverged`.

    The optimization itself runs in float32 (plenty for a surrogate and
    half the memory traffic of float64); the model keeps float64 storage.
    """
    if len(data) == 0:
        raise ValueError("training data must be nonempty")
    x = np.asarray(data.x, dtype=float)
    if x.shape[1] != model.spec.input_dim:
        raise ValueError("dataset width does not match the model input")

    y = data.y.astype(float)
    model.y_mean = float(y.mean())
    std = float(y.std())
    model.y_std = std if std > 0 else 1.0
    yn = ((y - model.y_mean) / model.y_std).astype(np.float32)
    xn = ((x - model.in_offset) / model.in_scale).astype(np.float32)

    rng = np.random.default_rng(seed)
    weights = [w.astype(np.float32) for w in model.weights]
    biases = [b.astype(np.float32) for b in model.biases]
    trainable = [*weights, *biases]
    state = AdamState.for_params(trainable)
    n = x.shape[0]
    epoch_losses: list[float] = []
    for epoch in range(params.epochs):
        order = rng.permutation(n)
        sq_sum = 0.0
        for start in range(0, n, params.batch_size):
            idx = order[start : start + params.batch_size]
            loss, grads = _mse_and_grads(weights, biases, xn[idx], yn[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            sq_sum += loss * idx.shape[0]
            adam_step(trainable, grads, state, params.learning_rate,
                      params.adam_beta1, params.adam_beta2, params.adam_epsilon)
        epoch_losses.append(sq_sum / n)
    for dst, src in zip(model.weights, weights):
        dst[:] = src
    for dst, src in zip(model.biases, biases):
        dst[:] = src
    return TrainResult(model, epoch_losses[-1], epoch_losses)


def gradient_check(model: MlpModel, batch: Dataset, step: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences.

    The batch is capped at 8 rows to keep the sweep cheap.  Relative error
    is |a - f| / max(|a|, |f|); pairs where both magnitudes sit below 1e-8
    are treated as matching zeros (central differences cancel to exactly 0
    there while backprop keeps a denormal-sized value).
    """
    if len(batch) > 8:
        raise ValueError("gradient check expects a batch of at most 8 rows")
    xn = (np.asarray(batch.x, dtype=float) - model.in_offset) / model.in_scale
    yn = (batch.y - model.y_mean) / model.y_std
    _, grads = _mse_and_grads(model.weights, model.biases, xn, yn)

    worst = 0.0
    for p, g in zip(model.parameters(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.shape[0]):
            orig = flat[k]
            flat[k] = orig + step
            up, _ = _mse_and_grads(model.weights, model.biases, xn, yn)
            flat[k] = orig - step
            down, _ = _mse_and_grads(model.weights, model.biases, xn, yn)
            flat[k] = orig
            fd = (up - down) / (2.0 * step)
            denom = max(abs(gflat[k]), abs(fd))
            if denom > 1e-8:
                worst = max(worst, abs(gflat[k] - fd) / denom)
    return worst


def save_model(model: MlpModel, path: str | Path):
    """Binary model container: version byte, dims, then float64 payloads.

    Layout (little endian): 1 version byte; four int64 layer dims;
    in_offset, in_scale, y_mean, y_std; weight matrix then bias vector for
    each layer in order.  Round-trips bit-exactly.
    """
    spec = model.spec
    with open(path, "wb") as fh:
        fh.write(bytes([MODEL_FORMAT_VERSION]))
        fh.write(struct.pack("<4q", spec.input_dim, *spec.hidden_dims, spec.output_dim))
        _write_array(fh, model.in_offset)
        _write_array(fh, model.in_scale)
        _write_array(fh, np.array([model.y_mean, model.y_std]))
        for w, b in zip(model.weights, model.biases):
            _write_array(fh, w)
            _write_array(fh, b)


def load_model(path: str | Path) -> MlpModel:
    with open(path, "rb") as fh:
        version = fh.read(1)
        if len(version) != 1 or version[0] != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model file version")
        d, h1, h2, out = struct.unpack("<4q", fh.read(32))
        spec = MlpSpec(d, (h1, h2), out)
        offset = _read_array(fh, (d,))
        scale = _read_array(fh, (d,))
        y_mean, y_std = _read_array(fh, (2,))
        dims = [d, h1, h2, out]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(_read_array(fh, (fan_out, fan_in)))
            biases.append(_read_array(fh, (fan_out,)))
    return MlpModel(spec, weights, biases, offset, scale, float(y_mean), float(y_std))


def _write_array(fh, arr: np.ndarray):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, shape) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise ValueError("truncated model file")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
