"""From-scratch fully connected network mapping source parameters to
reduced trajectory coordinates.

Five weight layers: self-normalizing exponential-linear activations on the
four hidden ones, identity on the output.  Trained on mean squared error
with bias-corrected adaptive moment estimation.  Everything is plain numpy
with row-vector batches, seeded and single-threaded, so a fixed seed, config
and dataset reproduce the weights bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MODEL_MAGIC = b"PEXM"
MODEL_VERSION = 1

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


def selu(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0.0, x, SELU_ALPHA * np.expm1(x))


def selu_derivative(x: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(x > 0.0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


def normalize_inputs(w: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"normalization bounds need lo < hi, got [{lo}, {hi}]")
    return (np.asarray(w, dtype=np.float64) - lo) / (hi - lo)


@dataclass
class MlpModel:
    """Weight matrices and bias row vectors, first to last layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def init_model(layer_dims, seed: int = 0) -> MlpModel:
    """LeCun-normal weights (the standard companion of SELU), zero biases."""
    if len(layer_dims) < 2:
        raise ValueError("need at least an input and an output dimension")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases)


def mlp_forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; hidden layers SELU, output identity."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = _forward_cached(model, x)[0]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("forward pass produced non-finite activations")
    return out


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Returns (output, pre-activations per layer, activations per layer)."""
    pre, act = [], [x]
    current = x
    last = model.layer_count - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = current @ w + b
        pre.append(z)
        current = z if i == last else selu(z)
        act.append(current)
    return current, pre, act


def mlp_backward(model: MlpModel, x: np.ndarray, target: np.ndarray):
    """Mean-squared-error value and gradients by reverse accumulation.

    The loss averages over every batch row and output coordinate.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    out, pre, act = _forward_cached(model, x)
    diff = out - target
    loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise TrainingDivergedError("loss is not finite")
    grad_w = [None] * model.layer_count
    grad_b = [None] * model.layer_count
    delta = 2.0 * diff / diff.size
    for i in range(model.layer_count - 1, -1, -1):
        grad_w[i] = act[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * selu_derivative(pre[i - 1])
    return loss, grad_w, grad_b


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 500
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64, 64, 64)
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if not self.bounds[0] < self.bounds[1]:
            raise ValueError("normalization bounds need lo < hi")


class AdamState:
    """Bias-corrected adaptive moment estimates for one model."""

    def __init__(self, model: MlpModel, config: TrainConfig):
        self.config = config
        self.t = 0
        self.m = [np.zeros_like(p) for p in model.parameters()]
        self.v = [np.zeros_like(p) for p in model.parameters()]

    def step(self, model: MlpModel, grad_w, grad_b) -> None:
        cfg = self.config
        self.t += 1
        grads = [g for pair in zip(grad_w, grad_b) for g in pair]
        params = list(model.parameters())
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g**2
            m_hat = m / (1.0 - cfg.beta1**self.t)
            v_hat = v / (1.0 - cfg.beta2**self.t)
            p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def adam_step(state: AdamState, model: MlpModel, grad_w, grad_b) -> MlpModel:
    state.step(model, grad_w, grad_b)
    return model


def train(inputs: np.ndarray, targets: np.ndarray, config: TrainConfig,
          model: MlpModel | None = None):
    """Fit the network; returns (model, loss history as (epoch, mse) pairs).

    Inputs are raw parameter vectors; they are normalized with the config
    bounds before entering the first layer.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets disagree on the sample count")
    if inputs.shape[0] == 0:
        raise ValueError("training set is empty")
    x = normalize_inputs(inputs, *config.bounds)
    if model is None:
        dims = (inputs.shape[1], *config.hidden, targets.shape[1])
        model = init_model(dims, seed=config.seed)
    state = AdamState(model, config)
    rng = np.random.default_rng(config.seed + 1)
    count = x.shape[0]
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(count)
        squared_sum = 0.0
        for lo in range(0, count, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            loss, grad_w, grad_b = mlp_backward(model, x[batch], targets[batch])
            state.step(model, grad_w, grad_b)
            squared_sum += loss * batch.size * targets.shape[1]
        epoch_loss = squared_sum / (count * targets.shape[1])
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch}: loss={epoch_loss}"
            )
        history.append((epoch, epoch_loss))
    return model, history


def predict_reduced(model: MlpModel, w: np.ndarray, bounds) -> np.ndarray:
    """Raw network output for one parameter vector (flat reduced coords)."""
    x = normalize_inputs(np.atleast_2d(w), *bounds)
    return mlp_forward(model, x)[0]


def predict_trajectory(model: MlpModel, basis, w: np.ndarray, bounds) -> np.ndarray:
    """Implicit-component coefficients for levels 2..N, shape (N-1, dim).

    The flat network output is reshaped time-major (each level's reduced
    coordinates contiguous) and lifted through the snapshot basis.
    """
    flat = predict_reduced(model, w, bounds)
    width = basis.retained
    if flat.size % width != 0:
        raise ValueError(
            f"output length {flat.size} is not a multiple of the basis size {width}"
        )
    reduced = flat.reshape(-1, width)
    return reduced @ basis.matrix.T


@dataclass(frozen=True)
class ParameterSampler:
    """Uniform parameter vectors in [lo, hi]^k."""

    k: int
    lo: float
    hi: float
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1 or not self.lo < self.hi:
            raise ValueError("sampler needs k >= 1 and lo < hi")
        object.__setattr__(self, "_rng", np.random.default_rng(self.seed))

    def sample(self, count: int) -> np.ndarray:
        return self._rng.uniform(self.lo, self.hi, size=(count, self.k))


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<Q", model.layer_count))
        for w, b in zip(model.weights, model.biases):
            fh.write(struct.pack("<QQ", *w.shape))
            fh.write(np.asfortranarray(w, dtype="<f8").tobytes(order="F"))
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model file version {version}")
        (layers,) = struct.unpack("<Q", fh.read(8))
        weights, biases = [], []
        for _ in range(layers):
            rows, cols = struct.unpack("<QQ", fh.read(16))
            weights.append(
                np.array(
                    np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(
                        (rows, cols), order="F"
                    )
                )
            )
            biases.append(np.array(np.frombuffer(fh.read(8 * cols), dtype="<f8")))
    return MlpModel(weights=weights, biases=biases)
