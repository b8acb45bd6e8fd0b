"""Dense-network engine: forward/backward passes, binary cross-entropy, the three
supported optimizers (adam, sgd, adagrad), and a deterministic training loop with
early stopping and best-weights checkpointing.

Everything runs in float64 on plain numpy arrays. Randomness always flows through
an explicit seed, so identical inputs reproduce bit-identical trained weights.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, TrainingError
from .ioutil import atomic_write_bytes

ACTIVATIONS = ("none", "relu", "sigmoid")

# Probabilities are clipped into [LOSS_CLIP, 1 - LOSS_CLIP] before the log;
# the loss gradient is zero outside the clip band.
LOSS_CLIP = 1e-7

WEIGHTS_MAGIC = b"BSTK"
WEIGHTS_VERSION = 1
_ACTIVATION_CODES = {"none": 0, "relu": 1, "sigmoid": 2}
_ACTIVATION_NAMES = {code: name for name, code in _ACTIVATION_CODES.items()}


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(z, dtype=float), 0.0)


def _activate(z: np.ndarray, name: str) -> np.ndarray:
    if name == "none":
        return np.asarray(z, dtype=float)
    if name == "relu":
        return relu(z)
    if name == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(z: np.ndarray, name: str) -> np.ndarray:
    """Derivative of the activation at pre-activation z. relu uses the 0 subgradient at 0."""
    if name == "none":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(float)
    if name == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """A fully connected layer y = activation(W x + b).

    `weights` is (out, in); `bias` is (out,). Frozen layers take part in the
    forward and backward passes but never receive gradients or updates.
    The most recent forward pass caches (input batch, pre-activation) for backward.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "none"
    frozen: bool = False
    cache: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} outputs"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation, self.frozen)


def he_layer(
    rng: np.random.Generator, n_in: int, n_out: int, activation: str = "relu", frozen: bool = False
) -> DenseLayer:
    """Seeded uniform He-style initialization: W ~ U(-sqrt(6/n_in), +sqrt(6/n_in)), b = 0."""
    limit = np.sqrt(6.0 / n_in)
    weights = rng.uniform(-limit, limit, size=(n_out, n_in))
    return DenseLayer(weights, np.zeros(n_out), activation, frozen)


def dense_forward(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Apply one layer to a sample (in,) or batch (n, in), caching for backward."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != layer.in_dim:
        raise ValueError(f"input width {batch.shape[-1]} does not match layer width {layer.in_dim}")
    z = batch @ layer.weights.T + layer.bias
    layer.cache = (batch, z)
    out = _activate(z, layer.activation)
    return out[0] if single else out


def dense_apply(x: np.ndarray, layer: DenseLayer) -> np.ndarray:
    """Pure inference-path version of dense_forward: no cache is written."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input width {x.shape[-1]} does not match layer width {layer.in_dim}")
    return _activate(x @ layer.weights.T + layer.bias, layer.activation)


def network_forward(layers: list[DenseLayer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = dense_forward(x, layer)
    return x


def network_apply(layers: list[DenseLayer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = dense_apply(x, layer)
    return x


def bce_loss(p: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy with probabilities clipped into [1e-7, 1 - 1e-7]."""
    p = np.asarray(p, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("empty prediction vector")
    if p.shape != y.shape:
        raise ValueError(f"prediction/label length mismatch: {p.shape} vs {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary")
    pc = np.clip(p, LOSS_CLIP, 1.0 - LOSS_CLIP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def backward(layers: list[DenseLayer], labels: np.ndarray, loss: str = "bce"):
    """Gradients of the mean loss w.r.t. every trainable parameter via the chain rule.

    Requires a cached forward pass (network_forward) for the same batch. Returns a
    list aligned with `layers`: (dW, db) per trainable layer, None for frozen ones.
    """
    if loss != "bce":
        raise ValueError(f"unsupported loss {loss!r}")
    if not layers:
        raise ValueError("empty network")
    for layer in layers:
        if layer.cache is None:
            raise RuntimeError("no cached forward pass; run network_forward on the batch first")
    n = layers[-1].cache[1].shape[0]
    for layer in layers:
        if layer.cache[0].shape[0] != n:
            raise RuntimeError("stale forward cache: layer batch sizes disagree")

    z_last = layers[-1].cache[1]
    y = np.asarray(labels, dtype=float).reshape(z_last.shape)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary")

    p_raw = _activate(z_last, layers[-1].activation)
    pc = np.clip(p_raw, LOSS_CLIP, 1.0 - LOSS_CLIP)
    inside = (p_raw >= LOSS_CLIP) & (p_raw <= 1.0 - LOSS_CLIP)
    d_loss = np.where(inside, (pc - y) / (pc * (1.0 - pc) * pc.size), 0.0)
    delta = d_loss * _activation_grad(z_last, layers[-1].activation)

    grads: list[tuple[np.ndarray, np.ndarray] | None] = [None] * len(layers)
    for i in reversed(range(len(layers))):
        layer = layers[i]
        x_in, _ = layer.cache
        if not layer.frozen:
            grads[i] = (delta.T @ x_in, delta.sum(axis=0))
        if i > 0:
            upstream = delta @ layer.weights
            _, z_prev = layers[i - 1].cache
            delta = upstream * _activation_grad(z_prev, layers[i - 1].activation)
    return grads


@dataclass
class OptimizerState:
    """Update rule plus its per-parameter accumulators.

    adam keeps first/second moments with bias correction, adagrad keeps squared
    gradient sums, sgd keeps a velocity (momentum defaults to 0). Accumulators are
    created lazily on the first step so the state can be declared before the
    parameter shapes are known.
    """

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    momentum: float = 0.0
    step_count: int = 0
    slots: list[dict[str, np.ndarray]] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd", "adagrad"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("adam decay rates must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.step_count < 0:
            raise ValueError("step_count must be non-negative")


def optimizer_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: OptimizerState,
    names: list[str] | None = None,
) -> tuple[list[np.ndarray], OptimizerState]:
    """Apply one update in place and advance the step counter."""
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    if names is None:
        names = [f"param[{i}]" for i in range(len(params))]
    for name, param, grad in zip(names, params, grads):
        if param.shape != grad.shape:
            raise ValueError(f"{name}: gradient shape {grad.shape} != parameter shape {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for {name}")

    if state.slots is None:
        state.slots = [
            {key: np.zeros_like(p) for key in _slot_keys(state.kind)} for p in params
        ]
    if len(state.slots) != len(params):
        raise ValueError("optimizer state does not match this parameter list")
    for slot, param in zip(state.slots, params):
        for acc in slot.values():
            if acc.shape != param.shape:
                raise ValueError("accumulator shapes do not mirror the parameters")

    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate
    for param, grad, slot in zip(params, grads, state.slots):
        if state.kind == "adam":
            slot["m"] *= state.beta1
            slot["m"] += (1.0 - state.beta1) * grad
            slot["v"] *= state.beta2
            slot["v"] += (1.0 - state.beta2) * grad * grad
            m_hat = slot["m"] / (1.0 - state.beta1**t)
            v_hat = slot["v"] / (1.0 - state.beta2**t)
            param -= lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        elif state.kind == "adagrad":
            slot["g2"] += grad * grad
            param -= lr * grad / (np.sqrt(slot["g2"]) + state.epsilon)
        else:  # sgd
            slot["velocity"] *= state.momentum
            slot["velocity"] += grad
            param -= lr * slot["velocity"]
    return params, state


def _slot_keys(kind: str) -> tuple[str, ...]:
    return {"adam": ("m", "v"), "adagrad": ("g2",), "sgd": ("velocity",)}[kind]


@dataclass
class TrainSchedule:
    epochs: int
    batch_size: int
    patience: int = 5
    monitor: str = "val_loss"

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.monitor != "val_loss":
            raise ValueError("only validation loss can be monitored")


@dataclass
class TrainHistory:
    train_loss: list[float]
    val_loss: list[float]
    train_accuracy: list[float]
    val_accuracy: list[float]
    best_epoch: int
    stopped_epoch: int


def evaluate(layers: list[DenseLayer], x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Mean loss and accuracy (threshold 0.5, inclusive on the positive side)."""
    p = network_apply(layers, np.asarray(x, dtype=float)).ravel()
    y = np.asarray(y, dtype=float).ravel()
    loss = bce_loss(p, y)
    accuracy = float(np.mean((p >= 0.5).astype(float) == y))
    return loss, accuracy


def fit(
    layers: list[DenseLayer],
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    schedule: TrainSchedule,
    optimizer: OptimizerState,
    seed: int = 0,
) -> TrainHistory:
    """Mini-batch training with early stopping and best-validation checkpointing.

    Batches are drawn from a fresh seeded shuffle each epoch. After every epoch the
    validation loss is recorded; when it fails to improve for `patience` consecutive
    epochs, training halts. The layers are restored to the checkpointed weights of
    the best validation epoch before returning, never the last epoch's.
    """
    x_train = np.asarray(train[0], dtype=float)
    y_train = np.asarray(train[1], dtype=float).ravel()
    x_val = np.asarray(val[0], dtype=float)
    y_val = np.asarray(val[1], dtype=float).ravel()
    n = x_train.shape[0]
    if n == 0 or x_val.shape[0] == 0:
        raise ValueError("train and validation sets must be nonempty")
    if schedule.batch_size > n:
        raise ValueError(f"batch_size {schedule.batch_size} exceeds training size {n}")

    trainable = [layer for layer in layers if not layer.frozen]
    if not trainable:
        raise ValueError("network has no trainable parameters")
    params = [arr for layer in trainable for arr in (layer.weights, layer.bias)]
    names = []
    for i, layer in enumerate(layers):
        if not layer.frozen:
            names += [f"layers[{i}].weights", f"layers[{i}].bias"]

    rng = np.random.default_rng(seed)
    history = TrainHistory([], [], [], [], best_epoch=0, stopped_epoch=0)
    best_val = np.inf
    best_snapshot = [p.copy() for p in params]
    bad_epochs = 0

    for epoch in range(1, schedule.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, schedule.batch_size):
            batch = order[start : start + schedule.batch_size]
            out = network_forward(layers, x_train[batch])
            loss = bce_loss(out, y_train[batch])
            if not np.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}: non-finite loss")
            grads = backward(layers, y_train[batch])
            flat = [g for entry in grads if entry is not None for g in entry]
            optimizer_step(params, flat, optimizer, names)

        if any(not np.all(np.isfinite(p)) for p in params):
            raise TrainingError(f"training diverged at epoch {epoch}: non-finite weights")
        train_loss, train_acc = evaluate(layers, x_train, y_train)
        val_loss, val_acc = evaluate(layers, x_val, y_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError(f"training diverged at epoch {epoch}: non-finite loss")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.train_accuracy.append(train_acc)
        history.val_accuracy.append(val_acc)
        history.stopped_epoch = epoch

        if val_loss < best_val:
            best_val = val_loss
            best_snapshot = [p.copy() for p in params]
            history.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= schedule.patience:
                break

    for param, snap in zip(params, best_snapshot):
        param[...] = snap
    return history


def weights_bytes(layers: list[DenseLayer]) -> bytes:
    """Serialize layers in the binary weight format.

    Layout (all integers little-endian uint32): magic "BSTK", format version,
    layer count, then per layer rows, cols, frozen flag, activation code, followed
    by rows*cols float32 weights (row-major) and rows float32 biases.
    """
    chunks = [WEIGHTS_MAGIC, struct.pack("<II", WEIGHTS_VERSION, len(layers))]
    for layer in layers:
        rows, cols = layer.weights.shape
        chunks.append(
            struct.pack("<IIII", rows, cols, int(layer.frozen), _ACTIVATION_CODES[layer.activation])
        )
        chunks.append(np.ascontiguousarray(layer.weights, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_weights(path, layers: list[DenseLayer]) -> None:
    atomic_write_bytes(path, weights_bytes(layers))


def load_weights(path) -> list[DenseLayer]:
    """Load layers from the binary weight format, validating structure as it goes."""
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise FormatError(f"cannot read weight file {path}: {exc}") from exc
    return parse_weights(data, source=str(path))


def parse_weights(data: bytes, source: str = "<bytes>") -> list[DenseLayer]:
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{source}: bad magic bytes, not a weight file")
    if len(data) < 12:
        raise FormatError(f"{source}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{source}: unsupported format version {version}")
    offset = 12
    layers = []
    for index in range(count):
        if offset + 16 > len(data):
            raise FormatError(f"{source}: truncated header for layer {index}")
        rows, cols, frozen, act_code = struct.unpack_from("<IIII", data, offset)
        offset += 16
        if rows == 0 or cols == 0:
            raise FormatError(f"{source}: layer {index} has empty shape {rows}x{cols}")
        if act_code not in _ACTIVATION_NAMES:
            raise FormatError(f"{source}: layer {index} has unknown activation code {act_code}")
        need = (rows * cols + rows) * 4
        if offset + need > len(data):
            raise FormatError(
                f"{source}: layer {index} needs {need} payload bytes, "
                f"only {len(data) - offset} remain"
            )
        weights = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset)
        offset += rows * cols * 4
        bias = np.frombuffer(data, dtype="<f4", count=rows, offset=offset)
        offset += rows * 4
        layers.append(
            DenseLayer(
                weights.astype(float).reshape(rows, cols),
                bias.astype(float),
                _ACTIVATION_NAMES[act_code],
                bool(frozen),
            )
        )
    if offset != len(data):
        raise FormatError(f"{source}: {len(data) - offset} trailing bytes after last layer")
    return layers
