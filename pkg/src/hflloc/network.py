"""Dense ReLU regressor with MAE loss, exact backprop and Adam, in numpy.

All parameters of a model live in one contiguous float64 buffer; the
per-layer weights and biases are views into it. This keeps Adam updates and
federated averaging down to a handful of vector operations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "NumericalError",
    "REFERENCE_DIMS",
    "REFERENCE_DROPOUT",
    "LITERAL_ADAM_BETAS",
    "LayerParams",
    "ModelParams",
    "AdamState",
    "TrainConfig",
    "ForwardCache",
    "RngStreams",
    "EpochRecord",
    "make_streams",
    "init_params",
    "forward",
    "mae_loss",
    "backward",
    "adam_step",
    "train_epochs",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
]

REFERENCE_DIMS = ((256, 248), (64, 256), (2, 64))
REFERENCE_DROPOUT = (0.25, 0.1)
# Decay rates as literally listed for the reference setup (0.1, 0.99); the
# defaults below use the conventional pair instead.
LITERAL_ADAM_BETAS = (0.1, 0.99)
ADAM_EPS = 1e-8

# Sub-stream ids for np.random.SeedSequence spawn keys.
_STREAM_INIT, _STREAM_SHUFFLE, _STREAM_DROPOUT = 0, 1, 2


class NumericalError(FloatingPointError):
    """NaN/Inf encountered in gradients or parameters."""


@dataclass
class LayerParams:
    weights: np.ndarray  # out x in
    biases: np.ndarray  # out


def _check_dims(dims) -> tuple[tuple[int, int], ...]:
    dims = tuple((int(o), int(i)) for o, i in dims)
    if not dims:
        raise ValueError("at least one layer is required")
    for (o, i) in dims:
        if o < 1 or i < 1:
            raise ValueError(f"layer dimensions must be positive, got {(o, i)}")
    for (o_prev, _), (_, i_next) in zip(dims, dims[1:]):
        if o_prev != i_next:
            raise ValueError(f"layer dims do not chain: {o_prev} outputs feed {i_next} inputs")
    return dims


class ModelParams:
    """Weights and biases of a ReLU MLP with a linear output layer."""

    def __init__(self, dims=REFERENCE_DIMS, flat=None, dropout=None):
        self.dims = _check_dims(dims)
        size = sum(o * i + o for o, i in self.dims)
        if flat is None:
            flat = np.zeros(size, dtype=np.float64)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({size},)")
        self.flat = flat
        if dropout is None:
            dropout = REFERENCE_DROPOUT if self.dims == REFERENCE_DIMS else (0.0,) * (len(self.dims) - 1)
        dropout = tuple(float(r) for r in dropout)
        if len(dropout) != len(self.dims) - 1:
            raise ValueError("one dropout rate per hidden layer is required")
        if any(not 0.0 <= r < 1.0 for r in dropout):
            raise ValueError(f"dropout rates must lie in [0, 1), got {dropout}")
        self.dropout = dropout
        self.layers = []
        pos = 0
        for o, i in self.dims:
            w = flat[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = flat[pos:pos + o]
            pos += o
            self.layers.append(LayerParams(w, b))

    @property
    def n_inputs(self) -> int:
        return self.dims[0][1]

    @property
    def n_outputs(self) -> int:
        return self.dims[-1][0]

    @property
    def size(self) -> int:
        return self.flat.size

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, self.flat.copy(), self.dropout)

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.dims, np.zeros_like(self.flat), self.dropout)

    def same_shape(self, other: "ModelParams") -> bool:
        return self.dims == other.dims

    def tobytes(self) -> bytes:
        return self.flat.tobytes()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.flat).all())

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.dims == other.dims and self.dropout == other.dropout and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"ModelParams(dims={self.dims}, dropout={self.dropout})"


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    timestep: int = 0
    _scratch: tuple | None = field(default=None, repr=False, compare=False)

    @classmethod
    def fresh(cls, params: ModelParams) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.first_moment.copy(), self.second_moment.copy(), self.timestep)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    dropout_enabled: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class RngStreams:
    shuffle: np.random.Generator
    dropout: np.random.Generator


def _generator(seed: int, stream: int, client: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, client)))


def make_streams(seed: int, client: int = 0) -> RngStreams:
    """Independent shuffle/dropout generators for one trainer.

    ``client`` selects the trainer; centralized training uses client 0, so a
    one-client federation draws exactly the same numbers.
    """
    return RngStreams(_generator(seed, _STREAM_SHUFFLE, client), _generator(seed, _STREAM_DROPOUT, client))


def init_params(seed: int, dims=REFERENCE_DIMS, dropout=None) -> ModelParams:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    params = ModelParams(dims, dropout=dropout)
    rng = _generator(seed, _STREAM_INIT)
    for layer, (o, i) in zip(params.layers, params.dims):
        layer.weights[...] = rng.standard_normal((o, i)) * np.sqrt(2.0 / i)
    return params


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)  # input to each layer (post-dropout)
    preacts: list = field(default_factory=list)
    masks: list = field(default_factory=list)  # scaled keep-masks, None when no dropout


def forward(params: ModelParams, batch, mode: str = "inference", rng: np.random.Generator | None = None):
    """Run the network.

    ``mode="train"`` applies inverted dropout (scaling kept units by
    1/(1-rate)) and returns ``(pred, cache)``; ``mode="inference"`` returns
    predictions only and never touches dropout.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.n_inputs:
        raise ValueError(f"batch has shape {x.shape}, network expects (M, {params.n_inputs})")
    if mode not in ("train", "inference"):
        raise ValueError(f"unknown mode {mode!r}")
    train = mode == "train"
    cache = ForwardCache() if train else None
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        z = x @ layer.weights.T
        z += layer.biases
        if train:
            cache.inputs.append(x)
            cache.preacts.append(z)
        if k == last:
            x = z
            break
        x = np.maximum(z, 0.0)
        rate = params.dropout[k]
        if train:
            mask = None
            if rate > 0.0 and rng is not None:
                mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
                x = x * mask
            cache.masks.append(mask)
    return (x, cache) if train else x


def mae_loss(pred, target) -> float:
    """Mean absolute error over every coordinate of every row."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def backward(params: ModelParams, cache: ForwardCache | None, target, pred=None, out: ModelParams | None = None) -> ModelParams:
    """Gradient of ``mae_loss`` w.r.t. all parameters.

    Uses subgradient 0 at the |.| kink and at ReLU's kink.
    """
    if cache is None or not cache.preacts:
        raise ValueError("backward needs the cache of a train-mode forward pass")
    target = np.asarray(target, dtype=np.float64)
    if pred is None:
        pred = cache.preacts[-1]
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    grads = params.zeros_like() if out is None else out
    delta = np.sign(pred - target) / pred.size
    for k in range(len(params.layers) - 1, -1, -1):
        g = grads.layers[k]
        np.matmul(delta.T, cache.inputs[k], out=g.weights)
        delta.sum(axis=0, out=g.biases)
        if k == 0:
            break
        delta = delta @ params.layers[k].weights
        mask = cache.masks[k - 1]
        if mask is not None:
            delta *= mask
        delta *= cache.preacts[k - 1] > 0.0
    return grads


def _adam_update(flat: np.ndarray, grad: np.ndarray, state: AdamState, cfg: TrainConfig) -> None:
    # In place on flat and state; scratch buffers avoid per-step allocation.
    if not np.isfinite(grad.sum()):
        raise NumericalError(f"non-finite gradient at Adam step {state.timestep + 1}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.timestep += 1
    t = state.timestep
    m, v = state.first_moment, state.second_moment
    if state._scratch is None or state._scratch[0].shape != m.shape:
        state._scratch = (np.empty_like(m), np.empty_like(m))
    buf, step = state._scratch
    np.multiply(m, b1, out=m)
    np.multiply(grad, 1.0 - b1, out=buf)
    np.add(m, buf, out=m)
    np.multiply(v, b2, out=v)
    np.multiply(grad, grad, out=buf)
    np.multiply(buf, 1.0 - b2, out=buf)
    np.add(v, buf, out=v)
    # denominator sqrt(v_hat) + eps, numerator m_hat
    np.divide(v, 1.0 - b2 ** t, out=buf)
    np.sqrt(buf, out=buf)
    np.add(buf, ADAM_EPS, out=buf)
    np.divide(m, 1.0 - b1 ** t, out=step)
    np.divide(step, buf, out=step)
    np.multiply(step, cfg.learning_rate, out=step)
    np.subtract(flat, step, out=flat)


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update; returns new ``(params, state)``."""
    if not params.same_shape(grads) or state.first_moment.shape != params.flat.shape:
        raise ValueError("parameter, gradient and optimizer-state shapes differ")
    new_params = params.copy()
    new_state = state.copy()
    _adam_update(new_params.flat, grads.flat, new_state, cfg)
    return new_params, new_state


@dataclass
class EpochRecord:
    epoch: int
    train_mae: float
    val_mde: float | None = None


def train_epochs(
    shard,
    params: ModelParams,
    cfg: TrainConfig,
    streams: RngStreams | None = None,
    epochs: int | None = None,
    on_epoch: Callable[[int, ModelParams], float | None] | None = None,
):
    """Minibatch Adam on ``shard`` (anything with ``features``/``targets``).

    Starts from a fresh optimizer state, shuffles every epoch, keeps the
    short final batch. Returns ``(params, curve)`` where ``curve`` holds the
    mean training MAE per epoch; ``on_epoch(epoch, params)`` may return a
    validation error to store alongside it.
    """
    X = np.asarray(shard.features, dtype=np.float64)
    Y = np.asarray(shard.targets, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty shard")
    epochs = cfg.epochs if epochs is None else epochs
    if streams is None:
        streams = make_streams(cfg.seed)
    params = params.copy()
    state = AdamState.fresh(params)
    dropout_rng = streams.dropout if cfg.dropout_enabled else None
    bs = cfg.batch_size
    grads = params.zeros_like()
    curve = []
    for epoch in range(epochs):
        order = streams.shuffle.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb, yb = X[idx], Y[idx]
            pred, cache = forward(params, xb, "train", dropout_rng)
            total += float(np.abs(pred - yb).sum())
            grads = backward(params, cache, yb, pred, out=grads)
            _adam_update(params.flat, grads.flat, state, cfg)
        if not params.is_finite():
            raise NumericalError(f"non-finite parameter after epoch {epoch + 1}")
        val = on_epoch(epoch + 1, params) if on_epoch is not None else None
        curve.append(EpochRecord(epoch + 1, total / Y.size, val))
    return params, curve


def predict(params: ModelParams, features) -> np.ndarray:
    """Inference-mode forward pass (centered coordinate frame)."""
    return forward(params, features, "inference")


# ---------------------------------------------------------------------------
# Checkpoint format: b"HFLW", u16 version, u16 layer count, then per layer
# u32 out, u32 in, row-major weights, biases. Little-endian, float64.

_MAGIC = b"HFLW"
_VERSION = 1


def checkpoint_bytes(params: ModelParams) -> bytes:
    parts = [_MAGIC, struct.pack("<HH", _VERSION, len(params.layers))]
    for layer, (o, i) in zip(params.layers, params.dims):
        parts.append(struct.pack("<II", o, i))
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.biases, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(params: ModelParams, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(params))
    return path


def parse_checkpoint(buf: bytes, dropout: Sequence[float] | None = None) -> ModelParams:
    if buf[:4] != _MAGIC:
        raise ValueError("not an HFLW checkpoint (bad magic)")
    version, n_layers = struct.unpack_from("<HH", buf, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 8
    dims, chunks = [], []
    for _ in range(n_layers):
        o, i = struct.unpack_from("<II", buf, pos)
        pos += 8
        count = o * i + o
        end = pos + 8 * count
        if end > len(buf):
            raise ValueError("truncated checkpoint")
        chunks.append(np.frombuffer(buf, dtype="<f8", count=count, offset=pos))
        pos = end
        dims.append((o, i))
    if pos != len(buf):
        raise ValueError("trailing bytes after last layer")
    flat = np.concatenate(chunks).astype(np.float64)
    return ModelParams(dims, flat, dropout)


def load_checkpoint(path, dropout: Sequence[float] | None = None) -> ModelParams:
    return parse_checkpoint(Path(path).read_bytes(), dropout)
