"""Fully connected Q-network on a flat float64 parameter vector.

Parameters are stored layer by layer, each layer as its weight matrix
(shape ``(fan_in, fan_out)``, row-major) followed by its bias. That flat
order is what gets averaged across clients and written to checkpoints.
"""
from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass

import numpy as np

MAGIC = b"FCQN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (200, 100, 50)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min(self.dims) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {self.dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_dims) + 1

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        d = self.dims
        return list(zip(d[:-1], d[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


class ParameterSet:
    """Flat parameter vector plus per-layer (W, b) views into it."""

    def __init__(self, spec: NetworkSpec, values: np.ndarray | None = None):
        self.spec = spec
        if values is None:
            values = np.zeros(spec.n_params)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters for {spec.dims}, got shape {values.shape}")
        self.values = values
        self.layers: list[tuple[np.ndarray, np.ndarray]] = []
        off = 0
        for i, o in spec.layer_shapes:
            W = values[off:off + i * o].reshape(i, o)
            off += i * o
            b = values[off:off + o]
            off += o
            self.layers.append((W, b))

    @classmethod
    def init(cls, spec: NetworkSpec, rng: np.random.Generator) -> "ParameterSet":
        """He-uniform weights, zero biases."""
        p = cls(spec)
        for W, _ in p.layers:
            limit = np.sqrt(6.0 / W.shape[0])
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        return p

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, self.values.copy())

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(self.spec)

    def digest(self) -> str:
        return hashlib.sha256(self.values.astype("<f8").tobytes()).hexdigest()[:16]

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParameterSet)
            and self.spec == other.spec
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return f"ParameterSet(dims={self.spec.dims}, digest={self.digest()})"


# ---------------------------------------------------------------------------
# forward / backward

def _check_input(params: ParameterSet, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.spec.input_dim:
        raise ValueError(f"state has length {X.shape[-1]}, network expects {params.spec.input_dim}")
    return X


def forward(params: ParameterSet, state) -> np.ndarray:
    """Q-values for one state (1-D) or a batch of states (2-D)."""
    X = _check_input(params, state)
    h = X
    last = len(params.layers) - 1
    for k, (W, b) in enumerate(params.layers):
        h = h @ W + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def loss_and_grad(params: ParameterSet, states, actions, targets) -> tuple[float, np.ndarray]:
    """Mean squared TD error over a batch and its gradient (flat, same order as params)."""
    X = np.atleast_2d(_check_input(params, states))
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    B = X.shape[0]

    acts = [X]
    h = X
    last = len(params.layers) - 1
    for k, (W, b) in enumerate(params.layers):
        h = h @ W
        h += b
        if k < last:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    rows = np.arange(B)
    err = targets - acts[-1][rows, actions]
    loss = float(err @ err) / B

    # gradients are written straight into views of the flat vector
    grad = np.empty_like(params.values)
    delta = np.zeros_like(acts[-1])
    delta[rows, actions] = (-2.0 / B) * err
    off = params.values.size
    for k in range(last, -1, -1):
        W, b = params.layers[k]
        off -= b.size
        np.sum(delta, axis=0, out=grad[off:off + b.size])
        off -= W.size
        np.matmul(acts[k].T, delta, out=grad[off:off + W.size].reshape(W.shape))
        if k > 0:
            delta = delta @ W.T
            delta[acts[k] <= 0] = 0.0
    return loss, grad


def gradient(params: ParameterSet, state, action: int, target: float) -> ParameterSet:
    """d/dθ of (target - Q(state, action; θ))²."""
    _, g = loss_and_grad(params, np.asarray(state)[None], [action], [target])
    return ParameterSet(params.spec, g)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParameterSet, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(params.values), np.zeros_like(params.values), 0, learning_rate, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.learning_rate, self.beta1, self.beta2, self.eps)


def adam_update(params: ParameterSet, grads, adam: AdamState, inplace: bool = False):
    """One bias-corrected Adam step. Returns (params, adam)."""
    g = grads.values if isinstance(grads, ParameterSet) else np.asarray(grads, dtype=np.float64)
    if g.shape != params.values.shape or adam.m.shape != g.shape:
        raise ValueError("gradient / moment shapes do not match parameters")
    if not inplace:
        params, adam = params.copy(), adam.copy()
    adam.step += 1
    b1, b2 = adam.beta1, adam.beta2
    adam.m *= b1
    adam.m += (1 - b1) * g
    adam.v *= b2
    adam.v += (1 - b2) * np.square(g)
    # lr * m_hat / (sqrt(v_hat) + eps), with the bias corrections folded in
    denom = np.sqrt(adam.v)
    denom /= np.sqrt(1 - b2 ** adam.step)
    denom += adam.eps
    step = np.divide(adam.m, denom, out=denom)
    step *= adam.learning_rate / (1 - b1 ** adam.step)
    params.values -= step
    return params, adam


# ---------------------------------------------------------------------------
# checkpoints
#
#   "FCQN" | u16 version | u16 n_dims | n_dims x u32 dims | u64 n_params
#   | n_params x f64 (little-endian, canonical order) | u32 crc32 of all prior bytes

def serialize(params: ParameterSet) -> bytes:
    dims = params.spec.dims
    body = bytearray(_HEADER.pack(MAGIC, FORMAT_VERSION, len(dims)))
    body += struct.pack(f"<{len(dims)}I", *dims)
    body += struct.pack("<Q", params.values.size)
    body += params.values.astype("<f8").tobytes()
    body += struct.pack("<I", zlib.crc32(body))
    return bytes(body)


def deserialize(blob: bytes, expected_spec: NetworkSpec | None = None) -> ParameterSet:
    if len(blob) < _HEADER.size + 4:
        raise CheckpointError("checkpoint is truncated (header incomplete)")
    magic, version, n_dims = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"not a Q-network checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}, expected {FORMAT_VERSION}")
    off = _HEADER.size
    need = off + 4 * n_dims + 8
    if len(blob) < need:
        raise CheckpointError("checkpoint is truncated (layer dims incomplete)")
    dims = struct.unpack_from(f"<{n_dims}I", blob, off)
    off += 4 * n_dims
    (n_params,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) != off + 8 * n_params + 4:
        raise CheckpointError(f"checkpoint is truncated or padded: {len(blob)} bytes, expected {off + 8 * n_params + 4}")
    (crc,) = struct.unpack_from("<I", blob, off + 8 * n_params)
    if zlib.crc32(blob[:off + 8 * n_params]) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    spec = NetworkSpec(input_dim=dims[0], output_dim=dims[-1], hidden_dims=tuple(dims[1:-1]))
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(f"checkpoint network {spec.dims} does not match expected {expected_spec.dims}")
    if spec.n_params != n_params:
        raise CheckpointError("parameter count inconsistent with layer dims")
    values = np.frombuffer(blob, dtype="<f8", count=n_params, offset=off).astype(np.float64)
    return ParameterSet(spec, values)


def save_checkpoint(path, params: ParameterSet) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load_checkpoint(path, expected_spec: NetworkSpec | None = None) -> ParameterSet:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), expected_spec)
