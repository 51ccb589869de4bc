"""Dense MLPs over flat parameter vectors, with hand-written backprop and Adam.

Parameters live in one flat float64 vector. Layer ``i`` occupies a weight block
of shape ``(fan_in, fan_out)`` in row-major order followed by its bias of length
``fan_out``; :func:`layout` returns the slices.

Checkpoint files (see :func:`save_params`) are laid out as::

    bytes 0..7     magic b"MOGANNN1"
    bytes 8..11    uint32 little-endian header length H
    bytes 12..12+H UTF-8 JSON header: {"spec": {...}, "num_params": P}
    remaining      P little-endian float64 values
"""

from __future__ import annotations

import functools
import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, NumericError

HIDDEN_ACTIVATIONS = ("leaky_relu", "relu", "tanh")
OUTPUT_ACTIVATIONS = ("sigmoid", "tanh", "identity")
CHECKPOINT_MAGIC = b"MOGANNN1"


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "leaky_relu"
    output_activation: str = "identity"
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0 < self.leaky_slope < 1:
            raise ValueError(f"LeakyReLU slope must lie in (0, 1), got {self.leaky_slope}")

    @property
    def num_params(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def d_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def d_out(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_sizes"] = list(self.layer_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(**{**d, "layer_sizes": tuple(d["layer_sizes"])})


class LayerSlice(NamedTuple):
    weight: slice
    bias: slice
    shape: tuple[int, int]


@functools.lru_cache(maxsize=None)
def layout(spec: MlpSpec) -> tuple[LayerSlice, ...]:
    out = []
    offset = 0
    for a, b in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = slice(offset, offset + a * b)
        offset += a * b
        out.append(LayerSlice(w, slice(offset, offset + b), (a, b)))
        offset += b
    return tuple(out)


def unpack(spec: MlpSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the weight and bias blocks; leading axes of ``params`` are kept."""
    params = np.asarray(params, dtype=float)
    if params.ndim < 1 or params.shape[-1] != spec.num_params:
        raise DimensionError(f"expected {spec.num_params} parameters, got shape {params.shape}")
    lead = params.shape[:-1]
    return [
        (params[..., s.weight].reshape(*lead, *s.shape), params[..., s.bias].reshape(*lead, 1, -1))
        for s in layout(spec)
    ]


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights and zero biases."""
    params = np.zeros(spec.num_params)
    for s in layout(spec):
        limit = np.sqrt(6.0 / (s.shape[0] + s.shape[1]))
        params[s.weight] = rng.uniform(-limit, limit, size=s.shape[0] * s.shape[1])
    return params


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _hidden(spec: MlpSpec, z: np.ndarray) -> np.ndarray:
    if spec.hidden_activation == "leaky_relu":
        return np.maximum(z, spec.leaky_slope * z)
    if spec.hidden_activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _hidden_grad(spec: MlpSpec, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if spec.hidden_activation == "leaky_relu":
        return (z > 0) * (1.0 - spec.leaky_slope) + spec.leaky_slope
    if spec.hidden_activation == "relu":
        return (z > 0).astype(float)
    return 1.0 - a * a


def _output(spec: MlpSpec, z: np.ndarray) -> np.ndarray:
    if spec.output_activation == "sigmoid":
        return _sigmoid(z)
    if spec.output_activation == "tanh":
        return np.tanh(z)
    return z


def _output_grad(spec: MlpSpec, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if spec.output_activation == "sigmoid":
        return y * (1.0 - y)
    if spec.output_activation == "tanh":
        return 1.0 - y * y
    return np.ones_like(z)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Cache:
    """Intermediate values of one forward pass, reusable for several backward passes."""

    spec: MlpSpec
    layers: list[tuple[np.ndarray, np.ndarray]]
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each layer
    output: np.ndarray | None = None

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


def _check_batch(spec: MlpSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-1] != spec.d_in:
        raise DimensionError(f"batch must have shape (B, {spec.d_in}), got {x.shape}")
    return x


def forward_cache(spec: MlpSpec, params: np.ndarray, x) -> Cache:
    """Forward pass keeping intermediates.

    ``params`` of shape ``(..., P)`` evaluates a stack of networks sharing one
    spec; ``x`` of shape ``(..., B, d_in)`` broadcasts against that stack.
    """
    x = _check_batch(spec, x)
    cache = Cache(spec, unpack(spec, params))
    a = x
    last = len(cache.layers) - 1
    for i, (w, b) in enumerate(cache.layers):
        cache.inputs.append(a)
        z = a @ w + b
        cache.pre.append(z)
        a = _hidden(spec, z) if i < last else _output(spec, z)
    cache.output = a
    return cache


def forward(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    return forward_cache(spec, params, x).output


def logits(spec: MlpSpec, params: np.ndarray, x) -> np.ndarray:
    """Pre-activation of the output layer."""
    return forward_cache(spec, params, x).logits


def backprop(cache: Cache, upstream, wrt_logits: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vector-Jacobian product through a cached forward pass.

    ``upstream`` is dLoss/d(output), or dLoss/d(logits) when ``wrt_logits``.
    It may carry leading axes, shape ``(..., B, d_out)``; each leading index is
    an independent scalar loss sharing the same forward pass.

    Returns:
        ``(grad_params, grad_input)`` of shapes ``(..., P)`` and ``(..., B, d_in)``.
    """
    spec = cache.spec
    delta = np.asarray(upstream, dtype=float)
    out_shape = cache.output.shape
    try:
        ok = delta.ndim >= 2 and np.broadcast_shapes(delta.shape, out_shape) == delta.shape
    except ValueError:
        ok = False
    if not ok:
        raise DimensionError(f"upstream gradient shape {delta.shape} does not match output {out_shape}")
    if not wrt_logits:
        delta = delta * _output_grad(spec, cache.pre[-1], cache.output)
    lead = delta.shape[:-2]
    blocks: list[np.ndarray] = []
    for i in range(len(cache.layers) - 1, -1, -1):
        w, _ = cache.layers[i]
        a_in = cache.inputs[i]
        dw = np.swapaxes(a_in, -1, -2) @ delta
        db = delta.sum(axis=-2)
        blocks.append(db.reshape(*lead, -1))
        blocks.append(dw.reshape(*lead, -1))
        delta = delta @ np.swapaxes(w, -1, -2)
        if i > 0:
            delta = delta * _hidden_grad(spec, cache.pre[i - 1], a_in)
    blocks.reverse()
    return np.concatenate(blocks, axis=-1), delta


def backward(spec: MlpSpec, params: np.ndarray, x, upstream, wrt_logits: bool = False) -> np.ndarray:
    """Gradient w.r.t. the parameters of the scalar loss whose output gradient is ``upstream``."""
    grad, _ = backprop(forward_cache(spec, params, x), upstream, wrt_logits=wrt_logits)
    return grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, num_params: int, **hyper) -> "AdamState":
        return cls(np.zeros(num_params), np.zeros(num_params), **hyper)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; inputs are left untouched."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape or np.shape(params) != state.m.shape:
        raise DimensionError(
            f"Adam state has {state.m.size} entries, got params {np.shape(params)} and grad {grad.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to Adam")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    return new_state, new_params


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(path, spec: MlpSpec, params: np.ndarray) -> None:
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.num_params,):
        raise DimensionError(f"expected {spec.num_params} parameters, got shape {params.shape}")
    header = json.dumps({"spec": spec.to_dict(), "num_params": spec.num_params}, sort_keys=True)
    header_bytes = header.encode("utf-8")
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<I", len(header_bytes))
        + header_bytes
        + params.astype("<f8").tobytes()
    )
    _atomic_write(path, payload)


def load_params(path) -> tuple[MlpSpec, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter checkpoint")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    spec = MlpSpec.from_dict(header["spec"])
    n = header["num_params"]
    if n != spec.num_params:
        raise ValueError(f"{path}: header declares {n} parameters, spec implies {spec.num_params}")
    body = data[12 + hlen :]
    if len(body) != 8 * n:
        raise ValueError(f"{path}: expected {8 * n} payload bytes, found {len(body)}")
    return spec, np.frombuffer(body, dtype="<f8").astype(float)
