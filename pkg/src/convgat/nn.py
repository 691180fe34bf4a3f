"""Dense float64 kernels, parameter storage, gradient checking and checkpoints.

Matrices are plain ``numpy.ndarray`` objects of dtype float64; every
backward pass in the package is written by hand on top of these helpers.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ArgumentError, FormatError, NumericError, ShapeError

LEAKY_SLOPE = 0.2


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope: float = LEAKY_SLOPE):
    return np.where(x >= 0, 1.0, slope)


def _as_float(x):
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(np.float64)


def elu(x):
    x = _as_float(x)
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    x = _as_float(x)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def sigmoid(x):
    # split by sign so exp never overflows; keeps extended-precision inputs
    x = _as_float(x)
    pos = 1.0 / (1.0 + np.exp(-np.abs(x)))
    out = np.where(x >= 0, pos, 1.0 - pos)
    return out[()]


def bce_with_logits(logit, label: int):
    """Binary cross-entropy written in terms of the logit (no clamping needed)."""
    z = logit if label == 1 else -logit
    return np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def masked_softmax(scores, active) -> np.ndarray:
    """Softmax of ``scores`` restricted to the ``active`` indices; zero elsewhere."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.array(sorted(set(active)), dtype=np.intp)
    if idx.size == 0:
        raise ArgumentError("masked_softmax needs at least one active index")
    out = np.zeros_like(scores)
    sub = scores[idx] - scores[idx].max()
    ex = np.exp(sub)
    out[idx] = ex / ex.sum()
    return out


def masked_softmax_rows(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise masked softmax over the last axis; every row needs one active entry."""
    masked = np.where(mask, scores, -np.inf)
    ex = np.exp(masked - masked.max(axis=-1, keepdims=True))
    return ex / ex.sum(axis=-1, keepdims=True)


def dropout(x: np.ndarray, p: float, training: bool, rng: Optional[np.random.Generator]):
    """Inverted dropout. Returns ``(output, mask)`` where mask already carries the 1/(1-p) scale."""
    if not 0.0 <= p < 1.0:
        raise ArgumentError(f"dropout rate must be in [0, 1), got {p}")
    if not training:
        return x, None
    if p == 0.0:
        return x, np.ones(np.shape(x))
    mask = (rng.random(np.shape(x)) >= p) / (1.0 - p)
    return x * mask, mask


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Named float64 tensors with gradients and AdamW moment buffers."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = rng_seed
        self.params = {}
        self.grads = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ArgumentError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ParamStore":
        other = ParamStore(self.rng_seed)
        for name in self.params:
            other.params[name] = self.params[name].copy()
            other.grads[name] = self.grads[name].copy()
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
        other.step = self.step
        return other

    def cast(self, dtype) -> "ParamStore":
        """Parameter-only copy in another float type (used by the gradient oracle)."""
        other = ParamStore(self.rng_seed)
        for name, value in self.params.items():
            other.params[name] = value.astype(dtype)
            other.grads[name] = np.zeros_like(other.params[name])
        return other

    def state_dict(self) -> dict:
        return {name: p.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, value in state.items():
            if name not in self.params:
                self.add(name, value)
            elif self.params[name].shape != value.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != {self.params[name].shape}")
            else:
                self.params[name][...] = value


def grad_check(
    f: Callable,
    params: ParamStore,
    eps: float = 1e-6,
    names: Optional[Iterable[str]] = None,
    oracle_dtype=np.longdouble,
) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    ``f(params, backward)`` must return the scalar loss and, when ``backward``
    is true, accumulate the analytic gradient into ``params.grads``. The
    analytic pass always runs on ``params`` as given (float64). The
    difference quotients are evaluated on a copy cast to ``oracle_dtype``:
    in float64 the loss carries ~1e-16 absolute rounding noise, which at
    ``eps=1e-6`` swamps any gradient coordinate smaller than about 1e-5.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    params.zero_grad()
    base = f(params, True)
    if not math.isfinite(base):
        raise NumericError("gradient check target is not finite")
    probe = params.cast(oracle_dtype)
    step = np.asarray(eps, dtype=oracle_dtype)
    worst = 0.0
    for name in names if names is not None else params.names():
        analytic = params.grads[name].reshape(-1)
        flat = probe[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            plus = f(probe, False)
            flat[i] = saved - step
            minus = f(probe, False)
            flat[i] = saved
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = float((plus - minus) / (2 * step))
            a = float(analytic[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


_MAGIC = b"CGATCKPT"
_VERSION = 1


def save_checkpoint(path, tensors: dict, meta: Optional[dict] = None) -> None:
    """Binary layout (all little-endian)::

        magic[8] version:u32 meta_len:u32 meta_json count:u32
        repeat count: name_len:u16 name ndim:u8 dims:u32*ndim data:f64*prod(dims)
    """
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            raw_name = name.encode("utf-8")
            value = np.asarray(value, dtype="<f8")
            fh.write(struct.pack("<HB", len(raw_name), value.ndim))
            fh.write(raw_name)
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())


def load_checkpoint(path) -> tuple:
    """Return ``(tensors, meta)`` in the order they were written."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    try:
        version, meta_len = struct.unpack_from("<II", blob, 8)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        pos = 16
        meta = json.loads(blob[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            name_len, ndim = struct.unpack_from("<HB", blob, pos)
            pos += 3
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except FormatError:
        raise
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes after the last tensor")
    return tensors, meta
