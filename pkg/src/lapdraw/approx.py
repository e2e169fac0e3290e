"""Small fully connected networks with hand-written backprop and Adam.

All arithmetic is float64. Hidden layers use ReLU (subgradient 0 at 0),
the output layer is affine.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

MAGIC = b"LAPMLP"
VERSION = 1


class NumericalFailure(FloatingPointError):
    pass


class MlpParams:
    """Layer weights ``(fan_in, fan_out)`` and biases, stored as views of one flat buffer."""

    def __init__(self, weights, biases):
        shapes = []
        for w, b in zip(weights, biases):
            shapes += [np.shape(w), np.shape(b)]
        self._bind(np.empty(sum(int(np.prod(sh)) for sh in shapes)), shapes)
        for view, a in zip(self.arrays, [x for pair in zip(weights, biases) for x in pair]):
            view[...] = a

    def _bind(self, buf: np.ndarray, shapes) -> None:
        self._buf, self._shapes = buf, shapes
        views, i = [], 0
        for sh in shapes:
            n = int(np.prod(sh))
            views.append(buf[i:i + n].reshape(sh))
            i += n
        self.weights = views[0::2]
        self.biases = views[1::2]

    @classmethod
    def zeros_like(cls, other: "MlpParams") -> "MlpParams":
        out = cls.__new__(cls)
        out._bind(np.zeros_like(other._buf), other._shapes)
        return out

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return self._buf.size

    def copy(self) -> "MlpParams":
        out = MlpParams.__new__(MlpParams)
        out._bind(self._buf.copy(), self._shapes)
        return out

    def flat(self) -> np.ndarray:
        """The live flat parameter vector (writes go through to the layers)."""
        return self._buf

    def set_flat(self, vec: np.ndarray) -> None:
        self._buf[...] = vec


def init(sizes, seed) -> MlpParams:
    """Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def forward(params: MlpParams, X: np.ndarray, keep: bool = False):
    """Batch forward pass. With ``keep=True`` also returns the layer inputs for backward."""
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input of shape {X.shape} does not fit {params.sizes}")
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return (h, acts) if keep else h


def backward(params: MlpParams, acts: list[np.ndarray], upstream: np.ndarray) -> MlpParams:
    """Parameter gradients of a scalar whose gradient w.r.t. the output is ``upstream``."""
    g = np.asarray(upstream, float)
    if g.shape != (acts[0].shape[0], params.weights[-1].shape[1]):
        raise ValueError(f"upstream of shape {g.shape} does not match the forward pass")
    grads = MlpParams.__new__(MlpParams)
    grads._bind(np.empty_like(params.flat()), params._shapes)
    for i in range(len(params.weights) - 1, -1, -1):
        a = acts[i]
        np.matmul(a.T, g, out=grads.weights[i])
        np.sum(g, axis=0, out=grads.biases[i])
        if i > 0:
            g = g @ params.weights[i].T
            g *= a > 0
    return grads


def input_gradient(params: MlpParams, acts: list[np.ndarray], upstream: np.ndarray) -> np.ndarray:
    g = np.asarray(upstream, float)
    for i in range(len(params.weights) - 1, -1, -1):
        g = g @ params.weights[i].T
        if i > 0:
            g = g * (acts[i] > 0)
    return g


@dataclass
class AdamState:
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-3, **kw) -> "AdamState":
        n = params.n_params()
        return cls(lr=lr, m=np.zeros(n), v=np.zeros(n), **kw)


@numba.njit(cache=True, fastmath=True)
def _adam_kernel(p, g, m, v, lr, b1, b2, eps, c1, c2):
    # lr * (m / c1) / (sqrt(v / c2) + eps), rearranged to one division
    a = lr / c1
    r = 1.0 / np.sqrt(c2)
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= a * mi / (np.sqrt(vi) * r + eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    g = grads.flat()
    if not np.isfinite(g.sum()):
        raise NumericalFailure("non-finite gradient")
    p = params.flat()
    if state.m is None:
        state.m, state.v = np.zeros_like(p), np.zeros_like(p)
    state.step += 1
    c1 = 1.0 - state.b1 ** state.step
    c2 = 1.0 - state.b2 ** state.step
    _adam_kernel(p, g, state.m, state.v, state.lr, state.b1, state.b2, state.eps, c1, c2)


def save(params: MlpParams, path) -> None:
    """Binary checkpoint: magic, version, layer sizes, then little-endian float64 arrays."""
    sizes = params.sizes
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for a in params.arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path) -> MlpParams:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    off = len(MAGIC)
    version, n = struct.unpack_from("<HI", data, off)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<HI")
    sizes = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        for shape, out in (((fan_in, fan_out), weights), ((fan_out,), biases)):
            count = int(np.prod(shape))
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float).reshape(shape)
            out.append(arr)
            off += 8 * count
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return MlpParams(weights, biases)
