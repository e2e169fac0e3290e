"""Stochastic minimization of the penalized graph drawing objective.

Per step the loss is the attractive term over positive pairs ``(u, v)``
plus ``beta`` times the orthonormality penalty over independent pairs
``(u, w)``. The penalty uses the closed form

    sum_jk (u_j u_k - c d_jk)(w_j w_k - c d_jk) = (u.w)^2 - c|u|^2 - c|w|^2 + c^2 d

where ``c`` is the diagonal target (1 for the plain objective).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import approx
from .gridworld import GridSpec, ReprKind, encode_batch, feature_dim
from .replay import ReplayBuffer, sample_pairs, sample_states
from .seeding import substream

LOG_INTERVAL = 1000


@dataclass
class LapRepConfig:
    d: int = 20
    beta: float | None = None
    delta_scale: float = 1.0
    lam: float = 0.0
    batch: int = 32
    steps: int = 100_000
    lr: float = 1e-3
    seed: int = 0
    hidden: tuple | None = None
    reuse_negative_u: bool = False

    def __post_init__(self):
        if self.beta is None:
            self.beta = self.d / 20.0
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not 0.0 < self.delta_scale <= 1.0:
            raise ValueError("delta_scale must lie in (0, 1]")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError("lambda must lie in [0, 1)")

    def layer_sizes(self, spec: GridSpec, kind) -> list[int]:
        hidden = self.hidden
        if hidden is None:
            hidden = () if ReprKind(kind) is ReprKind.INDEX else (200, 200)
        return [feature_dim(spec, kind), *hidden, self.d]

    def as_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = None if self.hidden is None else list(self.hidden)
        return out


@dataclass
class TrainLog:
    step: list = field(default_factory=list)
    attractive: list = field(default_factory=list)
    repulsive: list = field(default_factory=list)
    total: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def append(self, step, att, rep, tot, wall):
        if self.step and step <= self.step[-1]:
            raise ValueError("log steps must increase")
        self.step.append(int(step))
        self.attractive.append(float(att))
        self.repulsive.append(float(rep))
        self.total.append(float(tot))
        self.wall_time.append(float(wall))

    def __len__(self):
        return len(self.step)

    def rows(self):
        """Loss records without wall time (kept out so reruns are byte-identical)."""
        return list(zip(self.step, self.attractive, self.repulsive, self.total))


def attractive_term(Pu: np.ndarray, Pv: np.ndarray) -> float:
    Pu, Pv = np.atleast_2d(Pu), np.atleast_2d(Pv)
    if Pu.shape != Pv.shape:
        raise ValueError("embedding batches differ in shape")
    return float(0.5 * np.mean(np.sum((Pu - Pv) ** 2, axis=1)))


def repulsive_term(Pu: np.ndarray, Pw: np.ndarray, c: float = 1.0, d: int | None = None) -> float:
    Pu, Pw = np.atleast_2d(Pu), np.atleast_2d(Pw)
    if Pu.shape != Pw.shape:
        raise ValueError("embedding batches differ in shape")
    d = Pu.shape[1] if d is None else d
    dot = np.sum(Pu * Pw, axis=1)
    val = dot ** 2 - c * np.sum(Pu ** 2, axis=1) - c * np.sum(Pw ** 2, axis=1) + c * c * d
    return float(np.mean(val))


def embedding_gradients(Pu, Pv, Qu, Qw, beta: float, c: float):
    """Loss terms and d(loss)/d(embedding) for each of the four batches."""
    B, d = Pu.shape
    diff = Pu - Pv
    att = 0.5 * np.mean(np.sum(diff ** 2, axis=1))
    dot = np.sum(Qu * Qw, axis=1)
    rep = np.mean(dot ** 2 - c * np.sum(Qu ** 2, axis=1) - c * np.sum(Qw ** 2, axis=1)) + c * c * d
    gPu = diff / B
    gQu = beta * (2.0 * dot[:, None] * Qw - 2.0 * c * Qu) / Qu.shape[0]
    gQw = beta * (2.0 * dot[:, None] * Qu - 2.0 * c * Qw) / Qw.shape[0]
    return att, rep, (gPu, -gPu, gQu, gQw)


def total_loss(params: approx.MlpParams, feats: np.ndarray, pos, neg, beta: float, c: float = 1.0):
    """Penalized loss on one mini-batch and its parameter gradients.

    ``feats`` is the raw feature table (one row per state); ``pos`` and
    ``neg`` are pairs of state index arrays. Returns
    ``(total, attractive, repulsive, grads)``.
    """
    u, v = pos
    uw, w = neg
    idx = np.concatenate([u, v, uw, w])
    # the network only sees each distinct state once; per-row gradients are summed back
    uniq, inv = np.unique(idx, return_inverse=True)
    out, acts = approx.forward(params, feats[uniq], keep=True)
    sizes = np.cumsum([len(u), len(v), len(uw)])
    Pu, Pv, Qu, Qw = np.split(out[inv], sizes)
    att, rep, grads = embedding_gradients(Pu, Pv, Qu, Qw, beta, c)
    up = np.zeros_like(out)
    np.add.at(up, inv, np.concatenate(grads))
    g = approx.backward(params, acts, up)
    return att + beta * rep, att, rep, g


def train_repr(config: LapRepConfig, buffer: ReplayBuffer, spec: GridSpec, repr_kind,
               log_interval: int = LOG_INTERVAL):
    """Adam on the penalized objective; returns ``(params, TrainLog)``."""
    kind = ReprKind(repr_kind)
    params = approx.init(config.layer_sizes(spec, kind), config.seed)
    log = TrainLog()
    if config.steps == 0:
        return params, log
    feats = encode_batch(spec, np.arange(spec.n_states), kind)
    rng = substream(config.seed, "train")
    opt = approx.AdamState.for_params(params, lr=config.lr)
    B = config.batch
    t0 = time.perf_counter()
    for it in range(1, config.steps + 1):
        u, v, _ = sample_pairs(buffer, config.lam, rng, B)
        if config.reuse_negative_u:
            uw, w = u, sample_states(buffer, rng, B)
        else:
            uw, w = sample_states(buffer, rng, B), sample_states(buffer, rng, B)
        tot, att, rep, grads = total_loss(params, feats, (u, v), (uw, w), config.beta, config.delta_scale)
        approx.adam_step(params, grads, opt)
        if it % log_interval == 0 or it == config.steps:
            if not np.isfinite(tot):
                raise approx.NumericalFailure(f"loss became non-finite at step {it}")
            log.append(it, att, rep, tot, time.perf_counter() - t0)
    for a in params.arrays:
        if not np.all(np.isfinite(a)):
            raise approx.NumericalFailure("parameters became non-finite")
    return params, log


def embed_table(params: approx.MlpParams, spec: GridSpec, repr_kind) -> np.ndarray:
    """Embedding of every state, shape ``(|S|, d)``."""
    return approx.forward(params, encode_batch(spec, np.arange(spec.n_states), repr_kind))
