"""Uniform-policy trajectories and the state / pair samplers built on them."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gridworld import N_ACTIONS, GridSpec, GridState

MAX_RETRIES = 10_000


class SamplingStuck(RuntimeError):
    pass


class EmptyBuffer(ValueError):
    pass


@dataclass(frozen=True)
class PairSample:
    u: GridState
    v: GridState
    tau: int


@dataclass(frozen=True, eq=False)
class ReplayBuffer:
    """Equal-length trajectories stored as an ``(episodes, T + 1)`` index array."""

    spec: GridSpec
    states: np.ndarray

    @property
    def T(self) -> int:
        return self.states.shape[1] - 1

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def total_transitions(self) -> int:
        return self.n_episodes * self.T

    @property
    def trajectories(self) -> list[list[GridState]]:
        return [[self.spec.state(int(i)) for i in row] for row in self.states]

    def __len__(self) -> int:
        return self.total_transitions

    def transitions(self) -> tuple[np.ndarray, np.ndarray]:
        """All consecutive ``(s_t, s_{t+1})`` index pairs, flattened."""
        return self.states[:, :-1].ravel(), self.states[:, 1:].ravel()

    def save_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "step", "state"])
            for e, row in enumerate(self.states):
                for t, s in enumerate(row):
                    w.writerow([e, t, int(s)])

    @classmethod
    def load_csv(cls, path, spec: GridSpec) -> "ReplayBuffer":
        # extra trailing columns (e.g. a config hash) are ignored
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2, usecols=(0, 1, 2))
        n_ep, T1 = data[:, 0].max() + 1, data[:, 1].max() + 1
        if len(data) != n_ep * T1:
            raise ValueError(f"{path} does not hold complete episodes")
        if data[:, 2].min() < 0 or data[:, 2].max() >= spec.n_states:
            raise ValueError(f"{path} refers to states outside the maze")
        states = np.empty((n_ep, T1), dtype=np.int64)
        states[data[:, 0], data[:, 1]] = data[:, 2]
        states.setflags(write=False)
        return cls(spec, states)


def collect(spec: GridSpec, n_episodes: int, T: int, seed) -> ReplayBuffer:
    """Roll out ``n_episodes`` uniform-policy episodes of ``T`` steps.

    Start states are uniform over open cells. ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    if T < 1:
        raise ValueError("episodes need at least one step")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    states = np.empty((n_episodes, T + 1), dtype=np.int64)
    states[:, 0] = rng.integers(0, spec.n_states, size=n_episodes)
    actions = rng.integers(0, N_ACTIONS, size=(n_episodes, T))
    nxt = spec.next_state
    for t in range(T):
        states[:, t + 1] = nxt[states[:, t], actions[:, t]]
    states.setflags(write=False)
    return ReplayBuffer(spec, states)


def collect_transitions(spec: GridSpec, n_transitions: int, T: int, seed) -> ReplayBuffer:
    """Buffer of ``ceil(n / T)`` episodes, i.e. at least ``n`` transitions."""
    return collect(spec, -(-n_transitions // T), T, seed)


def sample_tau(lam: float, rng: np.random.Generator, size=None):
    """Inverse-CDF draw from ``Pr(tau) = lam**(tau-1) * (1 - lam)``, tau >= 1."""
    if not 0.0 <= lam < 1.0:
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    u = 1.0 - rng.random(size)  # (0, 1]
    if lam == 0.0:
        return np.ones_like(u, dtype=np.int64) if size is not None else 1
    tau = 1 + np.floor(np.log(u) / np.log(lam)).astype(np.int64)
    return tau if size is not None else int(tau)


def _check(buffer: ReplayBuffer) -> None:
    if buffer.n_episodes == 0 or buffer.T == 0:
        raise EmptyBuffer("replay buffer is empty")


def sample_states(buffer: ReplayBuffer, rng: np.random.Generator, size: int) -> np.ndarray:
    """State indices drawn uniformly over time steps ``0..T-1`` of all episodes."""
    _check(buffer)
    k = rng.integers(0, buffer.total_transitions, size=size)
    return buffer.states[k // buffer.T, k % buffer.T]


def sample_pairs(buffer: ReplayBuffer, lam: float, rng: np.random.Generator, size: int):
    """Vectorized positive pairs ``(u, v, tau)`` with discard-and-retry.

    A draw ``(episode, t, tau)`` with ``t + tau > T`` is thrown away and both
    ``t`` and ``tau`` are redrawn, so pairs never cross episode boundaries.
    """
    _check(buffer)
    T = buffer.T
    ep = np.empty(size, dtype=np.int64)
    t = np.empty(size, dtype=np.int64)
    tau = np.empty(size, dtype=np.int64)
    todo = np.arange(size)
    for _ in range(MAX_RETRIES):
        if todo.size == 0:
            break
        k = rng.integers(0, buffer.total_transitions, size=todo.size)
        draw = sample_tau(lam, rng, todo.size)
        ok = (k % T) + draw <= T
        keep = todo[ok]
        ep[keep], t[keep], tau[keep] = k[ok] // T, k[ok] % T, draw[ok]
        todo = todo[~ok]
    else:
        if todo.size:
            raise SamplingStuck(f"{todo.size} pairs still rejected after {MAX_RETRIES} retries")
    return buffer.states[ep, t], buffer.states[ep, t + tau], tau


def sample_negative_pairs(buffer: ReplayBuffer, rng: np.random.Generator, size: int):
    return sample_states(buffer, rng, size), sample_states(buffer, rng, size)


def sample_state(buffer: ReplayBuffer, rng: np.random.Generator) -> GridState:
    return buffer.spec.state(int(sample_states(buffer, rng, 1)[0]))


def sample_pair(buffer: ReplayBuffer, lam: float, rng: np.random.Generator) -> PairSample:
    u, v, tau = sample_pairs(buffer, lam, rng, 1)
    return PairSample(buffer.spec.state(int(u[0])), buffer.spec.state(int(v[0])), int(tau[0]))


def sample_negative_pair(buffer: ReplayBuffer, rng: np.random.Generator) -> tuple[GridState, GridState]:
    return sample_state(buffer, rng), sample_state(buffer, rng)
