"""Goal-reaching gridworld tasks, shaped rewards and a small DQN agent."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import approx
from .gridworld import GridSpec, GridState, N_ACTIONS, position_table
from .objective import LapRepConfig, embed_table, train_repr
from .replay import collect_transitions
from .seeding import substream

EPISODE_LEN = 50


class RewardKind(str, Enum):
    SPARSE = "sparse"
    L2 = "l2"
    RAWMIX = "rawmix"
    MIX = "mix"


class MissingEmbedding(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GoalTask:
    spec: GridSpec
    goal: GridState
    episode_len: int = EPISODE_LEN

    @classmethod
    def from_spec(cls, spec: GridSpec, episode_len: int = EPISODE_LEN) -> "GoalTask":
        return cls(spec, spec.goal_state(), episode_len)

    def success(self, s) -> bool:
        return int(getattr(s, "index", s)) == self.goal.index


def shaping_repr_config(seed: int = 0, steps: int = 30_000) -> LapRepConfig:
    """Representation settings used for reward shaping on gridworlds."""
    return LapRepConfig(d=20, beta=5.0, delta_scale=0.05, lam=0.9, batch=128, steps=steps,
                        lr=1e-3, seed=seed, hidden=(256, 256, 256))


def pretrain_embedding(spec: GridSpec, seed: int = 0, steps: int = 30_000,
                       n_transitions: int = 100_000, T: int = EPISODE_LEN) -> np.ndarray:
    """Frozen ``(|S|, d)`` embedding table learned from uniform-policy data on positions."""
    buffer = collect_transitions(spec, n_transitions, T, substream(seed, "collect"))
    params, _ = train_repr(shaping_repr_config(seed, steps), buffer, spec, "position")
    return embed_table(params, spec, "position")


def reward_table(kind: RewardKind | str, task: GoalTask, phi: np.ndarray | None = None) -> np.ndarray:
    """Reward for landing in each state (rewards depend only on the next state)."""
    kind = RewardKind(kind)
    g = task.goal.index
    sparse = np.full(task.spec.n_states, -1.0)
    sparse[g] = 0.0
    if kind is RewardKind.SPARSE:
        return sparse
    if kind in (RewardKind.L2, RewardKind.RAWMIX):
        pos = position_table(task.spec)
        l2 = -np.linalg.norm(pos - pos[g], axis=1)
        return l2 if kind is RewardKind.L2 else 0.5 * l2 + 0.5 * sparse
    if phi is None:
        raise MissingEmbedding("the mix reward needs a frozen embedding")
    phi = np.asarray(phi, float)
    return 0.5 * -np.linalg.norm(phi - phi[g], axis=1) + 0.5 * sparse


def reward(kind, s_next, task: GoalTask, phi: np.ndarray | None = None) -> float:
    return float(reward_table(kind, task, phi)[int(getattr(s_next, "index", s_next))])


@dataclass
class DqnConfig:
    epsilon: float = 0.2
    discount: float = 0.98
    target_period: int = 50
    target_mix: float = 0.05
    lr: float = 1e-3
    batch: int = 32
    total_steps: int = 50_000
    seed: int = 0
    hidden: tuple = (256, 256, 256)
    buffer_size: int = 100_000
    learning_starts: int = 1_000
    train_every: int = 1
    eval_every: int = 2_000
    eval_episodes: int = 50

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")

    def as_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


def soft_update(target: approx.MlpParams, online: approx.MlpParams, mix: float) -> None:
    """``target <- mix * online + (1 - mix) * target``, in place."""
    for t, o in zip(target.arrays, online.arrays):
        t *= 1.0 - mix
        t += mix * o


def greedy(q: np.ndarray) -> np.ndarray:
    """Argmax over actions; ties go to the lowest action index."""
    return np.argmax(q, axis=-1)


def evaluate_policy(params: approx.MlpParams, task: GoalTask, episodes: int, seed,
                    epsilon: float = 0.0, starts: np.ndarray | None = None) -> float:
    """Fraction of episodes that visit the goal within ``episode_len`` steps.

    The default is the greedy policy; ``epsilon`` adds uniform exploration.
    """
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = substream(0 if seed is None else seed, "eval")
    spec = task.spec
    if starts is None:
        starts = rng.integers(0, spec.n_states, size=episodes)
    s = np.array(starts, dtype=np.int64)
    feats = position_table(spec)
    hit = s == task.goal.index
    for _ in range(task.episode_len):
        a = greedy(approx.forward(params, feats[s]))
        if epsilon > 0:
            explore = rng.random(s.size) < epsilon
            a = np.where(explore, rng.integers(0, N_ACTIONS, size=s.size), a)
        s = spec.next_state[s, a]
        hit |= s == task.goal.index
    return float(np.mean(hit))


@dataclass
class DqnResult:
    params: approx.MlpParams
    curve: list  # (env_steps, success_rate)


def dqn_train(task: GoalTask, kind: RewardKind | str, config: DqnConfig,
              phi: np.ndarray | None = None) -> DqnResult:
    """Online DQN with a soft-updated target network on ``(x, y)`` inputs.

    Episodes start uniformly at random, last ``task.episode_len`` steps and
    do not stop at the goal. Every ``eval_every`` steps the greedy policy is
    scored on a fixed set of start states.
    """
    spec = task.spec
    rewards = reward_table(kind, task, phi)
    feats = position_table(spec)
    rng = substream(config.seed, "agent")
    eval_starts = substream(config.seed, "eval").integers(0, spec.n_states, size=config.eval_episodes)
    online = approx.init([2, *config.hidden, N_ACTIONS], rng)
    target = online.copy()
    opt = approx.AdamState.for_params(online, lr=config.lr)
    cap = config.buffer_size
    buf_s = np.empty(cap, dtype=np.int64)
    buf_a = np.empty(cap, dtype=np.int64)
    buf_s2 = np.empty(cap, dtype=np.int64)
    size = head = 0
    gamma = config.discount
    B = config.batch
    curve = [(0, evaluate_policy(online, task, config.eval_episodes, None, starts=eval_starts))]
    s = int(rng.integers(spec.n_states))
    t_ep = 0
    for step in range(1, config.total_steps + 1):
        if rng.random() < config.epsilon:
            a = int(rng.integers(N_ACTIONS))
        else:
            a = int(greedy(approx.forward(online, feats[s:s + 1]))[0])
        s2 = int(spec.next_state[s, a])
        buf_s[head], buf_a[head], buf_s2[head] = s, a, s2
        head = (head + 1) % cap
        size = min(size + 1, cap)
        t_ep += 1
        if t_ep >= task.episode_len:
            s, t_ep = int(rng.integers(spec.n_states)), 0
        else:
            s = s2
        if step >= config.learning_starts and step % config.train_every == 0:
            k = rng.integers(0, size, size=B)
            bs, ba, bs2 = buf_s[k], buf_a[k], buf_s2[k]
            y = rewards[bs2] + gamma * approx.forward(target, feats[bs2]).max(axis=1)
            q, acts = approx.forward(online, feats[bs], keep=True)
            up = np.zeros_like(q)
            up[np.arange(B), ba] = (q[np.arange(B), ba] - y) / B
            approx.adam_step(online, approx.backward(online, acts, up), opt)
        if step % config.target_period == 0:
            soft_update(target, online, config.target_mix)
        if step % config.eval_every == 0:
            curve.append((step, evaluate_policy(online, task, config.eval_episodes, None, starts=eval_starts)))
    return DqnResult(online, curve)


def mix_distance_grid(task: GoalTask, phi: np.ndarray) -> np.ndarray:
    """Embedding distance to the goal laid out on the maze grid (NaN on walls)."""
    spec = task.spec
    dist = np.linalg.norm(phi - phi[task.goal.index], axis=1)
    grid = np.full((spec.height, spec.width), np.nan)
    for (x, y), v in zip(spec.open_cells, dist):
        grid[y, x] = v
    return grid
