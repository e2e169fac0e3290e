"""Gridworld mazes with deterministic 4-action dynamics.

Maps are ASCII: ``#`` wall, ``.`` open, ``G`` goal (open). Coordinates are
``(x, y)`` with ``x`` the column and ``y`` the row, row 0 on top. Open cells
are enumerated row-major and that order defines the state index.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

WALL = "#"
OPEN = "."
GOAL = "G"

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
N_ACTIONS = 4
MOVES = np.array([(0, -1), (0, 1), (-1, 0), (1, 0)], dtype=np.int64)
OPPOSITE = (DOWN, UP, RIGHT, LEFT)

BUILTIN_MAZES = ("fourroom", "oneroom", "tworoom", "hardmaze")


class MazeError(ValueError):
    """Raised for malformed maze text."""


class DisconnectedMaze(MazeError):
    pass


class ReprKind(str, Enum):
    INDEX = "index"
    POSITION = "position"


@dataclass(frozen=True)
class GridState:
    index: int
    xy: tuple[int, int]


@dataclass(frozen=True, eq=False)
class GridSpec:
    width: int
    height: int
    walls: frozenset
    open_cells: tuple
    name: str = "maze"
    goal: tuple | None = None
    _index: dict = field(default=None, repr=False, compare=False)
    _next: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        index = {xy: i for i, xy in enumerate(self.open_cells)}
        nxt = np.empty((len(self.open_cells), N_ACTIONS), dtype=np.int64)
        for i, (x, y) in enumerate(self.open_cells):
            for a, (dx, dy) in enumerate(MOVES):
                nxt[i, a] = index.get((x + int(dx), y + int(dy)), i)
        nxt.setflags(write=False)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_next", nxt)

    @property
    def n_states(self) -> int:
        return len(self.open_cells)

    @property
    def next_state(self) -> np.ndarray:
        """``(|S|, 4)`` table of successor indices; blocked moves self-loop."""
        return self._next

    def state(self, key) -> GridState:
        """Look up a state by index or by ``(x, y)``."""
        if isinstance(key, (int, np.integer)):
            i = int(key)
            if not 0 <= i < self.n_states:
                raise IndexError(f"state index {i} out of range")
            return GridState(i, self.open_cells[i])
        xy = (int(key[0]), int(key[1]))
        if xy not in self._index:
            raise KeyError(f"{xy} is not an open cell")
        return GridState(self._index[xy], xy)

    def index_of(self, xy) -> int:
        return self._index[(int(xy[0]), int(xy[1]))]

    def goal_state(self) -> GridState:
        if self.goal is None:
            raise MazeError(f"maze {self.name!r} has no goal marker")
        return self.state(self.goal)

    def coords(self) -> np.ndarray:
        return np.array(self.open_cells, dtype=np.int64)

    def to_text(self) -> str:
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                if (x, y) in self.walls:
                    row.append(WALL)
                elif (x, y) == self.goal:
                    row.append(GOAL)
                else:
                    row.append(OPEN)
            rows.append("".join(row))
        return "\n".join(rows) + "\n"


def parse_maze(text: str, name: str = "maze") -> GridSpec:
    lines = [ln.rstrip("\r") for ln in text.strip("\n").split("\n")]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise MazeError("empty maze")
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        raise MazeError("maze rows have different lengths")
    walls, open_cells, goal = set(), [], None
    for y, row in enumerate(lines):
        for x, ch in enumerate(row):
            if ch == WALL:
                walls.add((x, y))
            elif ch in (OPEN, GOAL):
                open_cells.append((x, y))
                if ch == GOAL:
                    if goal is not None:
                        raise MazeError("more than one goal marker")
                    goal = (x, y)
            else:
                raise MazeError(f"unknown maze character {ch!r} at {(x, y)}")
    if not open_cells:
        raise MazeError("maze has no open cells")
    if len(_flood(set(open_cells), open_cells[0])) != len(open_cells):
        raise DisconnectedMaze("open cells are not connected")
    return GridSpec(width, len(lines), frozenset(walls), tuple(open_cells), name, goal)


def _flood(cells: set, start) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        x, y = queue.popleft()
        for dx, dy in MOVES:
            n = (x + int(dx), y + int(dy))
            if n in cells and n not in seen:
                seen.add(n)
                queue.append(n)
    return seen


def load_maze(name_or_path) -> GridSpec:
    """Load a shipped maze by name (e.g. ``"fourroom"``) or a map file by path."""
    key = str(name_or_path)
    stem = Path(key).stem if key.endswith(".txt") else key
    if stem in BUILTIN_MAZES and not Path(key).exists():
        text = resources.files("lapdraw.mazes").joinpath(f"{stem}.txt").read_text()
        return parse_maze(text, stem)
    path = Path(key)
    return parse_maze(path.read_text(), path.stem)


def step(spec: GridSpec, s: GridState, a: int) -> GridState:
    return spec.state(int(spec.next_state[s.index, a]))


def encode(spec: GridSpec, s, kind: ReprKind | str) -> np.ndarray:
    return encode_batch(spec, np.atleast_1d(np.asarray(getattr(s, "index", s))), kind)[0]


def encode_batch(spec: GridSpec, idx: np.ndarray, kind: ReprKind | str) -> np.ndarray:
    """Raw features for an array of state indices, one row per state."""
    kind = ReprKind(kind)
    idx = np.asarray(idx, dtype=np.int64)
    if kind is ReprKind.INDEX:
        out = np.zeros((idx.size, spec.n_states))
        out[np.arange(idx.size), idx.ravel()] = 1.0
        return out
    return position_table(spec)[idx.ravel()]


def position_table(spec: GridSpec) -> np.ndarray:
    xy = spec.coords().astype(float)
    sx = 2.0 / (spec.width - 1) if spec.width > 1 else 0.0
    sy = 2.0 / (spec.height - 1) if spec.height > 1 else 0.0
    return np.column_stack([xy[:, 0] * sx - 1.0, xy[:, 1] * sy - 1.0])


def feature_dim(spec: GridSpec, kind: ReprKind | str) -> int:
    return spec.n_states if ReprKind(kind) is ReprKind.INDEX else 2


def uniform_policy_action(rng: np.random.Generator, size=None):
    """Uniformly random action(s) in ``{0, 1, 2, 3}``."""
    return rng.integers(0, N_ACTIONS, size=size)


def shortest_path_lengths(spec: GridSpec, target: int) -> np.ndarray:
    """BFS distance (in moves) from every state to ``target``."""
    dist = np.full(spec.n_states, -1, dtype=np.int64)
    dist[target] = 0
    queue = deque([target])
    nxt = spec.next_state
    while queue:
        i = queue.popleft()
        for j in nxt[i]:
            if dist[j] < 0:
                dist[j] = dist[i] + 1
                queue.append(int(j))
    return dist
