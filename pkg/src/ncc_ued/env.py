"""Underspecified environments: grid mazes and one-shot matrix games.

A level fixes every free parameter of the environment family. Two kinds
are supported:

- ``grid-maze``: a ``width x height`` grid with walls, a start and a goal
  cell. Actions are 0=up, 1=right, 2=down, 3=left; blocked moves leave the
  agent in place. Reward is 1 on arrival at the goal (which ends the
  episode) and 0 otherwise, so returns are ``gamma ** (steps - 1)`` or 0.
- ``matrix-game``: a single state; the level is a payoff column with one
  entry per action and every episode lasts exactly one step.

Besides the per-step API (:func:`step`, :func:`rollout`) the module offers a
vectorised :func:`rollout_batch` that drives many episodes at once from
precompiled transition tables. Both consume randomness only through the
``numpy.random.Generator`` they are given.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

GRID = "grid-maze"
MATRIX = "matrix-game"
KINDS = (GRID, MATRIX)

MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))
ACTION_NAMES = ("up", "right", "down", "left")
# egocentric window, row-major, centre excluded
NEIGHBOURS = ((-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1))
FREE, BLOCKED, GOAL = 0, 1, 2
N_WINDOW_KEYS = 3 ** len(NEIGHBOURS)


@dataclass(frozen=True)
class LevelSpec:
    """One fully specified level. Build with :func:`make_grid_level` or
    :func:`make_matrix_level` so that ``id`` is derived from the contents."""

    id: int
    kind: str
    width: int = 0
    height: int = 0
    walls: tuple[bool, ...] = ()
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (0, 0)
    payoff: tuple[float, ...] = ()
    horizon: int = 1

    @property
    def n_actions(self) -> int:
        return len(MOVES) if self.kind == GRID else len(self.payoff)

    @property
    def n_states(self) -> int:
        return self.width * self.height if self.kind == GRID else 1

    def is_wall(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return True
        return self.walls[y * self.width + x]

    def wall_array(self) -> np.ndarray:
        return np.array(self.walls, dtype=bool).reshape(self.height, self.width)


@dataclass(frozen=True)
class UPOMDPSpec:
    """Static description of an environment family (everything but the level)."""

    name: str
    n_actions: int
    gamma: float
    reward_range: tuple[float, float]
    observation: str
    deterministic: bool = True

    def __post_init__(self):
        if self.n_actions < 2:
            raise ValueError("an environment needs at least two actions")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.gamma}")


def grid_upomdp(gamma: float = 0.99) -> UPOMDPSpec:
    return UPOMDPSpec(
        name=GRID,
        n_actions=len(MOVES),
        gamma=gamma,
        reward_range=(0.0, 1.0),
        observation="egocentric 3x3 free/blocked/goal window + normalised (x, y)",
    )


def matrix_upomdp(n_actions: int, gamma: float = 0.99, reward_range=(0.0, 1.0)) -> UPOMDPSpec:
    return UPOMDPSpec(
        name=MATRIX,
        n_actions=n_actions,
        gamma=gamma,
        reward_range=tuple(reward_range),
        observation="constant (single state)",
    )


class Observation(NamedTuple):
    key: int
    window: tuple[int, ...]
    coords: tuple[float, float]


@dataclass
class Trajectory:
    observations: list
    actions: list
    rewards: list
    terminal: bool
    level_id: int
    gamma: float
    returns_to_go: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.returns_to_go is None:
            self.returns_to_go = returns_to_go(self.rewards, self.gamma)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def keys(self) -> list[int]:
        return [o.key if isinstance(o, Observation) else int(o) for o in self.observations]

    @property
    def success(self) -> bool:
        return any(r > 0 for r in self.rewards)


def _level_id(content: str) -> int:
    digest = hashlib.sha256(content.encode()).hexdigest()
    return int(digest[:15], 16)


def default_horizon(width: int, height: int) -> int:
    return 2 * width * height


def make_grid_level(width, height, wall_mask, start, goal, horizon=None) -> LevelSpec:
    """Validate a maze description and return a :class:`LevelSpec`.

    ``wall_mask`` is indexed ``[row][col]`` (shape ``(height, width)``) or is
    a flat row-major sequence of ``width * height`` booleans.
    """
    width, height = int(width), int(height)
    if width < 2 or height < 2:
        raise ValueError(f"maze must be at least 2x2, got {width}x{height}")
    mask = np.asarray(wall_mask, dtype=bool).reshape(-1)
    if mask.size != width * height:
        raise ValueError(f"wall mask has {mask.size} cells, expected {width * height}")
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    for name, (x, y) in (("start", start), ("goal", goal)):
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"{name} {(x, y)} outside {width}x{height} grid")
        if mask[y * width + x]:
            raise ValueError(f"{name} {(x, y)} is a wall")
    if start == goal:
        raise ValueError(f"start and goal coincide at {start}")
    horizon = default_horizon(width, height) if horizon is None else int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    walls = tuple(bool(b) for b in mask)
    content = f"{GRID}|{width}|{height}|{_mask_hex(walls)}|{start}|{goal}|{horizon}"
    return LevelSpec(
        id=_level_id(content), kind=GRID, width=width, height=height,
        walls=walls, start=start, goal=goal, horizon=horizon,
    )


def make_matrix_level(payoff, horizon: int = 1) -> LevelSpec:
    payoff = tuple(float(p) for p in payoff)
    if len(payoff) < 2:
        raise ValueError("a matrix-game level needs at least two payoffs")
    if not all(np.isfinite(payoff)):
        raise ValueError(f"payoffs must be finite, got {payoff}")
    if horizon != 1:
        raise ValueError("matrix-game episodes last exactly one step")
    content = f"{MATRIX}|" + ",".join(repr(p) for p in payoff)
    return LevelSpec(id=_level_id(content), kind=MATRIX, payoff=payoff, horizon=1)


def _mask_hex(walls: Sequence[bool]) -> str:
    value = 0
    for i, w in enumerate(walls):
        if w:
            value |= 1 << i
    return format(value, "x")


def return_bound(level: LevelSpec) -> float:
    """Largest absolute discounted return any trajectory can reach on ``level``."""
    if level.kind == GRID:
        return 1.0
    return float(max(abs(p) for p in level.payoff))


# ---------------------------------------------------------------- dynamics

def observe(level: LevelSpec, state) -> Observation:
    if level.kind == MATRIX:
        return Observation(0, (), (0.0, 0.0))
    x, y = state
    window = []
    for dx, dy in NEIGHBOURS:
        nx, ny = x + dx, y + dy
        if (nx, ny) == level.goal:
            window.append(GOAL)
        elif level.is_wall(nx, ny):
            window.append(BLOCKED)
        else:
            window.append(FREE)
    key = 0
    for v in window:
        key = key * 3 + v
    coords = (x / (level.width - 1), y / (level.height - 1))
    return Observation(key, tuple(window), coords)


def n_observation_keys(level_or_kind) -> int:
    kind = level_or_kind if isinstance(level_or_kind, str) else level_or_kind.kind
    return N_WINDOW_KEYS if kind == GRID else 1


def initial_state(level: LevelSpec):
    return level.start if level.kind == GRID else 0


def step(level: LevelSpec, state, action: int, t: int = 0):
    """Advance one step from ``state`` at time index ``t``.

    Returns ``(next_state, reward, done)``; ``done`` is set on reaching the
    goal or when ``t + 1`` hits the level horizon.
    """
    action = int(action)
    if not 0 <= action < level.n_actions:
        raise ValueError(f"action {action} out of range for {level.n_actions} actions")
    if level.kind == MATRIX:
        return 0, level.payoff[action], True
    x, y = state
    if level.is_wall(x, y):
        raise ValueError(f"state {state} is not a free cell")
    dx, dy = MOVES[action]
    nx, ny = x + dx, y + dy
    nxt = (x, y) if level.is_wall(nx, ny) else (nx, ny)
    reached = nxt == level.goal
    reward = 1.0 if reached else 0.0
    return nxt, reward, reached or t + 1 >= level.horizon


def returns_to_go(rewards, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def discounted_return(traj, gamma: float) -> float:
    """Sum of ``gamma**t * r_t`` over a trajectory (or a plain reward list)."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    rewards = traj.rewards if isinstance(traj, Trajectory) else traj
    return float(sum(r * gamma ** t for t, r in enumerate(rewards)))


def rollout(policy: Callable, level: LevelSpec, rng: np.random.Generator, gamma: float = 0.99) -> Trajectory:
    """Sample one episode. ``policy(obs)`` must return action probabilities."""
    state = initial_state(level)
    observations, actions, rewards = [], [], []
    done = False
    t = 0
    while not done:
        obs = observe(level, state)
        probs = np.asarray(policy(obs), dtype=float)
        action = int(rng.choice(level.n_actions, p=probs / probs.sum()))
        state, reward, done = step(level, state, action, t)
        observations.append(obs)
        actions.append(action)
        rewards.append(reward)
        t += 1
    terminal = bool(rewards[-1] > 0) if level.kind == GRID else True
    return Trajectory(observations, actions, rewards, terminal, level.id, gamma)


# ------------------------------------------------------------- reachability

def bfs_distance(level: LevelSpec) -> int | None:
    """Number of moves on a shortest start->goal path, or None if unreachable."""
    if level.kind == MATRIX:
        return 1
    seen = {level.start: 0}
    queue = deque([level.start])
    while queue:
        cell = queue.popleft()
        if cell == level.goal:
            return seen[cell]
        for dx, dy in MOVES:
            nxt = (cell[0] + dx, cell[1] + dy)
            if nxt not in seen and not level.is_wall(*nxt):
                seen[nxt] = seen[cell] + 1
                queue.append(nxt)
    return None


def is_solvable(level: LevelSpec) -> bool:
    return bfs_distance(level) is not None


# ------------------------------------------------------------ level sampling

@dataclass(frozen=True)
class SpaceConfig:
    """Uniform (domain-randomisation) distribution over levels."""

    kind: str = GRID
    width: int = 5
    height: int = 5
    wall_prob: float = 0.35
    horizon: int | None = None
    n_actions: int = 2
    payoff_low: float = 0.0
    payoff_high: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown level kind {self.kind!r}")
        if not 0.0 <= self.wall_prob <= 1.0:
            raise ValueError("wall_prob must lie in [0, 1]")


def sample_level_uniform(space: SpaceConfig, rng: np.random.Generator, max_tries: int = 100) -> LevelSpec:
    if space.kind == MATRIX:
        return make_matrix_level(rng.uniform(space.payoff_low, space.payoff_high, space.n_actions))
    for _ in range(max_tries):
        walls = rng.random((space.height, space.width)) < space.wall_prob
        free = np.flatnonzero(~walls.reshape(-1))
        if free.size < 2:
            continue
        s, g = rng.choice(free, size=2, replace=False)
        start = (int(s % space.width), int(s // space.width))
        goal = (int(g % space.width), int(g // space.width))
        return make_grid_level(space.width, space.height, walls, start, goal, space.horizon)
    raise RuntimeError(f"no level with two free cells after {max_tries} draws (wall_prob={space.wall_prob})")


# ------------------------------------------------------------ serialization
#
# One level per line, whitespace separated:
#   grid:   <id> grid-maze <w> <h> <wallmask_hex> <sx>,<sy> <gx>,<gy> <T>
#   matrix: <id> matrix-game <n_actions> 1 - - - 1 <p0>,<p1>,...
# Bit i of the wall mask is cell (i % w, i // w).

def level_to_line(level: LevelSpec) -> str:
    if level.kind == GRID:
        return (f"{level.id} {GRID} {level.width} {level.height} {_mask_hex(level.walls)} "
                f"{level.start[0]},{level.start[1]} {level.goal[0]},{level.goal[1]} {level.horizon}")
    payoff = ",".join(repr(p) for p in level.payoff)
    return f"{level.id} {MATRIX} {len(level.payoff)} 1 - - - 1 {payoff}"


def level_from_line(line: str) -> LevelSpec:
    parts = line.split()
    if len(parts) < 8:
        raise ValueError(f"malformed level line: {line!r}")
    kind = parts[1]
    if kind == GRID:
        w, h = int(parts[2]), int(parts[3])
        bits = int(parts[4], 16)
        walls = [(bits >> i) & 1 == 1 for i in range(w * h)]
        start = tuple(int(v) for v in parts[5].split(","))
        goal = tuple(int(v) for v in parts[6].split(","))
        level = make_grid_level(w, h, walls, start, goal, int(parts[7]))
    elif kind == MATRIX:
        if len(parts) < 9:
            raise ValueError(f"matrix level line lacks payoffs: {line!r}")
        level = make_matrix_level(float(v) for v in parts[8].split(","))
    else:
        raise ValueError(f"unknown level kind {kind!r}")
    if level.id != int(parts[0]):
        raise ValueError(f"level id {parts[0]} does not match its contents ({level.id})")
    return level


def write_levels(path, levels: Sequence[LevelSpec]) -> None:
    Path(path).write_text("".join(level_to_line(lv) + "\n" for lv in levels))


def read_levels(path) -> list[LevelSpec]:
    lines = Path(path).read_text().splitlines()
    return [level_from_line(ln) for ln in lines if ln.strip() and not ln.startswith("#")]


# ------------------------------------------------------- vectorised rollouts

@dataclass(frozen=True)
class CompiledLevel:
    trans: np.ndarray     # (S, A) next state index
    reward: np.ndarray    # (S, A)
    terminal: np.ndarray  # (S, A) episode ends regardless of time
    keys: np.ndarray      # (S,) observation key per state
    start: int
    horizon: int


@lru_cache(maxsize=65536)
def compile_level(level: LevelSpec) -> CompiledLevel:
    if level.kind == MATRIX:
        a = level.n_actions
        return CompiledLevel(
            trans=np.zeros((1, a), dtype=np.int64),
            reward=np.array([level.payoff], dtype=float),
            terminal=np.ones((1, a), dtype=bool),
            keys=np.zeros(1, dtype=np.int64),
            start=0, horizon=1,
        )
    w, h = level.width, level.height
    n = w * h
    trans = np.zeros((n, 4), dtype=np.int64)
    reward = np.zeros((n, 4))
    terminal = np.zeros((n, 4), dtype=bool)
    keys = np.zeros(n, dtype=np.int64)
    gidx = level.goal[1] * w + level.goal[0]
    for s in range(n):
        x, y = s % w, s // w
        keys[s] = observe(level, (x, y)).key
        for a, (dx, dy) in enumerate(MOVES):
            nx, ny = x + dx, y + dy
            nxt = s if level.is_wall(nx, ny) else ny * w + nx
            trans[s, a] = nxt
            if nxt == gidx:
                reward[s, a] = 1.0
                terminal[s, a] = True
    return CompiledLevel(trans, reward, terminal, keys,
                         level.start[1] * w + level.start[0], level.horizon)


@dataclass
class TrajectoryBatch:
    """A batch of episodes stored as padded ``(B, T)`` arrays.

    ``levels`` holds the distinct levels, ``level_index[b]`` points into it.
    Entries past an episode's end are masked out and hold zeros.
    """

    levels: list
    level_index: np.ndarray
    keys: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    mask: np.ndarray
    gamma: float

    @property
    def size(self) -> int:
        return len(self.level_index)

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def returns_to_go(self) -> np.ndarray:
        out = np.zeros_like(self.rewards)
        acc = np.zeros(self.size)
        for t in range(self.rewards.shape[1] - 1, -1, -1):
            acc = self.rewards[:, t] + self.gamma * acc
            out[:, t] = acc
        return out * self.mask

    def returns(self) -> np.ndarray:
        if self.rewards.shape[1] == 0:
            return np.zeros(self.size)
        return self.returns_to_go()[:, 0]

    def success(self) -> np.ndarray:
        return (self.rewards > 0).any(axis=1)

    def select(self, rows) -> "TrajectoryBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return TrajectoryBatch(self.levels, self.level_index[rows], self.keys[rows],
                               self.actions[rows], self.rewards[rows], self.mask[rows], self.gamma)

    def to_trajectories(self) -> list[tuple[Trajectory, LevelSpec]]:
        out = []
        for b in range(self.size):
            n = int(self.mask[b].sum())
            level = self.levels[self.level_index[b]]
            rewards = self.rewards[b, :n].tolist()
            terminal = bool(rewards and rewards[-1] > 0) if level.kind == GRID else True
            traj = Trajectory(self.keys[b, :n].tolist(), self.actions[b, :n].tolist(),
                              rewards, terminal, level.id, self.gamma)
            out.append((traj, level))
        return out

    @classmethod
    def from_trajectories(cls, pairs, gamma: float) -> "TrajectoryBatch":
        levels, index, seen = [], [], {}
        for traj, level in pairs:
            if traj.level_id != level.id:
                raise ValueError(f"trajectory of level {traj.level_id} paired with level {level.id}")
            if level.id not in seen:
                seen[level.id] = len(levels)
                levels.append(level)
            index.append(seen[level.id])
        T = max((len(tr) for tr, _ in pairs), default=0)
        B = len(pairs)
        keys = np.zeros((B, T), dtype=np.int64)
        actions = np.zeros((B, T), dtype=np.int64)
        rewards = np.zeros((B, T))
        mask = np.zeros((B, T), dtype=bool)
        for b, (traj, _) in enumerate(pairs):
            n = len(traj)
            keys[b, :n] = traj.keys
            actions[b, :n] = traj.actions
            rewards[b, :n] = traj.rewards
            mask[b, :n] = True
        return cls(levels, np.array(index, dtype=np.int64), keys, actions, rewards, mask, gamma)


def rollout_batch(prob_table: np.ndarray, levels: Sequence[LevelSpec], rng: np.random.Generator,
                  gamma: float) -> TrajectoryBatch:
    """Run one episode per entry of ``levels`` (repeat a level to get several).

    ``prob_table[key]`` gives the action distribution for an observation key.
    """
    uniq, index, seen = [], [], {}
    for lv in levels:
        if lv.id not in seen:
            seen[lv.id] = len(uniq)
            uniq.append(lv)
        index.append(seen[lv.id])
    index = np.array(index, dtype=np.int64)
    B = len(index)
    if B == 0:
        e = np.zeros((0, 0))
        return TrajectoryBatch(uniq, index, e.astype(np.int64), e.astype(np.int64), e, e.astype(bool), gamma)
    comp = [compile_level(lv) for lv in uniq]
    n_actions = comp[0].trans.shape[1]
    if any(c.trans.shape[1] != n_actions for c in comp):
        raise ValueError("all levels in a batch must share an action set")
    S = max(c.trans.shape[0] for c in comp)
    K = len(comp)
    trans = np.zeros((K, S, n_actions), dtype=np.int64)
    reward = np.zeros((K, S, n_actions))
    terminal = np.zeros((K, S, n_actions), dtype=bool)
    keytab = np.zeros((K, S), dtype=np.int64)
    for k, c in enumerate(comp):
        s = c.trans.shape[0]
        trans[k, :s], reward[k, :s], terminal[k, :s], keytab[k, :s] = c.trans, c.reward, c.terminal, c.keys
    horizon = np.array([c.horizon for c in comp])[index]
    T = int(horizon.max())
    state = np.array([c.start for c in comp])[index]
    keys = np.zeros((B, T), dtype=np.int64)
    actions = np.zeros((B, T), dtype=np.int64)
    rewards = np.zeros((B, T))
    mask = np.zeros((B, T), dtype=bool)
    alive = np.arange(B)
    cum = np.cumsum(prob_table, axis=1)
    for t in range(T):
        if alive.size == 0:
            break
        lvl = index[alive]
        st = state[alive]
        k = keytab[lvl, st]
        u = rng.random(alive.size)
        a = np.minimum((cum[k] < u[:, None] * cum[k, -1:]).sum(axis=1), n_actions - 1)
        keys[alive, t] = k
        actions[alive, t] = a
        rewards[alive, t] = reward[lvl, st, a]
        mask[alive, t] = True
        state[alive] = trans[lvl, st, a]
        ended = terminal[lvl, st, a] | (t + 1 >= horizon[alive])
        alive = alive[~ended]
    return TrajectoryBatch(uniq, index, keys, actions, rewards, mask, gamma)
