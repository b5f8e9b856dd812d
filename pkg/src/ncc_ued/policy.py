"""Tabular softmax policy with uniform mixing, and its gradient estimators.

The policy keeps one row of logits per observation key and acts with

    pi(a | o) = (1 - mix) * softmax(logits[o])[a] + mix / |A|

so every action has probability at least ``mix / |A|``. Logits are clipped to
``[-bound, bound]`` after every update.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import (
    LevelSpec,
    TrajectoryBatch,
    compile_level,
    initial_state,
    n_observation_keys,
    observe,
    step,
)

BASELINES = ("return-to-go", "advantage")
ENUMERATION_CAP = 4 ** 6


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PolicyParams:
    logits: np.ndarray
    zeta: float = 0.05
    bound: float = 10.0

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        if self.logits.ndim != 2 or self.logits.shape[1] < 2:
            raise ValueError(f"logits must be (n_keys, n_actions>=2), got {self.logits.shape}")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"mixing weight must lie in (0, 1], got {self.zeta}")
        if self.bound <= 0:
            raise ValueError("weight bound must be positive")
        np.clip(self.logits, -self.bound, self.bound, out=self.logits)

    @classmethod
    def zeros(cls, n_keys: int, n_actions: int, zeta: float = 0.05, bound: float = 10.0) -> "PolicyParams":
        return cls(np.zeros((n_keys, n_actions)), zeta, bound)

    @classmethod
    def for_level(cls, level: LevelSpec, zeta: float = 0.05, bound: float = 10.0) -> "PolicyParams":
        return cls.zeros(n_observation_keys(level), level.n_actions, zeta, bound)

    @property
    def n_keys(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    @property
    def floor(self) -> float:
        return self.zeta / self.n_actions

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.logits.copy(), self.zeta, self.bound)

    def softmax_table(self) -> np.ndarray:
        return softmax(self.logits)

    def prob_table(self) -> np.ndarray:
        return (1.0 - self.zeta) * softmax(self.logits) + self.zeta / self.n_actions

    def __call__(self, obs) -> np.ndarray:
        return action_distribution(self, obs)


def action_distribution(params: PolicyParams, obs) -> np.ndarray:
    key = obs if isinstance(obs, (int, np.integer)) else obs.key
    p = softmax(params.logits[key])
    return (1.0 - params.zeta) * p + params.zeta / params.n_actions


def grad_log_prob(params: PolicyParams, key: int, action: int) -> np.ndarray:
    """Dense gradient of ``log pi(action | key)`` with respect to all logits."""
    p = softmax(params.logits[key])
    pi = (1.0 - params.zeta) * p + params.zeta / params.n_actions
    g = np.zeros_like(params.logits)
    row = -p.copy()
    row[action] += 1.0
    g[key] = (1.0 - params.zeta) * p[action] / pi[action] * row
    return g


def prob_jacobian(logits_row: np.ndarray, zeta: float) -> np.ndarray:
    """``J[a, b] = d pi(a) / d logit_b`` for one observation row."""
    p = softmax(np.asarray(logits_row, dtype=float))
    return (1.0 - zeta) * (np.diag(p) - np.outer(p, p))


def prob_hessian(logits_row: np.ndarray, zeta: float, action: int) -> np.ndarray:
    """Hessian of ``pi(action)`` with respect to one observation row."""
    p = softmax(np.asarray(logits_row, dtype=float))
    e = -p.copy()
    e[action] += 1.0
    return (1.0 - zeta) * p[action] * (np.outer(e, e) - (np.diag(p) - np.outer(p, p)))


@dataclass
class GradientEstimate:
    gradient: np.ndarray
    batch_size: int
    baseline: str


def _psi(batch: TrajectoryBatch, baseline: str) -> np.ndarray:
    rtg = batch.returns_to_go()
    if baseline == "return-to-go":
        return rtg
    if baseline != "advantage":
        raise ValueError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")
    # leave-one-out Monte-Carlo value per level and time step
    psi = rtg.copy()
    idx = batch.level_index
    for g in np.unique(idx):
        rows = np.flatnonzero(idx == g)
        if rows.size < 2:
            continue
        total = rtg[rows].sum(axis=0)
        loo = (total[None, :] - rtg[rows]) / (rows.size - 1)
        psi[rows] = (rtg[rows] - loo) * batch.mask[rows]
    return psi


def reinforce_from_batch(params: PolicyParams, batch: TrajectoryBatch, baseline: str = "return-to-go") -> np.ndarray:
    """Estimate of ``-grad E[J]``: minus the batch mean of sum_t grad log pi * Psi_t."""
    if batch.size == 0:
        raise ValueError("empty trajectory batch")
    psi = _psi(batch, baseline)
    soft = params.softmax_table()
    probs = params.prob_table()
    m = batch.mask
    k = batch.keys[m]
    a = batch.actions[m]
    w = (1.0 - params.zeta) * soft[k, a] / probs[k, a] * psi[m]
    n_keys, n_actions = params.logits.shape
    grad = np.bincount(k * n_actions + a, weights=w, minlength=n_keys * n_actions).reshape(n_keys, n_actions)
    for b in range(n_actions):
        grad[:, b] -= np.bincount(k, weights=w * soft[k, b], minlength=n_keys)
    return -grad / batch.size


def reinforce_gradient(params: PolicyParams, batch, gamma: float, baseline: str = "return-to-go") -> GradientEstimate:
    """REINFORCE estimate for the minimising player.

    ``batch`` is a list of ``(Trajectory, LevelSpec)`` pairs or a
    :class:`TrajectoryBatch`; trajectories must come from ``params``.
    """
    if not isinstance(batch, TrajectoryBatch):
        if not batch:
            raise ValueError("empty trajectory batch")
        batch = TrajectoryBatch.from_trajectories(list(batch), gamma)
    elif batch.gamma != gamma:
        batch = TrajectoryBatch(batch.levels, batch.level_index, batch.keys, batch.actions,
                                batch.rewards, batch.mask, gamma)
    return GradientEstimate(reinforce_from_batch(params, batch, baseline), batch.size, baseline)


def exact_policy_gradient(params: PolicyParams, level: LevelSpec, gamma: float, return_value: bool = False):
    """Gradient of the expected discounted return by enumerating every trajectory.

    Only feasible for tiny trajectory spaces (at most ``4**6`` action
    sequences). Use :func:`expected_return_and_gradient` beyond that.
    """
    if level.n_actions ** level.horizon > ENUMERATION_CAP:
        raise ValueError(
            f"{level.n_actions}^{level.horizon} action sequences exceed the enumeration cap {ENUMERATION_CAP}")
    probs = params.prob_table()
    soft = params.softmax_table()
    grad = np.zeros_like(params.logits)
    value = 0.0

    def leaf(path, prob, ret):
        nonlocal value
        value += prob * ret
        if ret == 0.0:
            return
        for key, a in path:
            row = -soft[key]
            row = row.copy()
            row[a] += 1.0
            grad[key] += prob * ret * (1.0 - params.zeta) * soft[key, a] / probs[key, a] * row

    def walk(state, t, path, prob, ret):
        key = observe(level, state).key
        for a in range(level.n_actions):
            nxt, r, done = step(level, state, a, t)
            p = prob * probs[key, a]
            path.append((key, a))
            if done:
                leaf(path, p, ret + gamma ** t * r)
            else:
                walk(nxt, t + 1, path, p, ret + gamma ** t * r)
            path.pop()

    walk(initial_state(level), 0, [], 1.0, 0.0)
    return (value, grad) if return_value else grad


def expected_return_and_gradient(params: PolicyParams, level: LevelSpec, gamma: float):
    """Exact ``(J, grad J)`` by finite-horizon dynamic programming.

    Backward pass for time-indexed action values, forward pass for the
    discounted state occupancy; cost is ``O(T * S * A)``.
    """
    c = compile_level(level)
    probs = params.prob_table()[c.keys]
    soft = params.softmax_table()[c.keys]
    S, A = c.trans.shape
    T = c.horizon
    Q = np.empty((T, S, A))
    V = np.zeros(S)
    for t in range(T - 1, -1, -1):
        cont = (~c.terminal) if t + 1 < T else np.zeros_like(c.terminal)
        Q[t] = c.reward + gamma * cont * V[c.trans]
        V = (probs * Q[t]).sum(axis=1)
    value = float(V[c.start])
    grad = np.zeros_like(params.logits)
    d = np.zeros(S)
    d[c.start] = 1.0
    live = ~c.terminal
    for t in range(T):
        adv = Q[t] - (soft * Q[t]).sum(axis=1, keepdims=True)
        contrib = (1.0 - params.zeta) * d[:, None] * soft * adv
        np.add.at(grad, c.keys, contrib)
        flow = gamma * d[:, None] * probs * live
        d = np.bincount(c.trans.ravel(), weights=flow.ravel(), minlength=S)
    return value, grad


def sgd_step_x(params: PolicyParams, grad: np.ndarray, eta_x: float) -> PolicyParams:
    if eta_x < 0:
        raise ValueError("step size must be non-negative")
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.logits.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {params.logits.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite policy gradient")
    return PolicyParams(params.logits - eta_x * grad, params.zeta, params.bound)


# Checkpoint layout (text):
#   ncc-policy 1 <n_keys> <n_actions> <zeta> <bound>
#   one logit per line, row-major, %.17g
def save_policy(path, params: PolicyParams) -> None:
    lines = [f"ncc-policy 1 {params.n_keys} {params.n_actions} {float(params.zeta)!r} {float(params.bound)!r}"]
    lines += ["%.17g" % v for v in params.logits.ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path) -> PolicyParams:
    lines = Path(path).read_text().split("\n")
    head = lines[0].split()
    if head[:2] != ["ncc-policy", "1"]:
        raise ValueError(f"{path}: not a policy checkpoint")
    n_keys, n_actions = int(head[2]), int(head[3])
    values = np.array([float(v) for v in lines[1:1 + n_keys * n_actions]])
    return PolicyParams(values.reshape(n_keys, n_actions), float(head[4]), float(head[5]))
