"""Per-level score functions used by the adversary and the baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .env import GRID, LevelSpec, Trajectory, TrajectoryBatch, compile_level, discounted_return

SCORE_KINDS = ("neg-return", "regret", "learnability", "learnability-binary", "pvl")
ZERO_SUM_KINDS = ("neg-return", "regret")


@dataclass
class ScoreVector:
    values: np.ndarray
    m: np.ndarray
    kind: str
    snapshot: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite score")

    def __len__(self) -> int:
        return self.values.size


def _returns(trajs, gamma: float) -> np.ndarray:
    out = [discounted_return(t, gamma) if isinstance(t, Trajectory) else float(t) for t in trajs]
    return np.asarray(out, dtype=float)


def score_neg_return(trajs, gamma: float) -> float:
    """Negative mean discounted return. ``trajs`` may also be plain returns."""
    r = _returns(trajs, gamma)
    if r.size == 0:
        raise ValueError("need at least one trajectory")
    return float(-r.mean())


@lru_cache(maxsize=65536)
def optimal_return_oracle(level: LevelSpec, gamma: float, tol: float = 1e-12) -> float:
    """Optimal discounted return from the start state within the level horizon.

    Value iteration on the deterministic level MDP; sweep ``k`` yields the
    optimal ``k``-step value, so stopping after ``horizon`` sweeps (or on a
    residual below ``tol``) is exact.
    """
    if level.kind != GRID:
        return float(max(level.payoff))
    c = compile_level(level)
    live = ~c.terminal
    V = np.zeros(c.trans.shape[0])
    for _ in range(c.horizon):
        V_new = (c.reward + gamma * live * V[c.trans]).max(axis=1)
        residual = np.abs(V_new - V).max()
        V = V_new
        if residual <= tol:
            break
    return float(V[c.start])


def score_regret(trajs, level: LevelSpec, gamma: float, estimator: str = "oracle") -> float:
    r = _returns(trajs, gamma)
    if r.size == 0:
        raise ValueError("need at least one trajectory")
    if estimator == "oracle":
        best = optimal_return_oracle(level, gamma)
    elif estimator == "sampled":
        best = float(r.max())
    else:
        raise ValueError(f"unknown regret estimator {estimator!r}")
    return best - float(r.mean())


def score_learnability_binary(outcomes) -> float:
    """``p (1 - p)`` for the empirical success rate ``p``."""
    o = np.asarray(outcomes, dtype=float)
    if o.size == 0:
        raise ValueError("need at least one outcome")
    if not np.all((o == 0) | (o == 1)):
        raise ValueError("outcomes must be binary")
    p = o.mean()
    return float(p * (1.0 - p))


def score_learnability_general(per_level_returns) -> ScoreVector:
    """Return spread weighted by a Gaussian density around the buffer mean.

    ``per_level_returns`` is ``(n_levels, M)``. Population moments are used
    throughout. If every level has the same mean the Gaussian degenerates and
    the raw per-level standard deviation is returned instead.
    """
    R = np.asarray(per_level_returns, dtype=float)
    if R.ndim != 2 or R.shape[1] < 2:
        raise ValueError("need a (levels, M>=2) array of returns")
    mu_l = R.mean(axis=1)
    var_l = np.maximum((R ** 2).mean(axis=1) - mu_l ** 2, 0.0)
    sd_l = np.sqrt(var_l)
    mu = mu_l.mean()
    var = max((mu_l ** 2).mean() - mu ** 2, 0.0)
    if var <= 0.0:
        values = sd_l
    else:
        values = sd_l * np.exp(-(mu_l - mu) ** 2 / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return ScoreVector(values, np.full(R.shape[0], R.shape[1]), "learnability")


def gae(rewards, values, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates for one episode; value after the end is 0."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    adv = np.zeros_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        nxt = values[t + 1] if t + 1 < values.size else 0.0
        delta = rewards[t] + gamma * nxt - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


def score_pvl(trajs, value_estimates, gamma: float, gae_lambda: float) -> float:
    """Mean over all steps of the positive part of the GAE advantage."""
    total, steps = 0.0, 0
    if len(trajs) != len(value_estimates):
        raise ValueError("one value sequence per trajectory required")
    for traj, values in zip(trajs, value_estimates):
        rewards = traj.rewards if isinstance(traj, Trajectory) else traj
        if len(values) != len(rewards):
            raise ValueError(f"value estimates ({len(values)}) misaligned with trajectory ({len(rewards)})")
        adv = gae(rewards, values, gamma, gae_lambda)
        total += np.maximum(adv, 0.0).sum()
        steps += adv.size
    return float(total / steps) if steps else 0.0


# ------------------------------------------------------------ batch scoring

def _group_rows(batch: TrajectoryBatch, levels: Sequence[LevelSpec]) -> list[np.ndarray]:
    pos = {lv.id: i for i, lv in enumerate(batch.levels)}
    groups = []
    for lv in levels:
        if lv.id not in pos:
            raise ValueError(f"no trajectories for level {lv.id}")
        groups.append(np.flatnonzero(batch.level_index == pos[lv.id]))
    return groups


def batch_scores(batch: TrajectoryBatch, levels: Sequence[LevelSpec], kind: str, gamma: float,
                 gae_lambda: float = 0.98, regret_estimator: str = "oracle") -> ScoreVector:
    """Score every level in ``levels`` from its trajectories in ``batch``."""
    if kind not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}; expected one of {SCORE_KINDS}")
    groups = _group_rows(batch, levels)
    returns = batch.returns()
    m = np.array([g.size for g in groups])
    if kind == "learnability":
        if len(set(m.tolist())) != 1:
            raise ValueError("generalised learnability needs the same M on every level")
        return score_learnability_general(np.stack([returns[g] for g in groups]))
    values = np.empty(len(levels))
    if kind == "neg-return":
        for i, g in enumerate(groups):
            values[i] = score_neg_return(returns[g], gamma)
    elif kind == "regret":
        for i, (lv, g) in enumerate(zip(levels, groups)):
            values[i] = score_regret(returns[g], lv, gamma, regret_estimator)
    elif kind == "learnability-binary":
        success = batch.success()
        for i, g in enumerate(groups):
            values[i] = score_learnability_binary(success[g])
    else:
        rtg = batch.returns_to_go()
        for i, g in enumerate(groups):
            # Monte-Carlo critic: mean return-to-go of the level's episodes per step
            v = rtg[g].sum(axis=0) / np.maximum(batch.mask[g].sum(axis=0), 1)
            lengths = batch.mask[g].sum(axis=1)
            values[i] = score_pvl([batch.rewards[r, :n] for r, n in zip(g, lengths)],
                                  [v[:n] for n in lengths], gamma, gae_lambda)
    return ScoreVector(values, m, kind)
