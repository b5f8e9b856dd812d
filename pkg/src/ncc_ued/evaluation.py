"""Held-out evaluation: solve rates, mean returns and worst-case (CVaR) curves."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import LevelSpec, is_solvable, rollout_batch, sample_level_uniform
from .policy import PolicyParams

DEFAULT_ALPHAS = (1.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass
class EvalReport:
    level_ids: list
    mean_return: np.ndarray
    solve_rate: np.ndarray
    method: str = ""
    seed: int = 0
    eval_set: str = ""
    cvar: dict = field(default_factory=dict)

    @property
    def aggregate_return(self) -> float:
        return float(np.mean(self.mean_return))

    @property
    def aggregate_solve_rate(self) -> float:
        return float(np.mean(self.solve_rate))

    def rows(self) -> list[dict]:
        return [{"method": self.method, "seed": self.seed, "level_id": lid, "mean_return": float(r),
                 "solve_rate": float(s)} for lid, r, s in zip(self.level_ids, self.mean_return, self.solve_rate)]

    def cvar_rows(self) -> list[dict]:
        return [{"method": self.method, "seed": self.seed, "alpha": a, "cvar": v} for a, v in self.cvar.items()]


def evaluate(params: PolicyParams, levels: Sequence[LevelSpec], episodes: int, gamma: float,
             rng: np.random.Generator, train_ids=None, method: str = "", seed: int = 0,
             eval_set: str = "") -> EvalReport:
    """Roll out ``episodes`` per level; rows are reported in level-id order."""
    if episodes < 1 or not levels:
        raise ValueError("need at least one level and one episode")
    if train_ids is not None:
        overlap = set(train_ids) & {lv.id for lv in levels}
        if overlap:
            warnings.warn(f"{len(overlap)} evaluation levels also appear in the training buffer")
    levels = sorted(levels, key=lambda lv: lv.id)
    plan = [lv for lv in levels for _ in range(episodes)]
    batch = rollout_batch(params.prob_table(), plan, rng, gamma)
    ret = batch.returns().reshape(len(levels), episodes)
    solved = batch.success().reshape(len(levels), episodes)
    return EvalReport([lv.id for lv in levels], ret.mean(axis=1), solved.mean(axis=1), method, seed, eval_set)


def cvar_from_values(values, ids, alphas=DEFAULT_ALPHAS) -> dict:
    """Mean of the worst ``ceil(a% * n)`` values; ties broken by level id."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("no levels to rank")
    order = sorted(range(n), key=lambda i: (values[i], ids[i]))
    ranked = values[order]
    out = {}
    for a in alphas:
        if not 0 < a <= 100:
            raise ValueError(f"alpha must lie in (0, 100], got {a}")
        k = max(1, math.ceil(a / 100.0 * n - 1e-9))
        out[float(a)] = float(ranked[:k].mean())
    return out


def cvar_eval(params: PolicyParams, candidates: Sequence[LevelSpec], alphas=DEFAULT_ALPHAS, episodes: int = 10,
              gamma: float = 0.99, rng: np.random.Generator | None = None, rank_by: str = "return",
              method: str = "", seed: int = 0) -> EvalReport:
    """CVaR curve over the solvable candidates, ranked by this policy's own results.

    ``rank_by="solve_rate"`` orders levels by solve rate instead of return;
    the reported quantity is the mean return over the selected levels.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    solvable = [lv for lv in candidates if is_solvable(lv)]
    if not solvable:
        raise ValueError("no solvable candidate levels")
    rep = evaluate(params, solvable, episodes, gamma, rng, method=method, seed=seed)
    if rank_by == "return":
        rep.cvar = cvar_from_values(rep.mean_return, rep.level_ids, alphas)
    elif rank_by == "solve_rate":
        order = sorted(range(len(rep.level_ids)),
                       key=lambda i: (rep.solve_rate[i], rep.mean_return[i], rep.level_ids[i]))
        vals = rep.mean_return[order]
        n = vals.size
        rep.cvar = {float(a): float(vals[:max(1, math.ceil(a / 100.0 * n - 1e-9))].mean()) for a in alphas}
    else:
        raise ValueError(f"rank_by must be 'return' or 'solve_rate', got {rank_by!r}")
    return rep


def normal_ci(values, z: float = 1.959963984540054) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval over seeds."""
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if v.size < 2:
        return mean, mean, mean
    half = z * float(v.std(ddof=1)) / math.sqrt(v.size)
    return mean, mean - half, mean + half


def heldout_levels(space, count: int, seed: int, exclude=(), max_draws: int | None = None) -> list[LevelSpec]:
    """``count`` distinct solvable levels from a dedicated seed, skipping ``exclude`` ids."""
    rng = np.random.default_rng(seed)
    seen = set(exclude)
    out = []
    max_draws = 1000 * count if max_draws is None else max_draws
    for _ in range(max_draws):
        lv = sample_level_uniform(space, rng)
        if lv.id in seen or not is_solvable(lv):
            continue
        seen.add(lv.id)
        out.append(lv)
        if len(out) == count:
            return out
    raise RuntimeError(f"only {len(out)} solvable held-out levels after {max_draws} draws")
