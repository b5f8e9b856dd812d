"""Two-timescale training of the policy against the level distribution.

``mode="theory"`` runs one REINFORCE SGD step per iteration on a static
buffer with a zero-sum score. ``mode="practical"`` swaps the x-step for a
pluggable RL subroutine (default: REINFORCE over epochs and minibatches),
accepts any score and refreshes the buffer with newly sampled levels before
the adversary step.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .adversary import AdversaryDist, adversary_gradient, ascent_step_y, entropy
from .analysis import phi_grad_norm, report_for
from .buffer import LevelBuffer, dynamic_update, init_buffer
from .env import MATRIX, LevelSpec, SpaceConfig, TrajectoryBatch, rollout_batch, sample_level_uniform
from .policy import PolicyParams, reinforce_from_batch, sgd_step_x, softmax
from .scoring import SCORE_KINDS, ZERO_SUM_KINDS, ScoreVector, batch_scores, score_learnability_general

LOG_COLUMNS = ("iter", "mean_return", "entropy_y", "max_y", "score_kind", "phi_grad_norm", "alpha_t",
               "buffer_generation")
SCORE_COLUMNS = ("iter", "level_id", "kind", "M", "score")
STREAMS = ("env", "levels", "estimator", "diagnostics")


class NumericalAbort(RuntimeError):
    """Raised when an update would produce non-finite parameters; carries the last good state."""

    def __init__(self, message: str, state: "TrainState"):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    mode: str = "practical"
    score: str = "regret"
    eta_x: float = 2.0
    eta_y: float = 0.1
    alpha: float = 0.05
    xi: float = 1e-6
    zeta: float = 0.05
    weight_bound: float = 10.0
    gamma: float = 0.99
    trajectories: int = 4
    batch_levels: int = 16
    buffer_size: int = 32
    new_levels: int = 8
    epochs: int = 1
    minibatches: int = 1
    iterations: int = 2000
    eval_every: int = 100
    alpha_anneal: bool = False
    baseline: str = "return-to-go"
    gae_lambda: float = 0.98
    regret_estimator: str = "oracle"
    shared_rollouts: bool = False
    cached_scores: bool = False
    track_best: bool = True
    theory_rates: bool = False
    epsilon: float = 0.05
    seed: int = 0
    space: SpaceConfig = field(default_factory=SpaceConfig)

    def validate(self) -> "TrainConfig":
        if self.mode not in ("theory", "practical"):
            raise ValueError(f"mode must be 'theory' or 'practical', got {self.mode!r}")
        if self.score not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {self.score!r}")
        if self.mode == "theory":
            if self.score not in ZERO_SUM_KINDS:
                raise ValueError(f"theory mode needs a zero-sum score {ZERO_SUM_KINDS}, got {self.score!r}")
            if self.epochs != 1 or self.minibatches != 1:
                raise ValueError("theory mode takes exactly one SGD step per iteration")
            if self.new_levels != 0:
                raise ValueError("theory mode keeps a static buffer (new_levels must be 0)")
            if self.alpha <= 0 or self.xi <= 0:
                raise ValueError("theory mode needs alpha > 0 and xi > 0")
        if self.eta_x < 0 or self.eta_y < 0:
            raise ValueError("step sizes must be non-negative")
        if self.trajectories < 1 or self.batch_levels < 1 or self.iterations < 0:
            raise ValueError("trajectories, batch_levels must be >= 1 and iterations >= 0")
        if self.score == "learnability" and self.trajectories < 2:
            raise ValueError("generalised learnability needs at least 2 trajectories per level")
        if self.alpha > 0 and self.xi <= 0:
            raise ValueError("entropy regularisation needs xi > 0")
        if self.mode == "theory" and not self.theory_rates and self.eta_x > 0 and self.eta_y / self.eta_x < 10:
            warnings.warn(f"two-timescale separation violated: eta_y / eta_x = {self.eta_y / self.eta_x:.3g} < 10")
        return self


@dataclass
class BestIterate:
    params: PolicyParams
    measure: float
    iteration: int


@dataclass
class TrainState:
    iteration: int
    params: PolicyParams
    adversary: AdversaryDist
    buffer: LevelBuffer
    rngs: dict
    config: TrainConfig
    best: BestIterate | None = None
    measures: list = field(default_factory=list)
    log: list = field(default_factory=list)
    score_log: list = field(default_factory=list)
    x0: PolicyParams | None = None

    @property
    def best_params(self) -> PolicyParams:
        return self.best.params if self.best is not None else self.params


def make_rngs(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def alpha_anneal(alpha0: float, t: int) -> float:
    if t < 0:
        raise ValueError("iteration index must be >= 0")
    return float(alpha0 / np.cbrt(t + 1.0))


def best_iterate_select(history: Sequence[float]) -> int:
    if len(history) == 0:
        raise ValueError("empty stationarity history")
    return int(np.argmin(np.asarray(history, dtype=float)))


# ------------------------------------------------------------ x subroutines

def reinforce_subroutine(params: PolicyParams, batch: TrajectoryBatch, config: TrainConfig,
                         rng: np.random.Generator) -> PolicyParams:
    """Default RL hook: REINFORCE SGD over ``epochs`` passes of ``minibatches`` splits."""
    for _ in range(config.epochs):
        if config.minibatches == 1:
            parts = [np.arange(batch.size)]
        else:
            parts = np.array_split(rng.permutation(batch.size), config.minibatches)
        for rows in parts:
            sub = batch if config.minibatches == 1 else batch.select(rows)
            grad = reinforce_from_batch(params, sub, config.baseline)
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError("non-finite policy gradient")
            params = sgd_step_x(params, grad, config.eta_x)
    return params


# ----------------------------------------------------- matrix-game counts

def _count_gradient(params: PolicyParams, payoffs: np.ndarray, counts: np.ndarray, baseline: str) -> np.ndarray:
    """REINFORCE estimate from per-level action counts of one-step episodes."""
    soft = softmax(params.logits[0])
    probs = (1 - params.zeta) * soft + params.zeta / params.n_actions
    M = counts.sum(axis=1, keepdims=True)
    if baseline == "advantage":
        total = (counts * payoffs).sum(axis=1, keepdims=True)
        psi = payoffs - np.where(M > 1, (total - payoffs) / np.maximum(M - 1, 1), 0.0)
    else:
        psi = payoffs
    w = ((1 - params.zeta) * soft / probs)[None, :] * counts * psi
    row = w.sum(axis=0) - w.sum() * soft
    return -(row / counts.sum())[None, :]


def _count_scores(payoffs: np.ndarray, counts: np.ndarray, kind: str, regret_estimator: str) -> np.ndarray:
    M = counts.sum(axis=1)
    mean = (counts * payoffs).sum(axis=1) / M
    if kind == "neg-return":
        return -mean
    if kind == "regret":
        if regret_estimator == "sampled":
            best = np.where(counts > 0, payoffs, -np.inf).max(axis=1)
        else:
            best = payoffs.max(axis=1)
        return best - mean
    if kind == "learnability":
        second = (counts * payoffs ** 2).sum(axis=1) / M
        R = np.stack([mean - np.sqrt(np.maximum(second - mean ** 2, 0)),
                      mean + np.sqrt(np.maximum(second - mean ** 2, 0))], axis=1)
        return score_learnability_general(R).values
    if kind == "pvl":
        return (counts * np.maximum(payoffs - mean[:, None], 0.0)).sum(axis=1) / M
    raise ValueError(f"score {kind!r} unsupported for count-based matrix games")


# ------------------------------------------------------------------- train

def _initial_state(config: TrainConfig, levels: Sequence[LevelSpec] | None) -> TrainState:
    rngs = make_rngs(config.seed)
    if levels is not None:
        buffer = LevelBuffer(list(levels))
    else:
        buffer = init_buffer(config.space, config.buffer_size, rngs["levels"])
    params = PolicyParams.for_level(buffer.levels[0], config.zeta, config.weight_bound)
    adversary = AdversaryDist.uniform(len(buffer), config.xi, config.alpha)
    adversary.y = np.asarray(adversary.y)
    return TrainState(0, params, adversary, buffer, rngs, config, x0=params.copy())


def resolve_theory_rates(config: TrainConfig, levels: Sequence[LevelSpec]) -> TrainConfig:
    """Replace step sizes and batch size by the theoretical orders (constants 1)."""
    params = PolicyParams.for_level(levels[0], config.zeta, config.weight_bound)
    rep = report_for(levels, params, config.xi, config.alpha, epsilon=config.epsilon)
    return replace(config, eta_x=rep.eta_x, eta_y=rep.eta_y, trajectories=rep.batch_m, theory_rates=True)


def _measure(state: TrainState, alpha_t: float) -> float | None:
    cfg = state.config
    if not cfg.track_best or cfg.score not in ZERO_SUM_KINDS or alpha_t <= 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return phi_grad_norm(state.params, state.buffer.levels, alpha_t, cfg.xi, cfg.gamma, cfg.score)


def _record(state: TrainState, t: int, alpha_t: float, mean_return: float, scores: ScoreVector | None):
    measure = _measure(state, alpha_t)
    if measure is not None:
        state.measures.append((t, measure))
        if state.best is None or measure < state.best.measure:
            state.best = BestIterate(state.params.copy(), measure, t)
    y = state.adversary.y
    state.log.append({
        "iter": t,
        "mean_return": mean_return,
        "entropy_y": entropy(y) if np.all(y > 0) else float("nan"),
        "max_y": float(y.max()),
        "score_kind": state.config.score,
        "phi_grad_norm": measure,
        "alpha_t": alpha_t,
        "buffer_generation": state.buffer.generation,
    })
    if scores is not None:
        for lv, m, s in zip(state.buffer.levels, scores.m, scores.values):
            state.score_log.append({"iter": t, "level_id": lv.id, "kind": scores.kind, "M": int(m), "score": float(s)})


def train(config: TrainConfig, levels: Sequence[LevelSpec] | None = None,
          train_rl: Callable | None = None, callback: Callable | None = None) -> TrainState:
    """Run NCC for ``config.iterations`` iterations and return the final state.

    ``levels`` fixes the (initial) buffer; otherwise it is sampled from
    ``config.space``. ``train_rl(params, batch, config, rng)`` replaces the
    practical-mode x-step.
    """
    config.validate()
    state = _initial_state(config, levels)
    if config.theory_rates:
        config = resolve_theory_rates(config, state.buffer.levels)
        state.config = config
    kind = state.buffer.levels[0].kind
    use_counts = kind == MATRIX and config.mode == "theory"
    if use_counts and config.score not in ("neg-return", "regret", "learnability", "pvl"):
        raise ValueError(f"score {config.score!r} unsupported on matrix games")
    train_rl = train_rl or reinforce_subroutine
    env_rng, lvl_rng, est_rng = state.rngs["env"], state.rngs["levels"], state.rngs["estimator"]
    M = config.trajectories
    cached = None

    for t in range(config.iterations):
        state.iteration = t
        alpha_t = alpha_anneal(config.alpha, t) if config.alpha_anneal else config.alpha
        state.adversary.alpha = alpha_t
        buf = state.buffer
        N = len(buf)
        y = state.adversary.y
        sampled = est_rng.choice(N, size=config.batch_levels, p=y)

        if use_counts:
            payoffs = np.array([lv.payoff for lv in buf.levels])
            probs = state.params.prob_table()[0]
            counts_buf = np.stack([env_rng.multinomial(M, probs) for _ in range(N)])
            if config.shared_rollouts:
                counts_x = counts_buf[sampled]
            else:
                counts_x = np.stack([env_rng.multinomial(M, probs) for _ in sampled])
            svals = _count_scores(payoffs, counts_buf, config.score, config.regret_estimator)
            scores = ScoreVector(svals, np.full(N, M), config.score)
            grad = _count_gradient(state.params, payoffs[sampled], counts_x, config.baseline)
            mean_return = float((counts_x * payoffs[sampled]).sum() / counts_x.sum())
            new_params = sgd_step_x(state.params, grad, config.eta_x) if np.all(np.isfinite(grad)) else None
        else:
            new_lv = [sample_level_uniform(config.space, lvl_rng) for _ in range(config.new_levels)] \
                if config.mode == "practical" else []
            score_levels = list(buf.levels)
            if config.cached_scores and cached is not None:
                score_levels = [buf.levels[i] for i in np.unique(sampled)]
            x_levels = [buf.levels[i] for i in sampled]
            if config.shared_rollouts:
                # x-step episodes double as score episodes for the sampled slots
                rest = [lv for i, lv in enumerate(score_levels) if lv.id not in {buf.levels[j].id for j in sampled}]
                plan = [lv for lv in x_levels for _ in range(M)] + [lv for lv in rest for _ in range(M)]
            else:
                plan = ([lv for lv in score_levels for _ in range(M)] + [lv for lv in x_levels for _ in range(M)])
            plan += [lv for lv in new_lv for _ in range(M)]
            batch = rollout_batch(state.params.prob_table(), plan, env_rng, config.gamma)
            if config.shared_rollouts:
                n_x = len(x_levels) * M
                xbatch = batch.select(np.arange(n_x))
                # score each level on its first M episodes
                first = {}
                for r in range(batch.size - len(new_lv) * M):
                    lid = batch.levels[batch.level_index[r]].id
                    first.setdefault(lid, [])
                    if len(first[lid]) < M:
                        first[lid].append(r)
                sbatch = batch.select([r for lv in score_levels for r in first[lv.id]])
            else:
                n_s = len(score_levels) * M
                sbatch = batch.select(np.arange(n_s))
                xbatch = batch.select(np.arange(n_s, n_s + len(x_levels) * M))
            newbatch = batch.select(np.arange(batch.size - len(new_lv) * M, batch.size))
            part = batch_scores(sbatch, score_levels, config.score, config.gamma, config.gae_lambda,
                                config.regret_estimator)
            if config.cached_scores and cached is not None:
                svals = cached.copy()
                pos = {lv.id: i for i, lv in enumerate(buf.levels)}
                for lv, v in zip(score_levels, part.values):
                    svals[pos[lv.id]] = v
                scores = ScoreVector(svals, np.full(N, M), config.score)
            else:
                scores = part
            mean_return = float(xbatch.returns().mean())
            try:
                if config.mode == "theory":
                    grad = reinforce_from_batch(state.params, xbatch, config.baseline)
                    new_params = sgd_step_x(state.params, grad, config.eta_x) if np.all(np.isfinite(grad)) else None
                else:
                    new_params = train_rl(state.params, xbatch, config, est_rng)
            except (FloatingPointError, ValueError) as exc:
                if "non-finite" not in str(exc):
                    raise
                new_params = None

        if t % config.eval_every == 0:
            _record(state, t, alpha_t, mean_return, scores)
        if new_params is None or not np.all(np.isfinite(new_params.logits)):
            raise NumericalAbort(f"non-finite policy update at iteration {t}", state)
        buf.scores = scores.values.copy()
        buf.staleness += 1

        y_cur = state.adversary.y
        s_tilde = scores.values
        if not use_counts and config.mode == "practical" and new_lv:
            new_scores = batch_scores(newbatch, new_lv, config.score, config.gamma, config.gae_lambda,
                                      config.regret_estimator).values
            state.buffer, y_cur, s_tilde = dynamic_update(buf, y_cur, new_lv, scores.values, new_scores, config.xi)
        grad_y = adversary_gradient(s_tilde, y_cur, alpha_t)
        if not np.all(np.isfinite(grad_y)):
            raise NumericalAbort(f"non-finite adversary gradient at iteration {t}", state)
        state.adversary.y = ascent_step_y(y_cur, grad_y, config.eta_y, config.xi)
        state.params = new_params
        cached = state.buffer.scores.copy() if config.cached_scores else None

    state.iteration = config.iterations
    final_alpha = alpha_anneal(config.alpha, config.iterations) if config.alpha_anneal else config.alpha
    measure = _measure(state, final_alpha)
    if measure is not None:
        state.measures.append((config.iterations, measure))
        if state.best is None or measure < state.best.measure:
            state.best = BestIterate(state.params.copy(), measure, config.iterations)
    return state


def write_csv(path, rows: Sequence[dict], columns: Sequence[str], prefix: dict | None = None) -> None:
    """Write ``rows`` with a fixed header; ``None``/NaN become empty fields."""
    prefix = prefix or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(prefix) + list(columns))
        for row in rows:
            out = list(prefix.values())
            for c in columns:
                v = row.get(c)
                if v is None or (isinstance(v, float) and math.isnan(v)):
                    out.append("")
                elif isinstance(v, float):
                    out.append(repr(float(v)))
                else:
                    out.append(v)
            w.writerow(out)
