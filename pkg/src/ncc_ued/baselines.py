"""Comparison curricula: domain randomisation, prioritised level replay and SFL."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .buffer import LevelBuffer
from .env import LevelSpec, SpaceConfig, rollout_batch, sample_level_uniform
from .policy import PolicyParams
from .scoring import batch_scores
from .trainer import TrainConfig, make_rngs, reinforce_subroutine

SAMPLER_KINDS = ("DR", "PLR", "SFL")


@dataclass
class SamplerConfig:
    kind: str = "DR"
    replay_prob: float = 0.5
    staleness_coeff: float = 0.3
    temperature: float = 0.3
    plr_score: str = "regret"
    sfl_batch_size: int = 64
    sfl_num_batches: int = 2
    sfl_top_k: int = 16
    sfl_rollouts: int = 4
    sfl_mix: float = 0.5
    sfl_refresh: int = 50

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler kind must be one of {SAMPLER_KINDS}, got {self.kind!r}")
        for name in ("replay_prob", "staleness_coeff", "sfl_mix"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if min(self.sfl_batch_size, self.sfl_num_batches, self.sfl_top_k, self.sfl_rollouts, self.sfl_refresh) < 1:
            raise ValueError("SFL sizes must be >= 1")


def dr_sampler(space: SpaceConfig, count: int, rng: np.random.Generator) -> list[LevelSpec]:
    if count < 1:
        raise ValueError("count must be >= 1")
    return [sample_level_uniform(space, rng) for _ in range(count)]


# ---------------------------------------------------------------- PLR

def plr_distribution(buffer: LevelBuffer, config: SamplerConfig) -> np.ndarray:
    """Replay distribution over buffer slots: rank priority mixed with staleness."""
    n = len(buffer)
    scores = np.asarray(buffer.scores, dtype=float)
    if np.any(np.isnan(scores)):
        return np.full(n, 1.0 / n)
    # rank 1 is the highest score; ties broken by level id
    order = sorted(range(n), key=lambda i: (-scores[i], buffer.levels[i].id))
    rank = np.empty(n)
    rank[order] = np.arange(1, n + 1)
    logw = -np.log(rank) / config.temperature
    p_score = np.exp(logw - logw.max())
    p_score /= p_score.sum()
    stale = np.asarray(buffer.staleness, dtype=float)
    p_stale = stale / stale.sum() if stale.sum() > 0 else np.full(n, 1.0 / n)
    return (1.0 - config.staleness_coeff) * p_score + config.staleness_coeff * p_stale


def plr_sampler(buffer: LevelBuffer, config: SamplerConfig, rng: np.random.Generator,
                space: SpaceConfig) -> tuple[LevelSpec, int | None]:
    """One PLR draw: ``(level, slot)`` on replay, ``(fresh level, None)`` otherwise."""
    # the coin is only flipped when both outcomes are possible, so replay_prob 0
    # consumes the stream exactly like domain randomisation
    replay = config.replay_prob == 1.0 or (config.replay_prob > 0.0 and rng.random() < config.replay_prob)
    if replay:
        p = plr_distribution(buffer, config)
        slot = int(rng.choice(len(buffer), p=p))
        return buffer.levels[slot], slot
    return sample_level_uniform(space, rng), None


# ---------------------------------------------------------------- SFL

def sfl_sampler(params: PolicyParams, space: SpaceConfig, config: SamplerConfig, rng: np.random.Generator,
                gamma: float, env_rng: np.random.Generator | None = None) -> list[LevelSpec]:
    """Top-k of ``num_batches * batch_size`` uniform levels by binary learnability."""
    env_rng = rng if env_rng is None else env_rng
    cand, seen = [], set()
    for _ in range(config.sfl_num_batches * config.sfl_batch_size):
        lv = sample_level_uniform(space, rng)
        if lv.id not in seen:
            seen.add(lv.id)
            cand.append(lv)
    plan = [lv for lv in cand for _ in range(config.sfl_rollouts)]
    batch = rollout_batch(params.prob_table(), plan, env_rng, gamma)
    scores = batch_scores(batch, cand, "learnability-binary", gamma).values
    order = sorted(range(len(cand)), key=lambda i: (-scores[i], cand[i].id))
    return [cand[i] for i in order[:config.sfl_top_k]]


# ----------------------------------------------------------- training

@dataclass
class BaselineResult:
    method: str
    params: PolicyParams
    log: list = field(default_factory=list)
    buffer: LevelBuffer | None = None


def _log_row(t, mean_return, config: TrainConfig, generation=0):
    return {"iter": t, "mean_return": mean_return, "entropy_y": None, "max_y": None,
            "score_kind": config.score, "phi_grad_norm": None, "alpha_t": None,
            "buffer_generation": generation}


def train_baseline(config: TrainConfig, sampler: SamplerConfig) -> BaselineResult:
    """Train with a baseline curriculum using the trainer's RL subroutine and rng streams."""
    rngs = make_rngs(config.seed)
    env_rng, lvl_rng, est_rng = rngs["env"], rngs["levels"], rngs["estimator"]
    space, M, B = config.space, config.trajectories, config.batch_levels
    probe = sample_level_uniform(space, np.random.default_rng(0))
    params = PolicyParams.for_level(probe, config.zeta, config.weight_bound)
    result = BaselineResult(sampler.kind, params)
    buffer = None
    top_set: list[LevelSpec] = []
    if sampler.kind == "PLR":
        from .buffer import init_buffer
        buffer = init_buffer(space, config.buffer_size, lvl_rng)
        result.buffer = buffer

    for t in range(config.iterations):
        slots = []
        if sampler.kind == "DR":
            levels = dr_sampler(space, B, lvl_rng)
        elif sampler.kind == "PLR":
            levels = []
            for _ in range(B):
                lv, slot = plr_sampler(buffer, sampler, lvl_rng, space)
                levels.append(lv)
                slots.append(slot)
        else:
            if t % sampler.sfl_refresh == 0:
                top_set = sfl_sampler(params, space, sampler, lvl_rng, config.gamma, env_rng)
            levels = [top_set[int(lvl_rng.integers(len(top_set)))] if lvl_rng.random() < sampler.sfl_mix
                      else sample_level_uniform(space, lvl_rng) for _ in range(B)]
        plan = [lv for lv in levels for _ in range(M)]
        batch = rollout_batch(params.prob_table(), plan, env_rng, config.gamma)
        mean_return = float(batch.returns().mean())
        if t % config.eval_every == 0:
            result.log.append(_log_row(t, mean_return, config, buffer.generation if buffer else 0))
        if sampler.kind == "PLR":
            _plr_update(buffer, levels, slots, batch, sampler, config)
        params = reinforce_subroutine(params, batch, config, est_rng)
    result.params = params
    return result


def _plr_update(buffer: LevelBuffer, levels, slots, batch, sampler: SamplerConfig, config: TrainConfig):
    unique, seen = [], set()
    for lv in levels:
        if lv.id not in seen:
            seen.add(lv.id)
            unique.append(lv)
    scores = dict(zip([lv.id for lv in unique],
                      batch_scores(batch, unique, sampler.plr_score, config.gamma, config.gae_lambda,
                                   config.regret_estimator).values))
    buffer.staleness += 1
    for lv, slot in zip(levels, slots):
        if slot is not None:
            buffer.scores[slot] = scores[lv.id]
            buffer.staleness[slot] = 0
    ids = set(buffer.ids)
    for lv, slot in zip(levels, slots):
        if slot is not None or lv.id in ids:
            continue
        cur = np.where(np.isnan(buffer.scores), -np.inf, buffer.scores)
        worst = int(np.argmin(cur))
        if scores[lv.id] > cur[worst]:
            ids.discard(buffer.levels[worst].id)
            buffer.levels[worst] = lv
            buffer.scores[worst] = scores[lv.id]
            buffer.staleness[worst] = 0
            buffer.generation += 1
            ids.add(lv.id)
