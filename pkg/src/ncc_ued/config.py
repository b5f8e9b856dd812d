"""Experiment configuration: an INI file with four sections.

    [environment]  kind, width, height, wall_prob, horizon, n_actions, payoff_low, payoff_high, gamma
    [method]       name and the trainer / sampler hyperparameters
    [run]          iterations, seeds, eval cadence, evaluation set sizes, workers
    [analysis]     epsilon, constants

Every key has a default; unknown sections or keys are rejected with the
offending line number. ``dump_config`` writes the fully resolved config,
which is itself a valid input.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .baselines import SamplerConfig
from .env import SpaceConfig
from .trainer import TrainConfig

METHODS = {"NCC-Reg": "regret", "NCC-Learn": "learnability", "NCC-NegJ": "neg-return", "NCC-PVL": "pvl",
           "DR": None, "PLR": None, "SFL": None}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    iterations: int = 2000
    seeds: tuple = (0,)
    eval_every: int = 100
    eval_levels: int = 200
    eval_episodes: int = 10
    eval_seed: int = 12345
    cvar_alphas: tuple = (1.0, 5.0, 10.0, 20.0, 50.0, 100.0)
    workers: int = 1
    track_best: bool = False


@dataclass
class AnalysisConfig:
    epsilon: float = 0.05
    constants: bool = True


@dataclass
class ExperimentConfig:
    method: str = "NCC-Reg"
    gamma: float = 0.99
    space: SpaceConfig = field(default_factory=lambda: SpaceConfig(kind="grid-maze"))
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    run: RunConfig = field(default_factory=RunConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)

    @property
    def is_ncc(self) -> bool:
        return self.method.startswith("NCC")

    def train_config(self, seed: int) -> TrainConfig:
        return replace(self.train, seed=seed, gamma=self.gamma, space=self.space,
                       iterations=self.run.iterations, eval_every=self.run.eval_every,
                       track_best=self.run.track_best, epsilon=self.analysis.epsilon,
                       score=METHODS.get(self.method) or self.train.score)


_ENV_KEYS = ("kind", "width", "height", "wall_prob", "horizon", "n_actions", "payoff_low", "payoff_high")
_TRAIN_KEYS = ("mode", "eta_x", "eta_y", "alpha", "xi", "zeta", "weight_bound", "trajectories", "batch_levels",
               "buffer_size", "new_levels", "epochs", "minibatches", "alpha_anneal", "baseline", "gae_lambda",
               "regret_estimator", "shared_rollouts", "cached_scores", "theory_rates")
_SAMPLER_KEYS = tuple(f.name for f in fields(SamplerConfig) if f.name != "kind")
_RUN_KEYS = tuple(f.name for f in fields(RunConfig))
_ANALYSIS_KEYS = tuple(f.name for f in fields(AnalysisConfig))
SCHEMA = {
    "environment": _ENV_KEYS + ("gamma",),
    "method": ("name",) + _TRAIN_KEYS + _SAMPLER_KEYS,
    "run": _RUN_KEYS,
    "analysis": _ANALYSIS_KEYS,
}


def _line_of(text: str, section: str, key: str | None) -> int:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return no
    return 0


def _convert(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if isinstance(default, int) or default is None:
        if default is None and value.strip().lower() in ("", "none", "auto"):
            return None
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        items = [v for v in re.split(r"[,\s]+", value.strip()) if v]
        kind = type(default[0]) if default else int
        return tuple(kind(v) for v in items)
    return value.strip()


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{_line_of(text, section, None)}: unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}:{_line_of(text, section, key)}: unknown key '{key}' in [{section}]")
    cfg = ExperimentConfig()

    def pull(section, key, default):
        if not cp.has_option(section, key):
            return default
        try:
            return _convert(cp.get(section, key), default)
        except ValueError as exc:
            raise ConfigError(f"{source}:{_line_of(text, section, key)}: bad value for '{key}': {exc}") from exc

    env = {k: pull("environment", k, getattr(cfg.space, k)) for k in _ENV_KEYS}
    gamma = pull("environment", "gamma", cfg.gamma)
    method = pull("method", "name", cfg.method)
    if method not in METHODS:
        raise ConfigError(f"{source}:{_line_of(text, 'method', 'name')}: unknown method {method!r}; "
                          f"expected one of {sorted(METHODS)}")
    train = {k: pull("method", k, getattr(cfg.train, k)) for k in _TRAIN_KEYS}
    sampler = {k: pull("method", k, getattr(cfg.sampler, k)) for k in _SAMPLER_KEYS}
    run = {k: pull("run", k, getattr(cfg.run, k)) for k in _RUN_KEYS}
    analysis = {k: pull("analysis", k, getattr(cfg.analysis, k)) for k in _ANALYSIS_KEYS}
    try:
        space = SpaceConfig(**env)
        kind = method if method in ("DR", "PLR", "SFL") else "DR"
        out = ExperimentConfig(method, gamma, space, replace(cfg.train, **train),
                               SamplerConfig(kind=kind, **sampler), RunConfig(**run), AnalysisConfig(**analysis))
        if not run["seeds"]:
            raise ValueError("at least one seed required")
        if out.is_ncc:
            out.train_config(run["seeds"][0]).validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: invalid configuration: {exc}") from exc
    return out


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    return parse_config(text, str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully resolved config text; parsing it back yields an equal config."""
    lines = ["[environment]"]
    lines += [f"{k} = {_fmt(getattr(cfg.space, k))}" for k in _ENV_KEYS]
    lines += [f"gamma = {_fmt(cfg.gamma)}", "", "[method]", f"name = {cfg.method}"]
    lines += [f"{k} = {_fmt(getattr(cfg.train, k))}" for k in _TRAIN_KEYS]
    lines += [f"{k} = {_fmt(getattr(cfg.sampler, k))}" for k in _SAMPLER_KEYS]
    lines += ["", "[run]"] + [f"{k} = {_fmt(getattr(cfg.run, k))}" for k in _RUN_KEYS]
    lines += ["", "[analysis]"] + [f"{k} = {_fmt(getattr(cfg.analysis, k))}" for k in _ANALYSIS_KEYS]
    return "\n".join(lines) + "\n"
