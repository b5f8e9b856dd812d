"""Fixed-capacity level buffer with top-k replacement."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .adversary import project_truncated_simplex
from .env import LevelSpec, SpaceConfig, level_from_line, level_to_line, sample_level_uniform


@dataclass
class LevelBuffer:
    levels: list
    scores: np.ndarray = None
    staleness: np.ndarray = None
    generation: int = 0

    def __post_init__(self):
        n = len(self.levels)
        if n < 2:
            raise ValueError(f"buffer capacity must be >= 2, got {n}")
        if self.scores is None:
            self.scores = np.full(n, np.nan)
        if self.staleness is None:
            self.staleness = np.zeros(n, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def ids(self) -> list[int]:
        return [lv.id for lv in self.levels]


def init_buffer(space: SpaceConfig, n: int, rng: np.random.Generator, max_tries: int | None = None) -> LevelBuffer:
    if n < 2:
        raise ValueError(f"buffer capacity must be >= 2, got {n}")
    max_tries = 100 * n if max_tries is None else max_tries
    levels, seen = [], set()
    for _ in range(max_tries):
        lv = sample_level_uniform(space, rng)
        if lv.id not in seen:
            seen.add(lv.id)
            levels.append(lv)
            if len(levels) == n:
                return LevelBuffer(levels)
    raise RuntimeError(f"only {len(levels)} distinct levels after {max_tries} draws, wanted {n}")


def dynamic_update(buffer: LevelBuffer, y, new_levels: Sequence[LevelSpec], scores, new_scores, xi: float = 0.0):
    """Keep the ``|buffer|`` best-scoring levels of the union of old and new.

    Incumbents win ties, then lower level ids. Newcomers take over the slots
    (and weights) of the levels they displace, filling vacated slots in slot
    order with the best newcomer first. Returns the new buffer, the weights
    re-projected onto the truncated simplex, and the merged score vector.
    """
    scores = np.asarray(scores, dtype=float)
    new_scores = np.asarray(new_scores, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(buffer)
    if scores.size != n or y.size != n:
        raise ValueError("scores and weights must align with the buffer")
    if new_scores.size != len(new_levels):
        raise ValueError("new scores must align with the new levels")
    present = set(buffer.ids)
    cand = []  # (-score, incumbent flag, id, source, index)
    for i, lv in enumerate(buffer.levels):
        cand.append((-scores[i], 0, lv.id, "old", i))
    for j, lv in enumerate(new_levels):
        if lv.id in present:
            continue
        present.add(lv.id)
        cand.append((-new_scores[j], 1, lv.id, "new", j))
    if len(cand) == n:
        return (LevelBuffer(list(buffer.levels), scores.copy(), buffer.staleness.copy(), buffer.generation),
                project_truncated_simplex(y, xi), scores.copy())
    cand.sort(key=lambda c: (c[0], c[1], c[2]))
    keep = cand[:n]
    kept_old = {c[4] for c in keep if c[3] == "old"}
    newcomers = [c[4] for c in keep if c[3] == "new"]
    vacated = [i for i in range(n) if i not in kept_old]
    levels = list(buffer.levels)
    merged = scores.copy()
    staleness = buffer.staleness.copy()
    for slot, j in zip(vacated, newcomers):
        levels[slot] = new_levels[j]
        merged[slot] = new_scores[j]
        staleness[slot] = 0
    generation = buffer.generation + (1 if newcomers else 0)
    out = LevelBuffer(levels, merged.copy(), staleness, generation)
    return out, project_truncated_simplex(y, xi), merged


# Snapshot layout: "<N> <generation>" then one level line per slot followed by
# "<score> <weight>" as two extra whitespace-separated columns.
def save_buffer(path, buffer: LevelBuffer, y=None) -> None:
    y = np.full(len(buffer), 1.0 / len(buffer)) if y is None else np.asarray(y)
    lines = [f"{len(buffer)} {buffer.generation}"]
    for lv, s, w in zip(buffer.levels, buffer.scores, y):
        lines.append(f"{level_to_line(lv)} {float(s)!r} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_buffer(path):
    lines = Path(path).read_text().splitlines()
    n, generation = (int(v) for v in lines[0].split())
    levels, scores, weights = [], [], []
    for ln in lines[1:1 + n]:
        parts = ln.split()
        levels.append(level_from_line(" ".join(parts[:-2])))
        scores.append(float(parts[-2]))
        weights.append(float(parts[-1]))
    return LevelBuffer(levels, np.array(scores), None, generation), np.array(weights)
