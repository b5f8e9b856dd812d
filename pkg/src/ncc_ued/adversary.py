"""The level-distribution player.

The adversary holds a distribution ``y`` over the buffer slots, constrained to
the truncated simplex ``{y : sum(y) = 1, y_i >= xi}``, and ascends

    g(y) = y . s + alpha * H(y),    H(y) = -sum_i y_i log y_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp


@dataclass
class AdversaryDist:
    y: np.ndarray
    xi: float = 1e-6
    alpha: float = 0.05

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.xi < 0 or self.xi * self.y.size > 1 + 1e-12:
            raise ValueError(f"floor xi={self.xi} infeasible for {self.y.size} slots")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if abs(self.y.sum() - 1.0) > 1e-9 or self.y.min() < self.xi - 1e-12:
            raise ValueError("y is not on the truncated simplex")

    @classmethod
    def uniform(cls, n: int, xi: float = 1e-6, alpha: float = 0.05) -> "AdversaryDist":
        return cls(np.full(n, 1.0 / n), xi, alpha)


def entropy(y) -> float:
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("entropy needs strictly positive weights")
    return float(-(y * np.log(y)).sum())


def entropy_gradient(y) -> np.ndarray:
    return -np.log(y) - 1.0


def objective(y, scores, alpha: float) -> float:
    """Entropy-regularised expected score ``y . s + alpha * H(y)``."""
    y = np.asarray(y, dtype=float)
    value = float(y @ np.asarray(scores, dtype=float))
    return value + alpha * entropy(y) if alpha else value


def adversary_gradient(score_vec, y, alpha: float) -> np.ndarray:
    s = np.asarray(score_vec, dtype=float)
    y = np.asarray(y, dtype=float)
    if s.shape != y.shape:
        raise ValueError(f"score vector length {s.size} != distribution length {y.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite score vector")
    if alpha == 0:
        return s.copy()
    return s + alpha * entropy_gradient(y)


def project_simplex(v, mass: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{z >= 0, sum(z) = mass}`` by sort and threshold."""
    v = np.asarray(v, dtype=float)
    if mass < 0:
        raise ValueError("simplex mass must be non-negative")
    if mass == 0:
        return np.zeros_like(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - mass
    ind = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project_truncated_simplex(v, xi: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a non-finite point")
    n = v.size
    if xi < 0:
        raise ValueError("floor xi must be non-negative")
    if xi * n > 1 + 1e-12:
        raise ValueError(f"empty feasible set: xi * n = {xi * n} > 1")
    mass = max(1.0 - n * xi, 0.0)
    return project_simplex(v - xi, mass) + xi


def ascent_step_y(y, grad, eta_y: float, xi: float) -> np.ndarray:
    if eta_y < 0:
        raise ValueError("step size must be non-negative")
    return project_truncated_simplex(np.asarray(y) + eta_y * np.asarray(grad), xi)


@dataclass
class BestResponse:
    y: np.ndarray
    residual: float
    converged: bool
    iterations: int
    method: str
    residuals: list = field(default_factory=list, repr=False)


def gradient_mapping_residual(y, scores, alpha: float, xi: float) -> float:
    """``|| y - P(y + grad) ||``; zero exactly at the constrained maximiser."""
    g = adversary_gradient(scores, y, alpha)
    return float(np.linalg.norm(y - project_truncated_simplex(y + g, xi)))


def _kkt_response(s: np.ndarray, alpha: float, xi: float) -> np.ndarray:
    # y_i = max(xi, exp(s_i / alpha + c)) with c chosen so the weights sum to one
    n = s.size
    if xi * n >= 1 - 1e-15:
        return np.full(n, 1.0 / n)
    z = s / alpha

    def excess(c):
        return np.maximum(xi, np.exp(np.minimum(z + c, 700.0))).sum() - 1.0

    hi = -z.max()
    lo = np.log(1.0 - n * xi) - logsumexp(z) - 1.0
    c = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    y = np.maximum(xi, np.exp(z + c))
    free = y > xi
    y[free] *= (1.0 - xi * (~free).sum()) / y[free].sum()
    return y


def best_response(score_vec, alpha: float, xi: float, method: str = "auto",
                  tol: float = 1e-10, max_iter: int = 200_000) -> BestResponse:
    """Maximiser of ``y . s + alpha * H(y)`` over the truncated simplex.

    ``auto`` uses the softmax closed form when it respects the floor and the
    thresholded KKT solution otherwise. ``pga`` runs projected gradient
    ascent from the uniform point and records the residual path.
    """
    s = np.asarray(score_vec, dtype=float)
    if alpha <= 0:
        raise ValueError("best response needs alpha > 0 (strong concavity)")
    if method == "auto":
        y = np.exp(s / alpha - logsumexp(s / alpha))
        used = "softmax"
        if y.min() < xi:
            y = _kkt_response(s, alpha, xi)
            used = "kkt"
        res = gradient_mapping_residual(y, s, alpha, xi)
        return BestResponse(y, res, res <= max(tol, 1e-8), 0, used)
    if method != "pga":
        raise ValueError(f"unknown method {method!r}")
    n = s.size
    y_lb = max(xi, float(np.exp(s.min() / alpha - logsumexp(s / alpha))))
    eta = y_lb / alpha
    y = project_truncated_simplex(np.full(n, 1.0 / n), xi)
    residuals = []
    for it in range(1, max_iter + 1):
        g = adversary_gradient(s, y, alpha)
        y_new = project_truncated_simplex(y + eta * g, xi)
        r = float(np.linalg.norm(y_new - y)) / eta
        residuals.append(r)
        y = y_new
        if r <= tol:
            return BestResponse(y, r, True, it, "pga", residuals)
    return BestResponse(y, residuals[-1], False, max_iter, "pga", residuals)


# Checkpoint layout (text): slot count, xi, alpha, then one weight per line.
def save_adversary(path, dist: AdversaryDist) -> None:
    lines = [str(dist.y.size), repr(float(dist.xi)), repr(float(dist.alpha))]
    lines += ["%.17g" % v for v in dist.y]
    Path(path).write_text("\n".join(lines) + "\n")


def load_adversary(path) -> AdversaryDist:
    lines = Path(path).read_text().split()
    n = int(lines[0])
    return AdversaryDist(np.array([float(v) for v in lines[3:3 + n]]), float(lines[1]), float(lines[2]))
