"""Convergence constants and empirical checks of the min-max theory.

Everything here is read-only with respect to training state. Exact
quantities come from dynamic programming over the (deterministic) level MDPs,
see :func:`ncc_ued.policy.expected_return_and_gradient`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .adversary import (
    adversary_gradient,
    best_response,
    objective,
    project_truncated_simplex,
)
from .env import LevelSpec, TrajectoryBatch, return_bound, rollout_batch
from .policy import (
    PolicyParams,
    _psi,
    expected_return_and_gradient,
    prob_hessian,
    prob_jacobian,
    softmax,
)
from .scoring import ZERO_SUM_KINDS, optimal_return_oracle


# ------------------------------------------------------------------ constants

@dataclass(frozen=True)
class ConstantsReport:
    n_levels: int
    horizon: int
    r_star: float
    lipschitz: float
    smoothness: float
    zeta: float
    xi: float
    alpha: float
    delta: float
    epsilon: float
    sigma2: float
    ell: float
    kappa: float
    diameter: float
    eta_x: float
    eta_y: float
    batch_m: int
    iteration_bound: float

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        width = max(len(k) for k in self.as_dict())
        return "\n".join(f"{k:<{width}}  {v:.10g}" if isinstance(v, float) else f"{k:<{width}}  {v}"
                         for k, v in self.as_dict().items())

    def to_csv(self) -> str:
        d = self.as_dict()
        return "name,value\n" + "".join(f"{k},{float(v)!r}\n" if isinstance(v, float) else f"{k},{v}\n" for k, v in d.items())


def variance_bound(n_levels, horizon, r_star, lipschitz, zeta) -> float:
    return 4.0 * r_star ** 2 * (n_levels + horizon ** 2 * lipschitz ** 2 / zeta ** 2)


def smoothness_constant(horizon, r_star, lipschitz, smoothness, zeta, xi, alpha) -> float:
    T, L, K = horizon, lipschitz, smoothness
    return T * r_star / zeta * (T * L ** 2 + K + L ** 2 / zeta + 2 * T * L) + alpha / xi


def constants_report(n_levels: int, horizon: int, r_star: float, lipschitz: float, smoothness: float,
                     zeta: float, xi: float, alpha: float, delta: float = 1.0, epsilon: float = 0.05,
                     theta_x: float = 1.0, theta_y: float = 1.0, theta_m: float = 1.0) -> ConstantsReport:
    """Variance and smoothness constants, step sizes, batch size and iteration bound.

    ``theta_*`` are the unspecified constants in front of the asymptotic step
    size and batch size orders.
    """
    if alpha <= 0 or xi <= 0:
        raise ValueError("constants need alpha > 0 and xi > 0 (smoothness is unbounded otherwise)")
    if lipschitz < 0 or smoothness < 0:
        raise ValueError("policy constants must be nonnegative")
    for name, v in (("n_levels", n_levels), ("horizon", horizon), ("r_star", r_star), ("zeta", zeta),
                    ("delta", delta), ("epsilon", epsilon)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    sigma2 = variance_bound(n_levels, horizon, r_star, lipschitz, zeta)
    ell = smoothness_constant(horizon, r_star, lipschitz, smoothness, zeta, xi, alpha)
    m = max(1.0, theta_m * sigma2 * ell / (alpha * epsilon ** 2))
    bound = delta * ell ** 3 / (alpha ** 2 * epsilon ** 2) + 2 * ell ** 3 / (alpha * epsilon ** 4)
    return ConstantsReport(
        n_levels=int(n_levels), horizon=int(horizon), r_star=float(r_star), lipschitz=float(lipschitz),
        smoothness=float(smoothness), zeta=float(zeta), xi=float(xi), alpha=float(alpha),
        delta=float(delta), epsilon=float(epsilon), sigma2=sigma2, ell=ell, kappa=ell / alpha,
        diameter=math.sqrt(2.0), eta_x=theta_x * alpha ** 2 / ell ** 3, eta_y=theta_y / ell,
        batch_m=int(math.ceil(m)), iteration_bound=bound,
    )


def softmax_constants(mix: float) -> tuple[float, float]:
    """Analytic Lipschitz and smoothness bounds of ``pi(a|o)`` in the logits.

    ``||grad p_a|| <= sqrt(2) p_a (1 - p_a) <= sqrt(2)/4`` and the Hessian of
    ``p_a`` is ``p_a`` times a difference of two PSD matrices with norms at
    most ``2 (1 - p_a)^2`` and ``1/2``, giving ``1/2`` overall.
    """
    return (1.0 - mix) * math.sqrt(2.0) / 4.0, (1.0 - mix) / 2.0


def report_for(levels: Sequence[LevelSpec], params: PolicyParams, xi: float, alpha: float,
               delta: float | None = None, epsilon: float = 0.05, **theta) -> ConstantsReport:
    """Constants report for a buffer and the tabular policy family."""
    L, K = softmax_constants(params.zeta)
    r_star = max(return_bound(lv) for lv in levels)
    horizon = max(lv.horizon for lv in levels)
    if delta is None:
        # Phi ranges over at most 2 R* plus the entropy span
        delta = 2.0 * r_star + alpha * math.log(len(levels))
    return constants_report(len(levels), horizon, r_star, L, K, params.floor, xi, alpha, delta, epsilon, **theta)


@dataclass
class PolicyConstants:
    lipschitz_hat: float
    smoothness_hat: float
    r_star_hat: float
    zeta_hat: float
    lipschitz: float
    smoothness: float
    zeta: float
    hessian_fd_error: float


def measure_policy_constants(n_actions: int, mix: float, bound: float, sample_count: int,
                             rng: np.random.Generator, levels: Sequence[LevelSpec] = (),
                             fd_step: float = 1e-4) -> PolicyConstants:
    """Probe Lipschitz/smoothness constants of one softmax row at random logits.

    Half the samples are drawn from the full weight box, half from ``[-1, 1]``
    where the softmax is least saturated.
    """
    L_hat = K_hat = fd_err = 0.0
    zeta_hat = 1.0
    h = fd_step
    for i in range(sample_count):
        scale = bound if i % 2 == 0 else 1.0
        x = rng.uniform(-scale, scale, n_actions)
        jac = prob_jacobian(x, mix)
        L_hat = max(L_hat, float(np.linalg.norm(jac, axis=1).max()))
        probs = (1 - mix) * softmax(x) + mix / n_actions
        zeta_hat = min(zeta_hat, float(probs.min()))
        for a in range(n_actions):
            def p(v):
                return (1 - mix) * softmax(v)[a] + mix / n_actions
            H = np.empty((n_actions, n_actions))
            for r in range(n_actions):
                for c in range(n_actions):
                    er = np.zeros(n_actions); er[r] = h
                    ec = np.zeros(n_actions); ec[c] = h
                    H[r, c] = (p(x + er + ec) - p(x + er - ec) - p(x - er + ec) + p(x - er - ec)) / (4 * h * h)
            K_hat = max(K_hat, float(np.linalg.norm(H, 2)))
            fd_err = max(fd_err, float(np.abs(H - prob_hessian(x, mix, a)).max()))
    L, K = softmax_constants(mix)
    r_star = max((return_bound(lv) for lv in levels), default=float("nan"))
    return PolicyConstants(L_hat, K_hat, r_star, zeta_hat, L, K, mix / n_actions, fd_err)


# --------------------------------------------------------- exact objectives

def exact_scores(params: PolicyParams, levels: Sequence[LevelSpec], gamma: float, kind: str):
    """Exact score vector and its per-level logit gradients for zero-sum scores."""
    if kind not in ZERO_SUM_KINDS:
        raise ValueError(f"exact scores only exist for zero-sum kinds {ZERO_SUM_KINDS}, got {kind!r}")
    s = np.empty(len(levels))
    grads = np.empty((len(levels),) + params.logits.shape)
    for i, lv in enumerate(levels):
        J, g = expected_return_and_gradient(params, lv, gamma)
        s[i] = -J if kind == "neg-return" else optimal_return_oracle(lv, gamma) - J
        grads[i] = -g
    return s, grads


def f_value(params: PolicyParams, y, levels, alpha: float, gamma: float, kind: str = "regret") -> float:
    s, _ = exact_scores(params, levels, gamma, kind)
    return objective(y, s, alpha)


def phi(params: PolicyParams, levels, alpha: float, xi: float, gamma: float, kind: str = "regret"):
    """``(Phi(x), grad Phi(x), best-response result)`` via the envelope property."""
    s, grads = exact_scores(params, levels, gamma, kind)
    br = best_response(s, alpha, xi)
    if not br.converged:
        warnings.warn(f"inner maximisation did not converge (residual {br.residual:.3g})")
    value = objective(br.y, s, alpha)
    grad = np.tensordot(br.y, grads, axes=1)
    return value, grad, br


def phi_grad_norm(params: PolicyParams, levels, alpha: float, xi: float, gamma: float,
                  kind: str = "regret") -> float:
    return float(np.linalg.norm(phi(params, levels, alpha, xi, gamma, kind)[1]))


def _ball_simplex_linear_max(g: np.ndarray, y: np.ndarray, xi: float, radius: float = 1.0,
                             max_steps: int = 10_000, tol: float = 1e-13):
    """``max <g, y' - y>`` over the truncated simplex intersected with a ball around ``y``.

    The maximiser lies on the projected-gradient path ``P(y + t g)``, whose
    distance from ``y`` is nondecreasing in ``t``; the longest step that stays
    inside the ball is found by bisection on ``log t``.
    """
    # feasible moves sum to zero, so a constant shift of g changes nothing and
    # centring it keeps y + t * g from swamping y at large t
    g = g - g.mean()

    def point(t):
        return project_truncated_simplex(y + t * g, xi)

    far = point(1e12)
    if np.linalg.norm(far - y) <= radius:
        return max(float(g @ (far - y)), 0.0), True
    lo, hi = -30.0, 12.0 * math.log(10)
    converged = False
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(point(math.exp(mid)) - y) <= radius:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            converged = True
            break
    return max(float(g @ (point(math.exp(lo)) - y)), 0.0), converged


def fo_ne_residual(params: PolicyParams, y, levels, alpha: float, xi: float, gamma: float,
                   kind: str = "regret") -> tuple[float, float]:
    """Residuals of both first-order Nash conditions at ``(x, y)``."""
    y = np.asarray(y, dtype=float)
    s, grads = exact_scores(params, levels, gamma, kind)
    rx = float(np.linalg.norm(np.tensordot(y, grads, axes=1)))
    g = adversary_gradient(s, y, alpha)
    ry, ok = _ball_simplex_linear_max(g, y, xi)
    if not ok:
        warnings.warn("first-order NE inner solver hit its step cap")
    return rx, ry


def estimate_delta(x0: PolicyParams, x_best: PolicyParams, levels, alpha, xi, gamma, kind="regret") -> float:
    """Lower bound ``Phi(x0) - Phi(x_best)`` on the initial optimality gap."""
    return phi(x0, levels, alpha, xi, gamma, kind)[0] - phi(x_best, levels, alpha, xi, gamma, kind)[0]


# ------------------------------------------------------------ Monte Carlo

def per_row_gradients(params: PolicyParams, batch: TrajectoryBatch, rows_group: np.ndarray, n_groups: int,
                      baseline: str = "return-to-go") -> np.ndarray:
    """Sum of ``grad log pi * Psi`` per group of trajectories, shape ``(n_groups, keys, A)``."""
    psi = _psi(batch, baseline)
    soft = params.softmax_table()
    probs = params.prob_table()
    m = batch.mask
    grp = np.broadcast_to(rows_group[:, None], m.shape)[m]
    k = batch.keys[m]
    a = batch.actions[m]
    w = (1.0 - params.zeta) * soft[k, a] / probs[k, a] * psi[m]
    n_keys, A = params.logits.shape
    size = n_groups * n_keys * A
    base = grp * (n_keys * A) + k * A
    out = np.bincount(base + a, weights=w, minlength=size)
    for b in range(A):
        out -= np.bincount(base + b, weights=w * soft[k, b], minlength=size)
    return out.reshape(n_groups, n_keys, A)


@dataclass
class VarianceCheck:
    empirical: float
    bound: float
    passed: bool
    f_part: float
    s_part: float


def estimator_variance_check(params: PolicyParams, y, levels: Sequence[LevelSpec], samples: int,
                             rng: np.random.Generator, gamma: float, alpha: float, xi: float,
                             kind: str = "regret", chunk: int = 256) -> VarianceCheck:
    """Monte-Carlo ``E||H_hat - H||^2`` of the ``M = 1`` estimator against exact ``H``."""
    y = np.asarray(y, dtype=float)
    N = len(levels)
    s_exact, grads = exact_scores(params, levels, gamma, kind)
    F = np.tensordot(y, grads, axes=1)
    f_sq = s_sq = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        # agent estimator: N level draws from y, one episode each
        draws = rng.choice(N, size=(n, N), p=y)
        batch = rollout_batch(params.prob_table(), [levels[i] for i in draws.ravel()], rng, gamma)
        g = per_row_gradients(params, batch, np.repeat(np.arange(n), N), n)
        F_hat = -g / N
        f_sq += float(((F_hat - F) ** 2).sum())
        # adversary estimator: one episode on every buffer level
        sb = rollout_batch(params.prob_table(), list(levels) * n, rng, gamma)
        R = sb.returns().reshape(n, N)
        if kind == "neg-return":
            s_hat = -R
        else:
            s_hat = np.array([optimal_return_oracle(lv, gamma) for lv in levels])[None, :] - R
        s_sq += float(((s_hat - s_exact) ** 2).sum())
        done += n
    report = report_for(levels, params, xi, alpha)
    emp = (f_sq + s_sq) / samples
    return VarianceCheck(emp, report.sigma2, emp <= report.sigma2, f_sq / samples, s_sq / samples)


def directional_curvature(params: PolicyParams, y, levels: Sequence[LevelSpec], dx, dy, alpha: float,
                          gamma: float, kind: str = "regret", step: float = 1e-3) -> float:
    """Signed central second difference of ``f`` along the direction ``(dx, dy)``."""
    y = np.asarray(y, dtype=float)
    dx = np.asarray(dx, dtype=float).ravel()
    dy = np.asarray(dy, dtype=float)
    shape = params.logits.shape

    def f(xflat, yy):
        p = PolicyParams(xflat.reshape(shape), params.zeta, np.inf)
        return f_value(p, yy, levels, alpha, gamma, kind)

    x0 = params.logits.ravel()
    h = step
    if np.any(dy):
        # keep y +- h dy strictly positive so the entropy stays defined
        h = min(h, 0.5 * y.min() / np.abs(dy).max())
    return (f(x0 + h * dx, y + h * dy) - 2 * f(x0, y) + f(x0 - h * dx, y - h * dy)) / (h * h)


def smoothness_probe(params: PolicyParams, y, levels: Sequence[LevelSpec], directions: int,
                     rng: np.random.Generator, alpha: float, xi: float, gamma: float,
                     kind: str = "regret", step: float = 1e-3, block: str = "joint"):
    """Largest finite-difference directional curvature of ``f`` against ``ell``.

    ``block`` restricts the random unit directions to ``"x"``, ``"y"`` or
    both (``"joint"``). Returns ``(max_curvature, ell, passed)``.
    """
    y = np.asarray(y, dtype=float)
    n_x = params.logits.size
    worst = 0.0
    for _ in range(directions):
        dx = rng.standard_normal(n_x) if block in ("joint", "x") else np.zeros(n_x)
        dy = rng.standard_normal(y.size) if block in ("joint", "y") else np.zeros(y.size)
        norm = math.sqrt(dx @ dx + dy @ dy)
        curv = directional_curvature(params, y, levels, dx / norm, dy / norm, alpha, gamma, kind, step)
        worst = max(worst, abs(curv))
    ell = report_for(levels, params, xi, alpha).ell
    return worst, ell, worst <= ell


def projection_oracle(v, xi: float, max_iter: int = 10_000) -> np.ndarray:
    """Active-set solution of ``min ||z - v||^2`` s.t. ``sum(z) = 1, z >= xi``.

    Independent of the sort-and-threshold routine: alternate between solving
    the equality-constrained problem on the free set and moving indices in or
    out of the active set until the KKT multipliers are all non-negative.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if xi * n > 1 + 1e-12:
        raise ValueError("empty feasible set")
    active = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        free = ~active
        if not free.any():
            return np.full(n, xi)
        nu = (v[free].sum() - (1.0 - xi * active.sum())) / free.sum()
        z = np.where(active, xi, v - nu)
        below = free & (z < xi)
        if below.any():
            active |= below
            continue
        mult = xi - v + nu
        bad = active & (mult < -1e-15)
        if bad.any() and free.sum() < n:
            active[int(np.argmin(np.where(bad, mult, np.inf)))] = False
            continue
        return z
    raise RuntimeError("active-set projection did not terminate")
