"""Steady states: ``n_i = M P_i`` together with each streamer's quality FOC."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import drift_jacobian
from .market import Array, MarketParams, MarketState, logsumexp, probability_values, utility_values

__all__ = [
    "EquilibriumReport",
    "quality_best_response",
    "quality_upper_bound",
    "steady_state_residuals",
    "symmetric_steady_state",
    "solve_steady_state",
    "polish_steady_state",
    "random_interior_state",
    "distinct_fixed_points",
]


@dataclass(frozen=True)
class EquilibriumReport:
    state: MarketState
    residual_n: float
    residual_q: float
    iterations: int
    converged: bool
    basin_probe: list = field(default_factory=list)


def default_tolerances(params: MarketParams) -> tuple[float, float]:
    q_scale = float(np.max(params.marginal_revenue_scale)) / 4
    return 1e-8 * params.total_viewers, 1e-8 * max(1.0, q_scale)


def steady_state_residuals(params: MarketParams, viewers, quality, allocation) -> tuple[float, float]:
    """Sup-norm residuals of the viewer fixed point and of the quality FOC.

    The quality residual is reported as zero when quality is frozen, since
    quality is then not an equilibrium variable.
    """
    probs = probability_values(params, viewers, quality, allocation)
    res_n = float(np.max(np.abs(np.asarray(viewers) - params.total_viewers * probs)))
    if params.quality_frozen:
        return res_n, 0.0
    foc = params.cost.d1(quality) - params.marginal_revenue_scale * probs * (1 - probs)
    return res_n, float(np.max(np.abs(foc)))


def quality_upper_bound(params: MarketParams, i: int) -> float:
    """A quality where marginal cost exceeds ``(1-tau) R M alpha_i / 4``,
    the largest possible marginal revenue."""
    target = params.marginal_revenue_scale[i] / 4
    hi = 1.0
    while params.cost.d1(hi) <= target:
        hi *= 2
    return hi


def quality_best_response(params: MarketParams, viewers, i: int, quality,
                          allocation=None) -> float:
    """Streamer ``i``'s optimal quality with audiences ``viewers`` and rivals'
    qualities held fixed.

    Solves ``c'(q) = (1-tau) R M alpha_i P_i(q) (1 - P_i(q))`` with ``P_i``
    recomputed as ``q`` varies. Every sign change on a coarse grid over
    ``[0, q_max]`` is refined by bisection; when several roots exist the one
    with the highest profit ``(1-tau) R M P_i(q) - c(q)`` is returned.
    """
    N = params.n_streamers
    if allocation is None:
        allocation = np.full(N, 1.0 / N)
    scale = float(params.marginal_revenue_scale[i])
    if scale == 0.0 or N == 1:
        return 0.0
    alpha = float(params.attractiveness[i])
    q0 = np.array(quality, dtype=float)
    q0[i] = 0.0
    u = utility_values(params, viewers, q0, allocation)
    # P_i(q) = logistic(alpha q + offset)
    offset = float(u[i] - logsumexp(np.delete(u, i)))
    cost = params.cost

    def share(q):
        z = alpha * q + offset
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        e = math.exp(z)
        return e / (1.0 + e)

    def gap(q):
        p = share(q)
        return float(cost.d1(q)) - scale * p * (1 - p)

    q_max = quality_upper_bound(params, i)
    grid = np.linspace(0.0, q_max, 129)
    z = np.clip(alpha * grid + offset, -700, 700)
    p = 1.0 / (1.0 + np.exp(-z))
    g = cost.d1(grid) - scale * p * (1 - p)

    roots = []
    if g[0] >= 0:
        roots.append(0.0)
    for k in np.nonzero((g[:-1] < 0) & (g[1:] >= 0) | (g[:-1] > 0) & (g[1:] <= 0))[0]:
        lo, hi = grid[k], grid[k + 1]
        g_lo = g[k]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            g_mid = gap(mid)
            if (g_mid < 0) == (g_lo < 0):
                lo, g_lo = mid, g_mid
            else:
                hi = mid
        roots.append(lo if abs(gap(lo)) <= abs(gap(hi)) else hi)
    if len(roots) == 1:
        return float(roots[0])
    total = params.total_viewers * (1 - params.platform_cut) * params.revenue_rate
    profits = [total * share(r) - float(cost.value(r)) for r in roots]
    return float(roots[int(np.argmax(profits))])


def symmetric_steady_state(params: MarketParams, quality: float = 0.0) -> MarketState:
    """The equal-shares steady state of identical streamers.

    Audiences are ``M/N`` each and, unless quality is frozen (then
    ``quality`` is used), the common quality solves
    ``c'(q) = (1-tau) R M alpha (1/N)(1 - 1/N)``.
    """
    if not params.is_symmetric:
        raise ValueError("params not symmetric")
    N = params.n_streamers
    if not params.quality_frozen:
        target = params.marginal_revenue_scale[0] * (1 / N) * (1 - 1 / N)
        lo, hi = 0.0, quality_upper_bound(params, 0)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if params.cost.d1(mid) < target:
                lo = mid
            else:
                hi = mid
        quality = lo if abs(params.cost.d1(lo) - target) <= abs(params.cost.d1(hi) - target) else hi
    return MarketState(np.full(N, params.total_viewers / N), np.full(N, float(quality)), np.full(N, 1.0 / N))


def solve_steady_state(params: MarketParams, start: MarketState, tol_n: Optional[float] = None,
                       tol_q: Optional[float] = None, damping: float = 0.5,
                       max_iter: int = 10_000) -> EquilibriumReport:
    """Damped Gauss-Seidel fixed-point iteration.

    Each sweep relaxes viewers toward ``M P(n, q)`` and then each quality, in
    turn, toward its best response. ``start.viewers`` is rescaled to sum to
    ``M`` first so that every iterate conserves the audience.
    """
    start.check_for(params)
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    default_n, default_q = default_tolerances(params)
    tol_n = default_n if tol_n is None else tol_n
    tol_q = default_q if tol_q is None else tol_q
    M = params.total_viewers
    N = params.n_streamers

    n = np.array(start.viewers, dtype=float)
    n = n * (M / n.sum()) if n.sum() > 0 else np.full(N, M / N)
    q = np.array(start.quality, dtype=float)
    theta = start.allocation

    res_n, res_q = steady_state_residuals(params, n, q, theta)
    iterations = 0
    while not (res_n <= tol_n and res_q <= tol_q) and iterations < max_iter:
        iterations += 1
        probs = probability_values(params, n, q, theta)
        n = (1 - damping) * n + damping * M * probs
        if not params.quality_frozen:
            for i in range(N):
                q[i] = (1 - damping) * q[i] + damping * quality_best_response(params, n, i, q, theta)
        res_n, res_q = steady_state_residuals(params, n, q, theta)

    state = MarketState(np.maximum(n, 0.0), q, theta)
    return EquilibriumReport(
        state=state,
        residual_n=res_n,
        residual_q=res_q,
        iterations=iterations,
        converged=bool(res_n <= tol_n and res_q <= tol_q),
    )


def polish_steady_state(params: MarketParams, state: MarketState, tol_n: Optional[float] = None,
                        tol_q: Optional[float] = None, max_iter: int = 50) -> EquilibriumReport:
    """Newton's method on the steady-state residual, started at ``state``.

    Unlike the damped iteration this also converges to unstable steady
    states, which makes it the tool for continuation in ``beta``.
    """
    state.check_for(params)
    default_n, default_q = default_tolerances(params)
    tol_n = default_n if tol_n is None else tol_n
    tol_q = default_q if tol_q is None else tol_q
    N, M = params.n_streamers, params.total_viewers
    frozen = params.quality_frozen
    unit = params.replace(viewer_speed=1.0, quality_speed=1.0, normalized_quality_drift=False)
    theta = state.allocation

    def residual(n, q):
        probs = probability_values(params, n, q, theta)
        r = n - M * probs
        if frozen:
            return r
        return np.concatenate([r, params.cost.d1(q) - params.marginal_revenue_scale * probs * (1 - probs)])

    n = np.array(state.viewers, dtype=float)
    q = np.array(state.quality, dtype=float)
    r = residual(n, q)
    iterations = 0
    res_n, res_q = steady_state_residuals(params, n, q, theta)
    while not (res_n <= tol_n and res_q <= tol_q) and iterations < max_iter:
        iterations += 1
        jac = -drift_jacobian(unit, n, q, theta, include_quality=not frozen)
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        norm0 = np.linalg.norm(r)
        t = 1.0
        while t > 1e-8:
            n_new = n + t * step[:N]
            q_new = q if frozen else np.maximum(q + t * step[N:], 0.0)
            if np.all(n_new >= 0):
                r_new = residual(n_new, q_new)
                if np.linalg.norm(r_new) < norm0 or norm0 == 0:
                    break
            t *= 0.5
        else:
            break
        n, q, r = n_new, q_new, r_new
        res_n, res_q = steady_state_residuals(params, n, q, theta)

    return EquilibriumReport(
        state=MarketState(np.maximum(n, 0.0), q, theta),
        residual_n=res_n,
        residual_q=res_q,
        iterations=iterations,
        converged=bool(res_n <= tol_n and res_q <= tol_q),
    )


def random_interior_state(params: MarketParams, rng: np.random.Generator,
                          allocation=None) -> MarketState:
    """Audience drawn uniformly from the simplex scaled by ``M``; qualities
    uniform below each streamer's best-response bound."""
    N = params.n_streamers
    viewers = params.total_viewers * rng.dirichlet(np.ones(N))
    if params.quality_frozen:
        quality = np.zeros(N)
    else:
        quality = np.array([rng.uniform(0, quality_upper_bound(params, i)) for i in range(N)])
    if allocation is None:
        allocation = np.full(N, 1.0 / N)
    return MarketState(viewers, quality, allocation)


def probe_basins(params: MarketParams, n_starts: int, rng: np.random.Generator,
                 allocation=None, **solver_kwargs) -> list[tuple[MarketState, EquilibriumReport]]:
    """Solve from ``n_starts`` random interior starts."""
    out = []
    for _ in range(n_starts):
        start = random_interior_state(params, rng, allocation)
        out.append((start, solve_steady_state(params, start, **solver_kwargs)))
    return out


def distinct_fixed_points(states: list[MarketState], tol: float) -> list[MarketState]:
    """Cluster attained states whose viewers and qualities agree within ``tol``."""
    reps: list[MarketState] = []
    for s in states:
        if not any(np.max(np.abs(s.viewers - r.viewers)) <= tol
                   and np.max(np.abs(s.quality - r.quality)) <= tol for r in reps):
            reps.append(s)
    return reps


def solve_with_probe(params: MarketParams, start: MarketState, n_starts: int,
                     rng: np.random.Generator, **solver_kwargs) -> EquilibriumReport:
    """``solve_steady_state`` plus a multi-start basin probe recorded as
    ``(start, attained state)`` pairs."""
    report = solve_steady_state(params, start, **solver_kwargs)
    probe = probe_basins(params, n_starts, rng, start.allocation, **solver_kwargs)
    return EquilibriumReport(
        state=report.state,
        residual_n=report.residual_n,
        residual_q=report.residual_q,
        iterations=report.iterations,
        converged=report.converged,
        basin_probe=[(s, r.state) for s, r in probe],
    )
