"""Static traffic allocation: maximise welfare over the simplex of weights."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equilibrium import solve_steady_state
from .market import (
    Array,
    MarketParams,
    MarketState,
    logit_derivative,
    logsumexp,
    softmax,
    utility_values,
)
from .stability import EquilibriumFailure

__all__ = [
    "AllocationSolution",
    "simplex_project",
    "welfare_of",
    "welfare_gradient",
    "kkt_multipliers",
    "optimize_allocation",
]

ARMIJO = 1e-4
BACKTRACK = 0.5


@dataclass(frozen=True)
class AllocationSolution:
    theta: Array
    lam: float
    mu: Array
    welfare: float
    foc_residual: float
    active_corners: tuple[int, ...]
    mode: str
    converged: bool
    iterations: int
    gradient: Array
    welfare_history: list = field(default_factory=list)
    message: str = ""


def simplex_project(y) -> Array:
    """Euclidean projection onto ``{theta >= 0, sum(theta) = 1}`` (sort-based)."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or not np.all(np.isfinite(y)):
        raise ValueError("simplex_project: expected a finite vector")
    if np.all(y >= 0) and abs(y.sum() - 1.0) <= 1e-12 * max(1, len(y)):
        return y.copy()
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(y) + 1)
    positive = np.nonzero(u - css / ind > 0)[0]
    # the first coordinate always qualifies; rounding can hide it for huge inputs
    rho = positive[-1] if positive.size else 0
    shift = css[rho] / (rho + 1)
    return np.maximum(y - shift, 0.0)


def _uncoupled_welfare(params: MarketParams, state: MarketState, theta) -> float:
    v = utility_values(params, state.viewers, state.quality, theta)
    M = params.total_viewers
    probs = softmax(v)
    served = M * probs
    ps = np.sum((1 - params.platform_cut) * params.revenue_rate * served - params.cost.value(state.quality))
    pi = params.platform_cut * params.revenue_rate * np.sum(served)
    return float(M * logsumexp(v) + ps + pi)


def welfare_of(params: MarketParams, state: MarketState, theta, equilibrium_coupled: bool = False,
               **solver_kwargs) -> float:
    """Total welfare ``CS + PS + Pi`` under allocation ``theta``.

    Uncoupled (default): qualities and the audiences entering the network
    term stay at ``state``; audiences served follow ``n_i = M P_i(theta)``.
    Coupled: the steady state is re-solved at ``theta`` (starting from
    ``state``) and welfare is evaluated there.
    """
    theta = np.asarray(theta, dtype=float)
    if not equilibrium_coupled:
        return _uncoupled_welfare(params, state, theta)
    from .welfare import welfare_breakdown

    report = solve_steady_state(params, state.replace(allocation=theta), **solver_kwargs)
    if not report.converged:
        raise EquilibriumFailure("equilibrium failed to converge at the requested allocation")
    return welfare_breakdown(params, report.state).total


def welfare_gradient(params: MarketParams, state: MarketState, theta) -> Array:
    """Analytic gradient of the uncoupled welfare in ``theta``.

    ``dCS/dtheta_i = M phi P_i``; the surplus terms contribute
    ``R M sum_j dP_j/dtheta_i``, which vanishes because shares sum to one.
    """
    v = utility_values(params, state.viewers, state.quality, theta)
    probs = softmax(v)
    M, phi, R = params.total_viewers, params.traffic_sensitivity, params.revenue_rate
    dP_dtheta = phi * logit_derivative(probs)
    surplus = ((1 - params.platform_cut) * R + params.platform_cut * R) * M * dP_dtheta.sum(axis=0)
    return M * phi * probs + surplus


def kkt_multipliers(theta: Array, grad: Array, zero_tol: float = 1e-12):
    """Recover ``lambda`` and ``mu`` from ``grad_i - lambda + mu_i = 0``.

    Returns ``(lam, mu, residual)``; the residual combines stationarity on
    positive coordinates and dual feasibility (``mu >= 0``) on zero ones.
    """
    free = theta > zero_tol
    lam = float(np.mean(grad[free]))
    mu = np.where(free, 0.0, lam - grad)
    stationarity = np.max(np.abs(grad[free] - lam))
    dual = np.max(np.maximum(-mu, 0.0))
    return lam, mu, float(max(stationarity, dual))


def _projected_residual(theta: Array, grad: Array) -> float:
    return float(np.max(np.abs(theta - simplex_project(theta + grad))))


def _exact_gradient(params, state, start, tol, max_iter):
    theta = simplex_project(start)
    w = _uncoupled_welfare(params, state, theta)
    history = [w]
    step = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        g = welfare_gradient(params, state, theta)
        if _projected_residual(theta, g) <= tol:
            converged = True
            break
        step *= 2
        while True:
            cand = simplex_project(theta + step * g)
            w_cand = _uncoupled_welfare(params, state, cand)
            if w_cand >= w + ARMIJO * g @ (cand - theta):
                break
            step *= BACKTRACK
            if step < 1e-300:
                cand, w_cand = theta, w
                break
        if np.array_equal(cand, theta):
            break
        theta, w = cand, w_cand
        history.append(w)
    g = welfare_gradient(params, state, theta)
    if not converged:
        converged = _projected_residual(theta, g) <= tol
    lam, mu, residual = kkt_multipliers(theta, g)
    return AllocationSolution(
        theta=theta,
        lam=lam,
        mu=mu,
        welfare=w,
        foc_residual=residual,
        active_corners=tuple(int(i) for i in np.nonzero(theta <= 1e-12)[0]),
        mode="exact_gradient",
        converged=bool(converged),
        iterations=iterations,
        gradient=g,
        welfare_history=history,
        message="" if converged else "not converged",
    )


def _paper_foc(params, state, tol, max_iter):
    """Solve the printed stationarity system ``P_i/phi + R M P_i (1-P_i) phi = lambda``.

    All positive coordinates share one ``P`` (the left side is monotone on
    the branch used), zero coordinates must satisfy the corner inequality.
    The active set is updated one coordinate at a time.
    """
    N = params.n_streamers
    phi, R, M = params.traffic_sensitivity, params.revenue_rate, params.total_viewers
    base = utility_values(params, state.viewers, state.quality, np.zeros(N))

    def infeasible(msg, theta=None):
        theta = np.full(N, 1.0 / N) if theta is None else theta
        return AllocationSolution(
            theta=theta, lam=float("nan"), mu=np.zeros(N),
            welfare=_uncoupled_welfare(params, state, theta), foc_residual=float("inf"),
            active_corners=(), mode="paper_foc", converged=False, iterations=0,
            gradient=welfare_gradient(params, state, theta), message=f"paper_foc system infeasible: {msg}",
        )

    if phi == 0:
        return infeasible("traffic_sensitivity is zero")
    a, b = 1 / phi + R * M * phi, R * M * phi
    p_peak = min(1.0, a / (2 * b))

    def h(p):
        return p / phi + R * M * phi * p * (1 - p)

    def theta_for(free: Array, p: float) -> Array:
        theta = np.zeros(N)
        if free.all():
            theta[:] = 1.0 / N + (base.mean() - base) / phi
            return theta
        log_s = logsumexp(base[~free]) - math.log1p(-free.sum() * p)
        theta[free] = (math.log(p) + log_s - base[free]) / phi
        return theta

    free = np.ones(N, dtype=bool)
    seen = set()
    rounds = 0
    p = lam = None
    while True:
        rounds += 1
        key = tuple(free)
        if key in seen or rounds > max_iter:
            return infeasible("active set cycles", simplex_project(np.maximum(theta, 0.0)))
        seen.add(key)
        k = int(free.sum())
        if free.all():
            p = 1.0 / N
            if p > p_peak:
                return infeasible("equal shares lie beyond the monotone branch")
        else:
            hi = min(p_peak, (1 - 1e-15) / k)
            lo = 0.0
            if theta_for(free, hi).sum() < 1:
                return infeasible("no multiplier balances the simplex")
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if theta_for(free, mid).sum() < 1:
                    lo = mid
                else:
                    hi = mid
            p = 0.5 * (lo + hi)
        lam = h(p)
        theta = theta_for(free, p)
        if np.any(theta[free] < 0):
            worst = int(np.argmin(np.where(free, theta, np.inf)))
            free[worst] = False
            continue
        probs = softmax(base + phi * theta)
        slack = h(probs) - lam
        violators = (~free) & (slack > tol)
        if violators.any():
            free[int(np.argmax(np.where(violators, slack, -np.inf)))] = True
            continue
        break

    theta = np.maximum(theta, 0.0)
    theta = theta / theta.sum()
    probs = softmax(base + phi * theta)
    hp = h(probs)
    mu = np.where(free, 0.0, lam - hp)
    residual = max(float(np.max(np.abs(hp[free] - lam))) if free.any() else 0.0,
                   float(np.max(np.maximum(-mu, 0.0))))
    return AllocationSolution(
        theta=theta,
        lam=float(lam),
        mu=mu,
        welfare=_uncoupled_welfare(params, state, theta),
        foc_residual=residual,
        active_corners=tuple(int(i) for i in np.nonzero(~free)[0]),
        mode="paper_foc",
        converged=bool(residual <= max(tol, 1e-9 * abs(lam))),
        iterations=rounds,
        gradient=welfare_gradient(params, state, theta),
        message="",
    )


def optimize_allocation(params: MarketParams, state: MarketState, mode: str = "exact_gradient",
                        start: Optional[Array] = None, tol: float = 1e-9,
                        max_iter: int = 10_000) -> AllocationSolution:
    """Optimal allocation weights for the uncoupled welfare.

    ``exact_gradient``: projected gradient ascent with Armijo backtracking
    until ``||theta - proj(theta + grad)||_inf <= tol``; multipliers are
    recovered from the KKT conditions at the end.

    ``paper_foc``: the printed stationarity system with its corner test.
    """
    state.check_for(params)
    N = params.n_streamers
    if start is None:
        start = np.full(N, 1.0 / N)
    start = np.asarray(start, dtype=float)
    if start.shape != (N,) or np.any(start < 0) or abs(start.sum() - 1) > 1e-10:
        raise ValueError("start must lie on the simplex")
    if mode == "exact_gradient":
        return _exact_gradient(params, state, start, tol, max_iter)
    if mode == "paper_foc":
        return _paper_foc(params, state, tol, max_iter)
    raise ValueError(f"unknown allocation mode {mode!r}")
