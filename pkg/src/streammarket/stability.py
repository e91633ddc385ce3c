"""Local stability of steady states and the critical network-effect strength."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import IntegratorConfig, drift_jacobian, drift_values, integrate
from .equilibrium import (
    default_tolerances,
    polish_steady_state,
    solve_steady_state,
    steady_state_residuals,
    symmetric_steady_state,
)
from .market import Array, MarketParams, MarketState

__all__ = [
    "EigensolverError",
    "BracketError",
    "EquilibriumFailure",
    "StabilityReport",
    "CriticalBetaReport",
    "jacobian_at",
    "finite_difference_jacobian",
    "eigenvalues",
    "classify_stability",
    "critical_beta",
    "symmetric_critical_beta",
    "measure_decay_rate",
]

TOL_EIG = 1e-9


class EigensolverError(RuntimeError):
    pass


class BracketError(ValueError):
    pass


class EquilibriumFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class StabilityReport:
    """Linearisation at a steady state.

    Block order is viewers first, then qualities. With frozen quality only
    the viewer block is present.
    """

    jacobian: Array
    eigenvalues: Array
    max_real_part: float
    stable: bool
    method: str = "analytic"
    steady: bool = True


@dataclass(frozen=True)
class CriticalBetaReport:
    beta_star: float
    bracket: tuple[float, float]
    quality_frozen: bool
    analytic_reference: Optional[float] = None
    iterations: int = 0


def _is_steady(params: MarketParams, state: MarketState) -> bool:
    tol_n, tol_q = default_tolerances(params)
    res_n, res_q = steady_state_residuals(params, state.viewers, state.quality, state.allocation)
    return res_n <= 10 * tol_n and res_q <= 10 * tol_q


def jacobian_at(params: MarketParams, state: MarketState, warn: bool = True) -> Array:
    """Analytic Jacobian of ``(n_dot, q_dot)`` at ``state``.

    ``2N x 2N`` in general, ``N x N`` (viewer block) when quality is frozen.
    Warns when ``state`` is not a steady state; the matrix is still returned.
    """
    state.check_for(params)
    if warn and not _is_steady(params, state):
        warnings.warn("jacobian_at: state is not a steady state", RuntimeWarning, stacklevel=2)
    return drift_jacobian(params, state.viewers, state.quality, state.allocation,
                          include_quality=not params.quality_frozen)


def finite_difference_jacobian(params: MarketParams, state: MarketState,
                               rel_step: float = 1e-6) -> Array:
    """Central-difference Jacobian of the drift, step ``rel_step * max(1, |x_j|)``."""
    N = params.n_streamers
    size = N if params.quality_frozen else 2 * N
    x0 = np.concatenate([state.viewers, state.quality])
    theta = state.allocation
    jac = np.empty((size, size))
    for j in range(size):
        h = rel_step * max(1.0, abs(x0[j]))
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        fp = drift_values(params, xp[:N], xp[N:], theta)[:size]
        fm = drift_values(params, xm[:N], xm[N:], theta)[:size]
        jac[:, j] = (fp - fm) / (2 * h)
    return jac


def eigenvalues(matrix) -> Array:
    """Full spectrum of a dense real matrix, sorted by descending real part."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("eigenvalues: matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("eigenvalues: matrix has non-finite entries")
    try:
        lam = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError("eigensolver stalled") from exc
    lam = lam.astype(complex)
    order = np.lexsort((-lam.imag, -lam.real))
    return lam[order]


def classify_stability(params: MarketParams, state: MarketState, tol_eig: float = TOL_EIG) -> StabilityReport:
    steady = _is_steady(params, state)
    jac = jacobian_at(params, state, warn=True)
    lam = eigenvalues(jac)
    max_re = float(lam.real.max())
    return StabilityReport(
        jacobian=jac,
        eigenvalues=lam,
        max_real_part=max_re,
        stable=bool(max_re < -tol_eig),
        method="analytic",
        steady=steady,
    )


def symmetric_critical_beta(n_streamers: int, total_viewers: float) -> float:
    """Closed-form threshold for identical streamers with frozen quality.

    At uniform shares ``dP/dn = (beta/N)(I - 11^T/N)``, so every mode that
    moves viewers between streamers has eigenvalue ``gamma (M beta / N - 1)``.
    """
    return n_streamers / total_viewers


def _steady_at(params: MarketParams, guess: MarketState) -> MarketState:
    report = polish_steady_state(params, guess)
    if not report.converged:
        damped = solve_steady_state(params, guess)
        report = polish_steady_state(params, damped.state)
    if not report.converged:
        raise EquilibriumFailure(f"equilibrium failed to converge at beta={params.network_effect!r}")
    return report.state


def critical_beta(params: MarketParams, quality_frozen: bool = True,
                  bracket: Optional[tuple[float, float]] = None, tol_beta: float = 1e-9,
                  start: Optional[MarketState] = None, max_iter: int = 200) -> CriticalBetaReport:
    """Bisect ``beta`` on the sign of the largest real part of the spectrum at
    the interior steady state.

    The steady state is tracked by Newton continuation from the low end of
    the bracket, starting from uniform audiences (or ``start``), so the
    branch followed past the threshold is the unstable interior one.
    """
    N, M = params.n_streamers, params.total_viewers
    base = params.replace(quality_speed=0.0) if quality_frozen else params
    if bracket is None:
        bracket = (0.0, 4.0 * N / M)
    lo, hi = map(float, bracket)
    if not 0 <= lo < hi:
        raise ValueError("bracket must satisfy 0 <= lo < hi")
    guess = start if start is not None else MarketState.uniform(params)
    if not base.quality_frozen and start is None:
        low = base.replace(network_effect=lo)
        if low.is_symmetric:
            guess = symmetric_steady_state(low)
        else:
            guess = solve_steady_state(low, guess).state

    def spectrum_edge(beta, guess):
        p = base.replace(network_effect=beta)
        state = _steady_at(p, guess)
        jac = jacobian_at(p, state, warn=False)
        return float(eigenvalues(jac).real.max()), state

    f_lo, state_lo = spectrum_edge(lo, guess)
    # walk the branch up to hi in small steps so Newton stays on it
    state = state_lo
    for beta in np.linspace(lo, hi, 9)[1:]:
        f_hi, state = spectrum_edge(beta, state)
    if not (f_lo < 0 < f_hi):
        raise BracketError(
            f"bracket does not straddle: max Re(lambda) = {f_lo:g} at {lo:g}, {f_hi:g} at {hi:g}"
        )
    iterations = 0
    while hi - lo > tol_beta and iterations < max_iter:
        iterations += 1
        mid = 0.5 * (lo + hi)
        f_mid, state_mid = spectrum_edge(mid, state_lo)
        if f_mid < 0:
            lo, state_lo = mid, state_mid
        else:
            hi = mid

    reference = None
    uniform_theta = np.allclose(guess.allocation, 1.0 / N, rtol=0, atol=1e-15)
    if quality_frozen and params.is_symmetric and uniform_theta:
        reference = symmetric_critical_beta(N, M)
    return CriticalBetaReport(
        beta_star=0.5 * (lo + hi),
        bracket=(lo, hi),
        quality_frozen=quality_frozen,
        analytic_reference=reference,
        iterations=iterations,
    )


def measure_decay_rate(params: MarketParams, state: MarketState, size: float = 1e-3,
                       periods: float = 5.0) -> float:
    """Decay rate of a small perturbation, estimated by simulation.

    The steady state is displaced along the real part of the leading
    eigenvector (``size`` relative to ``M`` for audiences and to the quality
    level for qualities), integrated with RK4, and ``-slope`` of a
    least-squares fit of ``log ||delta(t)||`` over the later 80% of the run
    is returned. The run lasts ``periods / |max Re(lambda)|``.
    """
    N, M = params.n_streamers, params.total_viewers
    jac = jacobian_at(params, state, warn=False)
    lam, vecs = np.linalg.eig(jac)
    lead = int(np.argmax(lam.real))
    rate = -lam[lead].real
    if rate <= 0:
        raise ValueError("measure_decay_rate: steady state is not stable")
    size_q = max(1.0, float(np.max(state.quality)))
    scale = np.concatenate([np.full(N, M), np.full(jac.shape[0] - N, size_q)])
    v = vecs[:, lead].real
    if np.max(np.abs(v)) == 0:
        v = vecs[:, lead].imag
    v = v / np.max(np.abs(v / scale))
    delta = size * v
    n0 = state.viewers + delta[:N]
    if np.any(n0 < 0.5 * state.viewers):
        shrink = np.min(np.where(delta[:N] < 0, 0.5 * state.viewers / np.maximum(-delta[:N], 1e-300), np.inf))
        delta = delta * shrink
        n0 = state.viewers + delta[:N]
    q0 = state.quality if params.quality_frozen else np.maximum(state.quality + delta[N:], 0.0)

    horizon = periods / rate
    fastest = float(np.max(np.abs(lam)))
    dt = min(horizon / 200, 0.05 / fastest)
    cfg = IntegratorConfig(step=dt, horizon=horizon, method="rk4")
    traj = integrate(params, MarketState(n0, q0, state.allocation), cfg)
    dev_n = (traj.viewers - state.viewers) / M
    parts = [dev_n] if params.quality_frozen else [dev_n, (traj.quality - state.quality) / size_q]
    norms = np.linalg.norm(np.hstack(parts), axis=1)
    keep = traj.times >= 0.2 * horizon
    slope = np.polyfit(traj.times[keep], np.log(norms[keep]), 1)[0]
    return float(-slope)
