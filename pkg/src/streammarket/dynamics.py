"""Time integration of the coupled viewer/quality system."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .market import (
    Array,
    MarketParams,
    MarketState,
    logit_derivative,
    probability_values,
    quality_drift_values,
    viewer_drift,
)

__all__ = [
    "DivergenceError",
    "IntegratorConfig",
    "Trajectory",
    "PathDependenceReport",
    "viewer_drift",
    "drift_values",
    "drift_jacobian",
    "rk4_step",
    "integrate",
    "path_dependence_experiment",
    "shares_hhi_rows",
]


class DivergenceError(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, t: float, last_state: MarketState):
        super().__init__(f"divergence at t={t!r}")
        self.t = t
        self.last_state = last_state


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 0.01
    horizon: float = 10.0
    method: str = "rk4"
    record_every: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("integrator.step must be > 0")
        if not self.horizon > 0:
            raise ValueError("integrator.horizon must be > 0")
        if self.step > self.horizon:
            raise ValueError("integrator.step must not exceed integrator.horizon")
        if self.method not in ("rk4", "euler"):
            raise ValueError("integrator.method must be 'rk4' or 'euler'")
        if isinstance(self.record_every, bool) or int(self.record_every) != self.record_every \
                or self.record_every < 1:
            raise ValueError("integrator.record_every must be a positive integer")

    @property
    def n_steps(self) -> int:
        return max(1, int(np.ceil(self.horizon / self.step - 1e-9)))

    def check(self, params: MarketParams) -> None:
        if params.viewer_speed * self.step >= 2:
            raise ValueError(
                f"integrator.step too large: viewer_speed*step = {params.viewer_speed * self.step:g} >= 2"
            )


def shares_hhi_rows(viewers: Array, total_viewers: float):
    shares = np.asarray(viewers) / total_viewers
    return shares, np.sum(shares**2, axis=-1)


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution. Row ``k`` of each matrix belongs to ``times[k]``."""

    times: Array
    viewers: Array
    quality: Array
    allocation: Array
    total_viewers: float

    @property
    def shares(self) -> Array:
        return self.viewers / self.total_viewers

    @property
    def hhi(self) -> Array:
        return np.sum(self.shares**2, axis=1)

    def state(self, k: int) -> MarketState:
        return MarketState(self.viewers[k], self.quality[k], self.allocation[k])

    @property
    def states(self) -> list[MarketState]:
        return [self.state(k) for k in range(len(self.times))]

    @property
    def final_state(self) -> MarketState:
        return self.state(-1)


def drift_values(params: MarketParams, viewers, quality, allocation) -> Array:
    """Stacked ``(n_dot, q_dot)`` for raw arrays."""
    probs = probability_values(params, viewers, quality, allocation)
    n_dot = params.viewer_speed * (params.total_viewers * probs - viewers)
    return np.concatenate([n_dot, quality_drift_values(params, probs, np.asarray(quality, float))])


def drift_jacobian(params: MarketParams, viewers, quality, allocation,
                   include_quality: bool = True) -> Array:
    """Analytic Jacobian of ``drift_values`` with respect to ``(n, q)``.

    With ``include_quality=False`` only the ``n``-block (``N x N``) is returned,
    which is the full linearisation when quality is frozen.
    """
    quality = np.asarray(quality, dtype=float)
    probs = probability_values(params, viewers, quality, allocation)
    base = logit_derivative(probs)
    N = params.n_streamers
    M, gamma, eta = params.total_viewers, params.viewer_speed, params.quality_speed
    dP_dn = params.network_effect * base
    dP_dq = base * params.attractiveness[np.newaxis, :]

    nn = gamma * (M * dP_dn - np.eye(N))
    if not include_quality:
        return nn
    nq = gamma * M * dP_dq

    cost = params.cost
    slope = (params.marginal_revenue_scale * (1 - 2 * probs))[:, np.newaxis]
    qn = slope * dP_dn
    qq = slope * dP_dq - np.diag(cost.d2(quality))
    if params.normalized_quality_drift:
        c2 = cost.d2(quality)
        gain = params.marginal_revenue_scale * probs * (1 - probs) - cost.d1(quality)
        qn = qn / c2[:, np.newaxis]
        qq = qq / c2[:, np.newaxis] - np.diag(gain * cost.d3(quality) / c2**2)
    return np.block([[nn, nq], [eta * qn, eta * qq]])


def rk4_step(f: Callable[[float, Array], Array], t: float, x: Array, dt: float) -> Array:
    k1 = f(t, x)
    k2 = f(t + dt / 2, x + dt / 2 * k1)
    k3 = f(t + dt / 2, x + dt / 2 * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _euler_step(f, t, x, dt):
    return x + dt * f(t, x)


def integrate(params: MarketParams, initial: MarketState, cfg: IntegratorConfig,
              theta_schedule: Optional[Callable[[float], Array]] = None) -> Trajectory:
    """Integrate viewer and quality dynamics from ``initial`` over ``cfg.horizon``.

    Quality is clamped at zero after every step. ``theta_schedule(t)`` overrides
    the (otherwise constant) allocation of ``initial``.
    """
    initial.check_for(params)
    cfg.check(params)
    N = params.n_streamers
    fixed_theta = initial.allocation

    def theta_at(t):
        return fixed_theta if theta_schedule is None else np.asarray(theta_schedule(t), dtype=float)

    def f(t, x):
        return drift_values(params, x[:N], x[N:], theta_at(t))

    step = rk4_step if cfg.method == "rk4" else _euler_step
    n_steps = cfg.n_steps
    dt = cfg.horizon / n_steps

    x = np.concatenate([initial.viewers, initial.quality])
    times, rows, thetas = [0.0], [x.copy()], [theta_at(0.0)]
    last_good = initial
    for k in range(1, n_steps + 1):
        t_prev = (k - 1) * dt
        t = k * dt
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                x = step(f, t_prev, x, dt)
        except ValueError:
            raise DivergenceError(t, last_good) from None
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t, last_good)
        x[N:] = np.maximum(x[N:], 0.0)
        if k % cfg.record_every == 0 or k == n_steps:
            times.append(t)
            rows.append(x.copy())
            thetas.append(theta_at(t))
            last_good = MarketState(np.maximum(x[:N], 0.0), x[N:], thetas[-1])
    rows = np.array(rows)
    return Trajectory(
        times=np.array(times),
        viewers=rows[:, :N],
        quality=rows[:, N:],
        allocation=np.array(thetas),
        total_viewers=params.total_viewers,
    )


@dataclass(frozen=True)
class PathDependenceReport:
    times: Array
    delta_n: Array
    final_shares: Array
    dominant: Optional[int]
    crossover: bool


def dominant_index(viewers: Array, total_viewers: float, tie_tol: float = 1e-6) -> Optional[int]:
    """Index of the largest audience, or ``None`` when the top two tie."""
    order = np.argsort(viewers)[::-1]
    if len(order) > 1 and viewers[order[0]] - viewers[order[1]] <= tie_tol * total_viewers:
        return None
    return int(order[0])


def path_dependence_experiment(params: MarketParams, epsilon: float, cfg: IntegratorConfig,
                               quality: float | None = None) -> PathDependenceReport:
    """Seed streamer 0 with ``M/N + epsilon`` viewers and streamer 1 with
    ``M/N - epsilon``; all other streamers start at ``M/N``.

    ``quality`` is the common initial quality (default: zero).
    """
    if not params.is_symmetric:
        raise ValueError("params not symmetric")
    N, M = params.n_streamers, params.total_viewers
    if N < 2:
        raise ValueError("path dependence needs at least two streamers")
    if not 0 <= epsilon < M / N:
        raise ValueError("epsilon must lie in [0, M/N)")
    viewers = np.full(N, M / N)
    viewers[0] += epsilon
    viewers[1] -= epsilon
    start = MarketState(viewers, np.full(N, 0.0 if quality is None else quality), np.full(N, 1.0 / N))
    traj = integrate(params, start, cfg)
    delta = traj.viewers[:, 0] - traj.viewers[:, 1]
    crossover = bool(epsilon > 0 and np.any(delta < 0))
    final = traj.viewers[-1]
    return PathDependenceReport(
        times=traj.times,
        delta_n=delta,
        final_shares=final / M,
        dominant=dominant_index(final, M),
        crossover=crossover,
    )
