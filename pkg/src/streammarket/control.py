"""Dynamic traffic allocation by the forward-backward sweep method.

The platform maximises ``int_0^T exp(-rho t) W(t) dt`` subject to the
viewer dynamics. Quality is frozen at its initial value unless
``joint_quality`` is set, in which case the quality equations and their
costates join the system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import simplex_project
from .dynamics import DivergenceError, drift_jacobian, drift_values, rk4_step
from .market import (
    Array,
    MarketParams,
    MarketState,
    logit_derivative,
    logsumexp,
    probability_values,
    utility_values,
)

__all__ = [
    "ControlSolution",
    "instant_welfare",
    "hamiltonian",
    "hamiltonian_gradients",
    "costate_drift",
    "discounted_welfare_of",
    "solve_fbsm",
]


@dataclass(frozen=True)
class ControlSolution:
    """Node-wise paths on a uniform grid of ``steps + 1`` times.

    ``theta_path[k]`` is the weight applied on ``[t_k, t_{k+1})``; the last
    row repeats the final cell's weight. ``costates`` has ``N`` columns, or
    ``2N`` (viewer costates first) with joint quality dynamics.
    """

    times: Array
    theta_path: Array
    costates: Array
    viewers: Array
    quality: Array
    welfare_path: Array
    discounted_welfare: float
    foc_residual_path: Array
    converged: bool
    sweeps: int
    welfare_history: list = field(default_factory=list)


def instant_welfare(params: MarketParams, viewers, quality, allocation) -> float:
    """``W = M log sum exp(V) + sum[(1-tau) R n_i - c(q_i)] + tau R sum n_i``."""
    v = utility_values(params, viewers, quality, allocation)
    n = np.asarray(viewers, dtype=float)
    ps = np.sum((1 - params.platform_cut) * params.revenue_rate * n - params.cost.value(quality))
    pi = params.platform_cut * params.revenue_rate * n.sum()
    return float(params.total_viewers * logsumexp(v) + ps + pi)


def _split(params: MarketParams, x: Array, quality: Array, joint: bool):
    N = params.n_streamers
    return (x[:N], x[N:]) if joint else (x, quality)


def _drift(params, x, quality, theta, joint):
    n, q = _split(params, x, quality, joint)
    f = drift_values(params, n, q, theta)
    return f if joint else f[: params.n_streamers]


def _gradients(params: MarketParams, n, q, theta, costate, joint: bool):
    """``(dH/dx, dH/dtheta)`` with ``x = n`` or ``x = (n, q)``."""
    probs = probability_values(params, n, q, theta)
    M = params.total_viewers
    R = params.revenue_rate
    grad_w_n = M * params.network_effect * probs + (1 - params.platform_cut) * R + params.platform_cut * R
    jac = drift_jacobian(params, n, q, theta, include_quality=joint)
    if joint:
        grad_w_q = M * params.attractiveness * probs - params.cost.d1(q)
        grad_w = np.concatenate([grad_w_n, grad_w_q])
    else:
        grad_w = grad_w_n
    dH_dx = grad_w + jac.T @ costate

    dP_dtheta = params.traffic_sensitivity * logit_derivative(probs)
    f_theta = params.viewer_speed * M * dP_dtheta
    if joint:
        slope = (params.marginal_revenue_scale * (1 - 2 * probs))[:, np.newaxis]
        q_theta = params.quality_speed * slope * dP_dtheta
        if params.normalized_quality_drift:
            q_theta = q_theta / params.cost.d2(q)[:, np.newaxis]
        f_theta = np.vstack([f_theta, q_theta])
    dH_dtheta = M * params.traffic_sensitivity * probs + f_theta.T @ costate
    return dH_dx, dH_dtheta


def hamiltonian(params: MarketParams, state: MarketState, costate) -> float:
    """Current-value Hamiltonian ``W + sum_i lambda_i gamma (M P_i - n_i)``.

    A costate of length ``2N`` also prices the quality drift.
    """
    costate = np.asarray(costate, dtype=float)
    joint = costate.shape[0] == 2 * params.n_streamers
    x = np.concatenate([state.viewers, state.quality]) if joint else state.viewers
    f = _drift(params, x, state.quality, state.allocation, joint)
    return instant_welfare(params, state.viewers, state.quality, state.allocation) + float(costate @ f)


def hamiltonian_gradients(params: MarketParams, state: MarketState, costate):
    """Analytic ``(dH/dx, dH/dtheta)`` at ``state``."""
    costate = np.asarray(costate, dtype=float)
    joint = costate.shape[0] == 2 * params.n_streamers
    return _gradients(params, state.viewers, state.quality, state.allocation, costate, joint)


def costate_drift(params: MarketParams, state: MarketState, costate) -> Array:
    """``lambda_dot = rho lambda - dH/dx``."""
    costate = np.asarray(costate, dtype=float)
    return params.discount_rate * costate - hamiltonian_gradients(params, state, costate)[0]


class _Grid:
    def __init__(self, params, initial, horizon, steps, joint):
        if not horizon > 0 or steps < 1:
            raise ValueError("horizon and steps must be positive")
        self.params = params
        self.joint = joint
        self.N = params.n_streamers
        self.times = np.linspace(0.0, horizon, steps + 1)
        self.dt = horizon / steps
        self.steps = steps
        self.q0 = np.array(initial.quality, dtype=float)
        self.x0 = np.concatenate([initial.viewers, initial.quality]) if joint else np.array(initial.viewers)
        self.discount = np.exp(-params.discount_rate * self.times)

    def split(self, x):
        return _split(self.params, x, self.q0, self.joint)

    def forward(self, theta_cells: Array) -> Array:
        xs = np.empty((self.steps + 1, self.x0.shape[0]))
        xs[0] = self.x0
        for k in range(self.steps):
            theta = theta_cells[k]

            def f(t, x):
                return _drift(self.params, x, self.q0, theta, self.joint)

            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    x = rk4_step(f, self.times[k], xs[k], self.dt)
            except ValueError:
                x = np.full_like(xs[k], np.nan)
            if not np.all(np.isfinite(x)):
                n, q = self.split(xs[k])
                raise DivergenceError(float(self.times[k + 1]),
                                      MarketState(np.maximum(n, 0), np.maximum(q, 0), theta))
            if self.joint:
                x[self.N:] = np.maximum(x[self.N:], 0.0)
            xs[k + 1] = x
        return xs

    def welfare_path(self, xs, theta_cells):
        """Left and right node welfare of every cell under that cell's weight."""
        left = np.array([instant_welfare(self.params, *self.split(xs[k]), theta_cells[k])
                         for k in range(self.steps)])
        right = np.array([instant_welfare(self.params, *self.split(xs[k + 1]), theta_cells[k])
                          for k in range(self.steps)])
        return left, right

    def objective(self, xs, theta_cells) -> float:
        left, right = self.welfare_path(xs, theta_cells)
        d = self.discount
        return float(0.5 * self.dt * np.sum(d[:-1] * left + d[1:] * right))

    def backward(self, xs, theta_cells) -> Array:
        """RK4 on the reversed clock from ``lambda(T) = 0``.

        Within each cell the costate is written ``lambda = exp(rho (t - t_end)) z``,
        which removes the ``rho lambda`` term from what RK4 has to resolve and
        keeps the sweep stable when ``rho * dt`` is large. The states are
        interpolated linearly between grid nodes.
        """
        lam = np.zeros_like(xs)
        rho = self.params.discount_rate
        for k in range(self.steps - 1, -1, -1):
            theta = theta_cells[k]
            x_left, x_right = xs[k], xs[k + 1]
            t0, t1 = self.times[k], self.times[k + 1]

            def g(t, z, x_left=x_left, x_right=x_right, theta=theta, t0=t0, t1=t1):
                w = (t - t0) / self.dt
                n, q = self.split((1 - w) * x_left + w * x_right)
                factor = np.exp(rho * (t - t1))
                return -_gradients(self.params, n, q, theta, factor * z, self.joint)[0] / factor

            z = rk4_step(g, t1, lam[k + 1], -self.dt)
            lam[k] = np.exp(-rho * self.dt) * z
        return lam

    def control_gradients(self, xs, lam, theta_cells):
        """Current-value ``dH/dtheta`` at both ends of every cell."""
        left = np.empty((self.steps, self.N))
        right = np.empty((self.steps, self.N))
        for k in range(self.steps):
            n, q = self.split(xs[k])
            left[k] = _gradients(self.params, n, q, theta_cells[k], lam[k], self.joint)[1]
            n, q = self.split(xs[k + 1])
            right[k] = _gradients(self.params, n, q, theta_cells[k], lam[k + 1], self.joint)[1]
        return left, right


def discounted_welfare_of(params: MarketParams, initial: MarketState, theta_cells,
                          horizon: float, joint_quality: bool = False) -> float:
    """Discounted welfare of a piecewise-constant allocation path (one row per cell)."""
    theta_cells = np.asarray(theta_cells, dtype=float)
    grid = _Grid(params, initial, horizon, theta_cells.shape[0], joint_quality)
    return grid.objective(grid.forward(theta_cells), theta_cells)


def _residuals(theta_cells, h_left, h_right):
    h = 0.5 * (h_left + h_right)
    return np.array([np.max(np.abs(th - simplex_project(th + g))) for th, g in zip(theta_cells, h)])


def solve_fbsm(params: MarketParams, initial: MarketState, horizon: float, steps: int,
               tol: float = 1e-6, max_sweeps: int = 200, relaxation: float = 1.0,
               joint_quality: bool = False) -> ControlSolution:
    """Forward-backward sweep.

    Each sweep integrates the state forward under the current allocation
    path, integrates costates backward from ``lambda(T) = 0``, and moves every
    cell's weight along the projected current-value ``dH/dtheta``, blended with
    the old path by ``relaxation``. The step length is backtracked until the
    discounted welfare does not decrease, so accepted sweeps are monotone.
    """
    initial.check_for(params)
    if not 0 < relaxation <= 1:
        raise ValueError("relaxation must lie in (0, 1]")
    grid = _Grid(params, initial, horizon, steps, joint_quality)
    theta = np.tile(initial.allocation, (steps, 1))
    xs = grid.forward(theta)
    value = grid.objective(xs, theta)
    history = [value]
    step = None
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        lam = grid.backward(xs, theta)
        h_left, h_right = grid.control_gradients(xs, lam, theta)
        residual = _residuals(theta, h_left, h_right)
        if residual.max() <= tol:
            break
        # current-value gradient: a positive per-cell rescaling of the discounted
        # one, so still an ascent direction, but late cells keep moving when
        # exp(-rho t) is tiny
        direction = 0.5 * (h_left + h_right)
        if step is None:
            step = 1.0 / max(float(np.max(np.abs(direction))), 1e-300)
        step *= 2
        accepted = False
        for _ in range(80):
            proposal = np.array([simplex_project(th + step * g) for th, g in zip(theta, direction)])
            cand = (1 - relaxation) * theta + relaxation * proposal
            cand_xs = grid.forward(cand)
            cand_value = grid.objective(cand_xs, cand)
            if cand_value >= value:
                accepted = True
                break
            step *= 0.5
        change = float(np.max(np.abs(cand - theta))) if accepted else 0.0
        if not accepted or change == 0.0:
            break
        theta, xs, value = cand, cand_xs, cand_value
        history.append(value)
        if change <= tol:
            break

    lam = grid.backward(xs, theta)
    h_left, h_right = grid.control_gradients(xs, lam, theta)
    residual = _residuals(theta, h_left, h_right)
    converged = bool(residual.max() <= tol)
    left, right = grid.welfare_path(xs, theta)
    nodes_theta = np.vstack([theta, theta[-1:]])
    n_path = xs[:, : params.n_streamers]
    q_path = xs[:, params.n_streamers:] if joint_quality else np.tile(grid.q0, (steps + 1, 1))
    return ControlSolution(
        times=grid.times,
        theta_path=nodes_theta,
        costates=lam,
        viewers=n_path,
        quality=q_path,
        welfare_path=np.append(left, right[-1]),
        discounted_welfare=value,
        foc_residual_path=np.append(residual, residual[-1]),
        converged=bool(converged),
        sweeps=sweeps,
        welfare_history=history,
    )
