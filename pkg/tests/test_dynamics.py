import numpy as np
import pytest

from conftest import random_params, random_state, scenario_params
from streammarket.dynamics import (
    DivergenceError,
    IntegratorConfig,
    drift_jacobian,
    drift_values,
    integrate,
    path_dependence_experiment,
)
from streammarket.equilibrium import polish_steady_state, solve_steady_state, symmetric_steady_state
from streammarket.market import CostSpec, MarketParams, MarketState


def closed_form(n0, M, gamma, t):
    N = len(n0)
    return M / N + (np.asarray(n0)[None, :] - M / N) * np.exp(-gamma * np.asarray(t))[:, None]


class TestIntegratorConfig:
    @pytest.mark.parametrize("kw,msg", [
        (dict(step=0.0), "step"), (dict(horizon=-1), "horizon"), (dict(step=2, horizon=1), "exceed"),
        (dict(method="rk45"), "method"), (dict(record_every=0), "record_every"),
    ])
    def test_rejections(self, kw, msg):
        with pytest.raises(ValueError, match=msg):
            IntegratorConfig(**kw)

    def test_stability_guard(self):
        p = scenario_params(n=2, viewer_speed=50.0)
        cfg = IntegratorConfig(step=0.05, horizon=1.0)
        with pytest.raises(ValueError, match="viewer_speed"):
            integrate(p, MarketState.uniform(p), cfg)


class TestIntegrate:
    def test_closed_form_beta_zero(self):
        gamma = 1.7
        p = MarketParams.symmetric(2, 100.0, attractiveness=1.0, viewer_speed=gamma, quality_speed=0.0)
        cfg = IntegratorConfig(step=0.01 / gamma, horizon=10 / gamma)
        traj = integrate(p, MarketState([60, 40], [0, 0], [0.5, 0.5]), cfg)
        exact = closed_form([60, 40], 100.0, gamma, traj.times)
        assert np.max(np.abs(traj.viewers - exact) / exact) <= 1e-6
        assert np.all(np.diff(traj.viewers[:, 0]) < 0) and np.all(np.diff(traj.viewers[:, 1]) > 0)

    def test_steady_state_invariant(self):
        p = scenario_params(n=3, beta=0.001, frozen=False)
        s = symmetric_steady_state(p)
        traj = integrate(p, s, IntegratorConfig(step=0.01, horizon=5.0))
        assert np.max(np.abs(traj.viewers - s.viewers)) <= 1e-9 * p.total_viewers
        assert np.max(np.abs(traj.quality - s.quality)) <= 1e-9 * max(1, s.quality.max())

    def test_rk4_matches_fine_euler(self, rng):
        p = random_params(rng, n=3)
        s = random_state(rng, p)
        rk = integrate(p, s, IntegratorConfig(step=1e-3, horizon=1.0))
        eu = integrate(p, s, IntegratorConfig(step=1e-4, horizon=1.0, method="euler"))
        a = np.concatenate([rk.viewers[-1], rk.quality[-1]])
        b = np.concatenate([eu.viewers[-1], eu.quality[-1]])
        assert np.max(np.abs(a - b) / np.maximum(np.abs(a), 1.0)) <= 1e-4

    def test_conservation(self, rng):
        for _ in range(5):
            p = random_params(rng)
            s = random_state(rng, p)
            traj = integrate(p, s, IntegratorConfig(step=0.02, horizon=5.0))
            assert np.max(np.abs(traj.viewers.sum(axis=1) - p.total_viewers)) <= 1e-6 * p.total_viewers

    def test_recording(self):
        p = scenario_params(n=2)
        traj = integrate(p, MarketState.uniform(p), IntegratorConfig(step=0.1, horizon=1.05, record_every=3))
        assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(1.05)
        assert np.all(np.diff(traj.times) > 0)
        np.testing.assert_allclose(traj.hhi, np.sum(traj.shares**2, axis=1))

    def test_quality_clamped(self):
        p = MarketParams.symmetric(2, 10.0, attractiveness=0.0, quality_speed=150.0, cost=CostSpec.quadratic(1.0))
        s = MarketState([5, 5], [1.0, 1.0], [0.5, 0.5])
        traj = integrate(p, s, IntegratorConfig(step=0.01, horizon=0.1, method="euler"))
        assert np.all(traj.quality >= 0) and np.any(traj.quality == 0)

    def test_theta_schedule(self):
        p = scenario_params(n=2, traffic_sensitivity=1.0)
        traj = integrate(p, MarketState.uniform(p), IntegratorConfig(step=0.01, horizon=3.0),
                         theta_schedule=lambda t: np.array([1.0, 0.0]))
        assert traj.viewers[-1, 0] > traj.viewers[-1, 1]
        np.testing.assert_array_equal(traj.allocation[-1], [1.0, 0.0])

    def test_divergence_reports_last_state(self):
        p = scenario_params(n=2, traffic_sensitivity=1.0)
        sched = lambda t: np.array([0.5, 0.5]) if t < 0.5 else np.array([np.nan, 0.5])
        with pytest.raises(DivergenceError, match="divergence at t=") as info:
            integrate(p, MarketState.uniform(p), IntegratorConfig(step=0.1, horizon=1.0), theta_schedule=sched)
        assert isinstance(info.value.last_state, MarketState)
        assert 0.4 < info.value.t <= 0.7

    def test_converges_to_equilibrium_below_critical(self, rng):
        p = scenario_params(n=3, beta=0.001, frozen=False)
        for _ in range(3):
            n0 = p.total_viewers * rng.dirichlet(np.ones(3))
            s = MarketState(n0, rng.uniform(0, 5, 3), np.full(3, 1 / 3))
            final = integrate(p, s, IntegratorConfig(step=0.05, horizon=60.0)).final_state
            eq = polish_steady_state(p, solve_steady_state(p, s).state)
            assert eq.converged
            assert np.max(np.abs(final.viewers - eq.state.viewers)) <= 1e-5 * p.total_viewers


class TestDriftJacobian:
    @pytest.mark.parametrize("normalized", [False, True])
    def test_matches_finite_difference(self, rng, normalized):
        for _ in range(20):
            p = random_params(rng, normalized_quality_drift=normalized)
            s = random_state(rng, p)
            x = np.concatenate([s.viewers, s.quality + 0.5])
            N = p.n_streamers
            jac = drift_jacobian(p, x[:N], x[N:], s.allocation)
            fd = np.empty_like(jac)
            for j in range(2 * N):
                h = 1e-6 * max(1, abs(x[j]))
                up, dn = x.copy(), x.copy()
                up[j] += h
                dn[j] -= h
                fd[:, j] = (drift_values(p, up[:N], up[N:], s.allocation)
                            - drift_values(p, dn[:N], dn[N:], s.allocation)) / (2 * h)
            assert np.max(np.abs(jac - fd)) <= 1e-6 * max(1.0, np.max(np.abs(jac)))


class TestPathDependence:
    def test_beta_zero_closed_form(self):
        p = scenario_params(n=2, beta=0.0)
        eps = 10.0
        rep = path_dependence_experiment(p, eps, IntegratorConfig(step=0.01, horizon=30.0))
        np.testing.assert_allclose(rep.delta_n, 2 * eps * np.exp(-rep.times), rtol=1e-6, atol=1e-9)
        assert rep.dominant is None and not rep.crossover

    def test_epsilon_zero(self):
        p = scenario_params(n=3, beta=0.002)
        rep = path_dependence_experiment(p, 0.0, IntegratorConfig(step=0.05, horizon=5.0))
        assert np.all(rep.delta_n == 0) and not rep.crossover

    def test_above_critical_leader_wins(self):
        p = scenario_params(n=2, beta=0.006)
        rep = path_dependence_experiment(p, 1.0, IntegratorConfig(step=0.05, horizon=50.0))
        assert rep.dominant == 0 and rep.final_shares[0] >= 0.99
        assert np.all(rep.delta_n > 0)

    def test_rejections(self):
        asym = MarketParams(n_streamers=2, total_viewers=10, attractiveness=[1, 2], price=[0, 0])
        with pytest.raises(ValueError, match="params not symmetric"):
            path_dependence_experiment(asym, 0.1, IntegratorConfig())
        with pytest.raises(ValueError, match="epsilon"):
            path_dependence_experiment(scenario_params(n=2), 600.0, IntegratorConfig())
