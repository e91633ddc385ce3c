import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_params, random_state
from streammarket.market import (
    CostSpec,
    MarketParams,
    MarketState,
    choice_probabilities,
    probabilities,
    probability_values,
    probability_jacobians,
    quality_drift,
    streamer_profit,
    utilities,
    viewer_drift,
)


def two(alpha=(1.0, 1.0), price=(0.0, 0.0), **kw):
    return MarketParams(n_streamers=2, total_viewers=kw.pop("total_viewers", 100.0),
                        attractiveness=np.array(alpha), price=np.array(price), **kw)


class TestUtilities:
    def test_all_terms_vanish(self):
        p = two()
        s = MarketState([50, 50], [0, 0], [0.5, 0.5])
        np.testing.assert_array_equal(utilities(p, s), [0.0, 0.0])

    def test_direct_arithmetic(self):
        p = two(alpha=(2, 1), price=(1, 0), network_effect=0.01)
        s = MarketState([100, 50], [3, 1], [0.5, 0.5])
        np.testing.assert_allclose(utilities(p, s), [6.0, 1.5], rtol=0, atol=1e-14)

    def test_allocation_term_only(self):
        p = two(alpha=(0, 0), traffic_sensitivity=0.5)
        s = MarketState([0, 0], [0, 0], [1, 0])
        np.testing.assert_array_equal(utilities(p, s), [0.5, 0.0])


class TestChoiceProbabilities:
    def test_uniform(self):
        np.testing.assert_allclose(choice_probabilities([0, 0, 0]), [1 / 3] * 3, atol=1e-15)

    def test_log_two(self):
        np.testing.assert_allclose(choice_probabilities([math.log(2), 0]), [2 / 3, 1 / 3], atol=1e-15)

    def test_large_utilities(self):
        p = choice_probabilities([1000, 1000, 999])
        assert np.all(np.isfinite(p))
        assert p[0] == p[1] and p[2] < p[0]
        assert abs(p.sum() - 1) < 1e-15

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 0.0], [-np.inf, 1.0]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(ValueError, match="invalid utility"):
            choice_probabilities(bad)

    @given(st.lists(st.floats(-700, 700), min_size=1, max_size=12), st.floats(-300, 300))
    @settings(max_examples=200, deadline=None)
    def test_shift_invariance_and_bounds(self, v, c):
        v = np.array(v)
        p = choice_probabilities(v)
        assert abs(p.sum() - 1) <= 1e-12
        assert np.all(p >= 0) and np.all(p <= 1)
        np.testing.assert_allclose(choice_probabilities(v + c), p, rtol=0, atol=1e-12)

    def test_strict_bounds_moderate(self, rng):
        for _ in range(50):
            p = choice_probabilities(rng.normal(0, 5, 6))
            assert np.all((p > 0) & (p < 1))


def _fd_probability_jacobians(params, state, h=1e-6):
    out = []
    for field in ("viewers", "quality", "allocation"):
        base = getattr(state, field)
        cols = []
        for j in range(params.n_streamers):
            step = h * max(1.0, abs(base[j]))
            up, dn = base.copy(), base.copy()
            up[j] += step
            dn[j] -= step
            pu = probability_values(params, **_raw(state, field, up))
            pd = probability_values(params, **_raw(state, field, dn))
            cols.append((pu - pd) / (2 * step))
        out.append(np.column_stack(cols))
    return out


def _raw(state, field, value):
    """Raw arrays, so that finite differences may leave the simplex."""
    kw = dict(viewers=state.viewers, quality=state.quality, allocation=state.allocation)
    kw[field] = value
    return kw


class TestProbabilityJacobians:
    def test_two_streamer_example(self):
        p = two(network_effect=0.01)
        s = MarketState([50, 50], [0, 0], [0.5, 0.5])
        dn, _, _ = probability_jacobians(p, s)
        assert dn[0, 0] == pytest.approx(0.0025, abs=1e-15)
        assert dn[0, 1] == pytest.approx(-0.0025, abs=1e-15)
        fd = _fd_probability_jacobians(p, s)[0]
        np.testing.assert_allclose(dn, fd, atol=1e-8)

    def test_beta_zero(self, rng):
        p = random_params(rng, network_effect=0.0)
        dn, _, _ = probability_jacobians(p, random_state(rng, p))
        assert np.all(dn == 0)

    def test_column_sums_and_fd_oracle(self, rng):
        worst = 0.0
        for _ in range(100):
            p = random_params(rng)
            s = random_state(rng, p)
            analytic = probability_jacobians(p, s)
            for a, f in zip(analytic, _fd_probability_jacobians(p, s)):
                assert np.max(np.abs(a.sum(axis=0))) <= 1e-12
                scale = max(np.max(np.abs(a)), 1e-12)
                worst = max(worst, np.max(np.abs(a - f)) / scale)
        assert worst <= 1e-6

    def test_monotonicity(self, rng):
        p = random_params(rng, n=4, network_effect=0.005)
        s = random_state(rng, p)
        base = probabilities(p, s)
        q = s.quality.copy()
        q[1] += 0.1
        assert probabilities(p, s.replace(quality=q))[1] > base[1]
        n = s.viewers.copy()
        n[2] += 5.0
        assert probability_values(p, n, s.quality, s.allocation)[0] < base[0]


class TestProfitAndDrifts:
    def test_profit_zero_cost(self):
        p = two(platform_cut=0.2)
        assert streamer_profit(p, MarketState([100, 0], [0, 0], [0.5, 0.5]), 0) == pytest.approx(80.0)

    def test_profit_quadratic(self):
        p = two(platform_cut=0.2, cost=CostSpec.quadratic(1.0))
        assert streamer_profit(p, MarketState([100, 0], [10, 0], [0.5, 0.5]), 0) == pytest.approx(30.0)

    def test_profit_index_range(self):
        p = two()
        with pytest.raises(IndexError):
            streamer_profit(p, MarketState([50, 50], [0, 0], [0.5, 0.5]), 2)

    @pytest.mark.parametrize("tau", [1.0, 1.5, -0.1])
    def test_platform_cut_rejected(self, tau):
        with pytest.raises(ValueError, match="platform_cut"):
            two(platform_cut=tau)

    def test_quality_drift_example(self):
        eta = 0.7
        p = two(total_viewers=100.0, platform_cut=0.2, quality_speed=eta)
        s = MarketState([50, 50], [0, 0], [0.5, 0.5])
        np.testing.assert_allclose(quality_drift(p, s), [20 * eta, 20 * eta], rtol=1e-14)
        # the sign agrees with the slope of the profit the streamer expects at q=0
        def expected_profit(q):
            from streammarket.market import choice_probabilities as cp
            share = cp([q, 0.0])[0]
            return 0.8 * 100 * share - q**2 / 2
        slope = (expected_profit(1e-4) - expected_profit(-1e-4)) / 2e-4
        assert slope == pytest.approx(20.0, rel=1e-6)

    def test_quality_drift_vanishes_at_foc(self):
        p = two(total_viewers=100.0, platform_cut=0.2)
        # symmetric: c'(q) = q = 80 * 0.25 = 20
        s = MarketState([50, 50], [20, 20], [0.5, 0.5])
        np.testing.assert_allclose(quality_drift(p, s), 0.0, atol=1e-12)

    def test_quality_drift_negative_for_huge_quality(self):
        p = two(total_viewers=100.0)
        s = MarketState([50, 50], [1e6, 0], [0.5, 0.5])
        assert quality_drift(p, s)[0] < 0

    def test_viewer_drift(self):
        p = two(total_viewers=100.0, viewer_speed=1.5)
        s = MarketState([60, 40], [0, 0], [0.5, 0.5])
        np.testing.assert_allclose(viewer_drift(p, s), [-15.0, 15.0], atol=1e-12)
        steady = MarketState([50, 50], [0, 0], [0.5, 0.5])
        np.testing.assert_array_equal(viewer_drift(p, steady), [0.0, 0.0])

    def test_viewer_drift_conserves(self, rng):
        for _ in range(20):
            p = random_params(rng)
            d = viewer_drift(p, random_state(rng, p))
            assert abs(d.sum()) <= 1e-9 * p.total_viewers


class TestCostSpec:
    @pytest.mark.parametrize("cost", [CostSpec.quadratic(2.0), CostSpec.cubic(1.5, 0.7)])
    def test_convexity_and_derivatives(self, cost):
        q = np.linspace(1e-3, 50, 400)
        assert cost.value(0.0) == 0.0
        assert np.all(cost.d1(q) > 0) and np.all(cost.d2(q) > 0)
        h = 1e-5
        for f, df in ((cost.value, cost.d1), (cost.d1, cost.d2), (cost.d2, cost.d3)):
            fd = (f(q + h) - f(q - h)) / (2 * h)
            np.testing.assert_allclose(df(q), fd, rtol=1e-6, atol=1e-6)

    def test_quadratic_third_derivative_zero(self):
        assert np.all(CostSpec.quadratic(3.0).d3(np.array([0.0, 1.0, 5.0])) == 0)

    @pytest.mark.parametrize("kw", [dict(kind="quadratic", kappa=0.0), dict(kind="cubic", a=-1, b=1),
                                    dict(kind="quartic")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError, match="cost"):
            CostSpec(**kw)


class TestValidation:
    @pytest.mark.parametrize("field,value", [
        ("total_viewers", 0.0), ("network_effect", -0.1), ("viewer_speed", 0.0),
        ("quality_speed", -1.0), ("revenue_rate", 0.0), ("traffic_sensitivity", -1.0),
        ("discount_rate", -0.5), ("total_viewers", float("nan")),
    ])
    def test_scalar_rejections_name_field(self, field, value):
        with pytest.raises(ValueError, match=field):
            two(**{field: value})

    def test_vector_length(self):
        with pytest.raises(ValueError, match="attractiveness"):
            MarketParams(n_streamers=3, total_viewers=10, attractiveness=[1, 1], price=[0, 0, 0])

    def test_negative_price(self):
        with pytest.raises(ValueError, match="price"):
            two(price=(-1, 0))

    def test_state_allocation_sum(self):
        with pytest.raises(ValueError, match="allocation does not sum to 1"):
            MarketState([1, 1], [0, 0], [0.6, 0.5])

    def test_state_negative_entries(self):
        with pytest.raises(ValueError, match="viewers"):
            MarketState([-1, 1], [0, 0], [0.5, 0.5])
        with pytest.raises(ValueError, match="quality"):
            MarketState([1, 1], [0, -1], [0.5, 0.5])

    def test_immutable(self):
        p = two()
        with pytest.raises(ValueError):
            p.attractiveness[0] = 5.0
