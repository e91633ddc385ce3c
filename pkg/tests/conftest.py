import numpy as np
import pytest

from streammarket.market import CostSpec, MarketParams, MarketState


def random_params(rng, n=None, **overrides):
    """Moderate random market: utilities stay O(1) so every channel matters."""
    n = n if n is not None else int(rng.integers(2, 6))
    kw = dict(
        n_streamers=n,
        total_viewers=float(rng.uniform(50, 500)),
        attractiveness=rng.uniform(0.1, 1.0, n),
        price=rng.uniform(0.0, 0.5, n),
        network_effect=float(rng.uniform(0.0, 0.01)),
        viewer_speed=float(rng.uniform(0.5, 2.0)),
        quality_speed=float(rng.uniform(0.5, 2.0)),
        platform_cut=float(rng.uniform(0.0, 0.5)),
        revenue_rate=float(rng.uniform(0.5, 2.0)),
        traffic_sensitivity=float(rng.uniform(0.0, 2.0)),
        discount_rate=float(rng.uniform(0.05, 0.5)),
        cost=CostSpec.quadratic(float(rng.uniform(5.0, 50.0))) if rng.random() < 0.5
        else CostSpec.cubic(float(rng.uniform(1.0, 5.0)), float(rng.uniform(0.5, 3.0))),
    )
    kw.update(overrides)
    return MarketParams(**kw)


def random_state(rng, params):
    n = params.n_streamers
    return MarketState(
        viewers=params.total_viewers * rng.dirichlet(np.ones(n)),
        quality=rng.uniform(0.0, 2.0, n),
        allocation=rng.dirichlet(np.ones(n)),
    )


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scenario_params(n=4, m=1000.0, beta=0.0, frozen=True, **kw):
    """Well-behaved symmetric scenario used across the suite."""
    return MarketParams.symmetric(
        n, m, attractiveness=0.05, price=0.0, network_effect=beta,
        quality_speed=0.0 if frozen else 1.0, cost=CostSpec.quadratic(1.0), **kw,
    )


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
