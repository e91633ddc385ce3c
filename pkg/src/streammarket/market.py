"""Domain types, the logit choice rule, and its analytic derivatives.

Everything here is a pure function of immutable inputs. The ``*_values``
kernels work on raw arrays so that finite-difference checks can perturb a
single coordinate without going through ``MarketState`` validation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


def _frozen_array(values, name: str, size: int | None = None) -> Array:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name}: expected a 1-d vector, got shape {arr.shape}")
    if size is not None and arr.shape[0] != size:
        raise ValueError(f"{name}: expected length {size}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CostSpec:
    """Convex quality cost.

    ``kind="quadratic"`` gives ``c(q) = kappa q^2 / 2``; ``kind="cubic"``
    gives ``c(q) = a q^2 + b q^3`` on ``q >= 0``.
    """

    kind: str = "quadratic"
    kappa: float = 1.0
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        if self.kind == "quadratic":
            if not self.kappa > 0:
                raise ValueError("cost.kappa must be > 0")
        elif self.kind == "cubic":
            if not (self.a > 0 and self.b > 0):
                raise ValueError("cost.a and cost.b must be > 0")
        else:
            raise ValueError(f"cost.kind must be 'quadratic' or 'cubic', got {self.kind!r}")

    @classmethod
    def quadratic(cls, kappa: float = 1.0) -> "CostSpec":
        return cls(kind="quadratic", kappa=kappa)

    @classmethod
    def cubic(cls, a: float, b: float) -> "CostSpec":
        return cls(kind="cubic", kappa=0.0, a=a, b=b)

    def value(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * self.kappa * q**2
        return self.a * q**2 + self.b * q**3

    def d1(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "quadratic":
            return self.kappa * q
        return 2 * self.a * q + 3 * self.b * q**2

    def d2(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "quadratic":
            return np.full_like(q, self.kappa)
        return 2 * self.a + 6 * self.b * q

    def d3(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "quadratic":
            return np.zeros_like(q)
        return np.full_like(q, 6 * self.b)


@dataclass(frozen=True)
class MarketParams:
    """Exogenous constants of the attention market.

    Vectors (``attractiveness``, ``price``) have one entry per streamer.
    ``quality_speed == 0`` freezes content quality; the dynamics, the
    steady-state solver and the stability analysis then treat quality as a
    fixed parameter.

    ``normalized_quality_drift`` divides the quality drift by ``c''(q)``
    (a Newton-scaled gradient step) instead of using the plain gradient law.
    """

    n_streamers: int
    total_viewers: float
    attractiveness: Array
    price: Array
    network_effect: float = 0.0
    viewer_speed: float = 1.0
    quality_speed: float = 1.0
    platform_cut: float = 0.2
    revenue_rate: float = 1.0
    traffic_sensitivity: float = 0.0
    discount_rate: float = 0.1
    cost: CostSpec = field(default_factory=CostSpec)
    normalized_quality_drift: bool = False

    def __post_init__(self):
        n = self.n_streamers
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise ValueError("n_streamers must be a positive integer")
        object.__setattr__(self, "n_streamers", int(n))
        object.__setattr__(self, "attractiveness", _frozen_array(self.attractiveness, "attractiveness", n))
        object.__setattr__(self, "price", _frozen_array(self.price, "price", n))
        if np.any(self.attractiveness < 0):
            raise ValueError("attractiveness must be >= 0")
        if np.any(self.price < 0):
            raise ValueError("price must be >= 0")
        checks = [
            ("total_viewers", self.total_viewers > 0, "> 0"),
            ("network_effect", self.network_effect >= 0, ">= 0"),
            ("viewer_speed", self.viewer_speed > 0, "> 0"),
            ("quality_speed", self.quality_speed >= 0, ">= 0"),
            ("platform_cut", 0 <= self.platform_cut < 1, "in [0, 1)"),
            ("revenue_rate", self.revenue_rate > 0, "> 0"),
            ("traffic_sensitivity", self.traffic_sensitivity >= 0, ">= 0"),
            ("discount_rate", self.discount_rate >= 0, ">= 0"),
        ]
        for name, ok, rule in checks:
            value = getattr(self, name)
            if not np.isfinite(value) or not ok:
                raise ValueError(f"{name} must be {rule}, got {value!r}")
            object.__setattr__(self, name, float(value))
        if not isinstance(self.cost, CostSpec):
            raise ValueError("cost must be a CostSpec")

    @classmethod
    def symmetric(cls, n_streamers: int, total_viewers: float, attractiveness: float = 1.0,
                  price: float = 0.0, **kwargs) -> "MarketParams":
        """Identical streamers; remaining keyword arguments pass through."""
        return cls(
            n_streamers=n_streamers,
            total_viewers=total_viewers,
            attractiveness=np.full(n_streamers, attractiveness),
            price=np.full(n_streamers, price),
            **kwargs,
        )

    def replace(self, **changes) -> "MarketParams":
        return dataclasses.replace(self, **changes)

    @property
    def quality_frozen(self) -> bool:
        return self.quality_speed == 0.0

    @property
    def is_symmetric(self) -> bool:
        return bool(np.all(self.attractiveness == self.attractiveness[0])
                    and np.all(self.price == self.price[0]))

    @property
    def marginal_revenue_scale(self) -> Array:
        """``(1 - tau) R M alpha_i``, the right-hand side of the quality FOC
        before the ``P_i (1 - P_i)`` factor."""
        return (1 - self.platform_cut) * self.revenue_rate * self.total_viewers * self.attractiveness


@dataclass(frozen=True)
class MarketState:
    """Viewer counts, content qualities and allocation weights at one instant."""

    viewers: Array
    quality: Array
    allocation: Array

    def __post_init__(self):
        n = _frozen_array(self.viewers, "viewers")
        size = n.shape[0]
        q = _frozen_array(self.quality, "quality", size)
        theta = _frozen_array(self.allocation, "allocation", size)
        if np.any(n < 0):
            raise ValueError("viewers must be >= 0")
        if np.any(q < 0):
            raise ValueError("quality must be >= 0")
        if np.any(theta < 0):
            raise ValueError("allocation must be >= 0")
        if abs(theta.sum() - 1.0) > 1e-12 * max(1, size):
            raise ValueError("allocation does not sum to 1")
        object.__setattr__(self, "viewers", n)
        object.__setattr__(self, "quality", q)
        object.__setattr__(self, "allocation", theta)

    @classmethod
    def uniform(cls, params: MarketParams, quality=0.0) -> "MarketState":
        n = params.n_streamers
        return cls(
            viewers=np.full(n, params.total_viewers / n),
            quality=np.broadcast_to(np.asarray(quality, dtype=float), (n,)).copy(),
            allocation=np.full(n, 1.0 / n),
        )

    def replace(self, **changes) -> "MarketState":
        return dataclasses.replace(self, **changes)

    def check_for(self, params: MarketParams) -> None:
        if self.viewers.shape[0] != params.n_streamers:
            raise ValueError(
                f"state has {self.viewers.shape[0]} streamers, params expect {params.n_streamers}"
            )


# --------------------------------------------------------------------------
# array kernels


def utility_values(params: MarketParams, viewers, quality, allocation) -> Array:
    return (params.attractiveness * quality - params.price
            + params.network_effect * np.asarray(viewers, dtype=float)
            + params.traffic_sensitivity * np.asarray(allocation, dtype=float))


def softmax(v) -> Array:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("invalid utility")
    z = np.exp(v - v.max())
    return z / z.sum()


def logsumexp(v) -> float:
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("invalid utility")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def probability_values(params: MarketParams, viewers, quality, allocation) -> Array:
    return softmax(utility_values(params, viewers, quality, allocation))


def logit_derivative(probs: Array) -> Array:
    """``d P_i / d V_j = P_i (delta_ij - P_j)``."""
    return np.diag(probs) - np.outer(probs, probs)


def quality_drift_values(params: MarketParams, probs: Array, quality: Array) -> Array:
    gain = params.marginal_revenue_scale * probs * (1 - probs) - params.cost.d1(quality)
    if params.normalized_quality_drift:
        gain = gain / params.cost.d2(quality)
    return params.quality_speed * gain


# --------------------------------------------------------------------------
# state-level operations


def utilities(params: MarketParams, state: MarketState) -> Array:
    """``V_i = alpha_i q_i - p_i + beta n_i + phi theta_i``."""
    state.check_for(params)
    return utility_values(params, state.viewers, state.quality, state.allocation)


def choice_probabilities(v) -> Array:
    """Multinomial-logit shares of a utility vector (max-shifted)."""
    return softmax(v)


def probabilities(params: MarketParams, state: MarketState) -> Array:
    return softmax(utilities(params, state))


def probability_jacobians(params: MarketParams, state: MarketState):
    """Return ``(dP_dn, dP_dq, dP_dtheta)``; entry ``[i, j]`` is ``dP_i/dx_j``."""
    base = logit_derivative(probabilities(params, state))
    return (
        params.network_effect * base,
        base * params.attractiveness[np.newaxis, :],
        params.traffic_sensitivity * base,
    )


def streamer_profit(params: MarketParams, state: MarketState, i: int) -> float:
    """``(1 - tau) R n_i - c(q_i)``."""
    state.check_for(params)
    if not 0 <= i < params.n_streamers:
        raise IndexError(f"streamer index {i} out of range [0, {params.n_streamers})")
    revenue = (1 - params.platform_cut) * params.revenue_rate * state.viewers[i]
    return float(revenue - params.cost.value(state.quality[i]))


def quality_drift(params: MarketParams, state: MarketState) -> Array:
    """Gradient-ascent quality adjustment.

    ``q_dot_i = eta [(1 - tau) R M alpha_i P_i (1 - P_i) - c'(q_i)]``, divided by
    ``c''(q_i)`` when ``params.normalized_quality_drift`` is set. Zero exactly
    when the streamer's first-order condition holds.
    """
    return quality_drift_values(params, probabilities(params, state), state.quality)


def viewer_drift(params: MarketParams, state: MarketState) -> Array:
    """``n_dot_i = gamma (M P_i - n_i)``."""
    probs = probabilities(params, state)
    return params.viewer_speed * (params.total_viewers * probs - state.viewers)
