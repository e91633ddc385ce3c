"""Concentration metrics and the welfare decomposition ``W = CS + PS + Pi``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .equilibrium import polish_steady_state, solve_steady_state, symmetric_steady_state
from .market import Array, MarketParams, MarketState, logsumexp, utilities
from .stability import EquilibriumFailure, critical_beta

__all__ = [
    "ConservationError",
    "WelfareBreakdown",
    "HeadEffectComparison",
    "HEAD_EFFECT_THRESHOLD",
    "shares_and_hhi",
    "consumer_surplus",
    "producer_surplus",
    "platform_profit",
    "welfare_breakdown",
    "head_effect_comparison",
]

HEAD_EFFECT_THRESHOLD = 0.99


class ConservationError(ValueError):
    pass


@dataclass(frozen=True)
class WelfareBreakdown:
    consumer_surplus: float
    producer_surplus: float
    platform_profit: float
    total: float
    shares: Array
    hhi: float
    head_effect: bool


def _active_mask(params: MarketParams, active) -> Array:
    if active is None:
        return np.ones(params.n_streamers, dtype=bool)
    mask = np.asarray(active, dtype=bool)
    if mask.shape != (params.n_streamers,) or not mask.any():
        raise ValueError("active must be a boolean vector with at least one True entry")
    return mask


def shares_and_hhi(state: MarketState, total_viewers: float) -> tuple[Array, float]:
    """Market shares ``n_i / M`` and the Herfindahl-Hirschman index."""
    total = float(np.sum(state.viewers))
    if abs(total - total_viewers) > 1e-3 * total_viewers:
        raise ConservationError(f"viewers sum to {total!r}, expected {total_viewers!r}")
    shares = state.viewers / total_viewers
    return shares, float(np.sum(shares**2))


def consumer_surplus(params: MarketParams, state: MarketState, active=None) -> float:
    """``M * log sum_k exp(V_k)`` over the streamers still in the market.

    The additive Euler-Mascheroni constant of the expected maximum is dropped.
    """
    mask = _active_mask(params, active)
    return params.total_viewers * logsumexp(utilities(params, state)[mask])


def producer_surplus(params: MarketParams, state: MarketState, active=None) -> float:
    """Sum of streamer profits ``(1-tau) R n_i - c(q_i)``; exited streamers
    earn and spend nothing."""
    mask = _active_mask(params, active)
    revenue = (1 - params.platform_cut) * params.revenue_rate * state.viewers
    return float(np.sum((revenue - params.cost.value(state.quality))[mask]))


def platform_profit(params: MarketParams, state: MarketState) -> float:
    return float(params.platform_cut * params.revenue_rate * np.sum(state.viewers))


def welfare_breakdown(params: MarketParams, state: MarketState, active=None,
                      threshold: float = HEAD_EFFECT_THRESHOLD) -> WelfareBreakdown:
    """Evaluate all welfare components at ``state``.

    ``active`` marks streamers still in the market; inactive ones must carry
    no viewers and are excluded from the choice set and from costs.
    """
    state.check_for(params)
    mask = _active_mask(params, active)
    if np.any(state.viewers[~mask] != 0):
        raise ValueError("inactive streamers must have zero viewers")
    shares, hhi = shares_and_hhi(state, params.total_viewers)
    cs = consumer_surplus(params, state, mask)
    ps = producer_surplus(params, state, mask)
    pi = platform_profit(params, state)
    return WelfareBreakdown(
        consumer_surplus=cs,
        producer_surplus=ps,
        platform_profit=pi,
        total=cs + ps + pi,
        shares=shares,
        hhi=hhi,
        head_effect=bool(shares.max() >= threshold),
    )


@dataclass(frozen=True)
class HeadEffectComparison:
    """Welfare with and without concentration.

    ``concentrated`` is the concentrated steady state at ``beta_high``;
    ``balanced`` the symmetric steady state at ``beta_low`` (each evaluated
    under its own ``beta``). ``controlled_symmetric`` is the (unstable)
    symmetric steady state at ``beta_high``, for a comparison at fixed ``beta``.
    Deltas are balanced minus concentrated.
    """

    beta_star: float
    beta_high: float
    beta_low: float
    concentrated: WelfareBreakdown
    balanced: WelfareBreakdown
    controlled_symmetric: WelfareBreakdown
    welfare_concentrated: float
    welfare_balanced: float
    cs_delta: float
    ps_delta: float
    controlled_cs_delta: float
    controlled_ps_delta: float


def head_effect_comparison(params: MarketParams, beta_star: Optional[float] = None,
                           high_factor: float = 2.0, low_factor: float = 0.5,
                           perturbation: float = 1e-3) -> HeadEffectComparison:
    """Compare welfare at a concentrated and a balanced steady state.

    ``beta_star`` defaults to the bisected critical value for ``params``.
    The concentrated state is reached from a start where streamer 0 holds
    ``perturbation * M`` extra viewers. No sign is asserted on the result.
    """
    if not params.is_symmetric:
        raise ValueError("params not symmetric")
    if beta_star is None:
        beta_star = critical_beta(params, quality_frozen=params.quality_frozen).beta_star
    N, M = params.n_streamers, params.total_viewers
    high = params.replace(network_effect=high_factor * beta_star)
    low = params.replace(network_effect=low_factor * beta_star)

    sym_high = symmetric_steady_state(high)
    viewers = np.array(sym_high.viewers)
    viewers[0] += perturbation * M
    viewers[1:] -= perturbation * M / (N - 1)
    rep = solve_steady_state(high, sym_high.replace(viewers=viewers))
    if not rep.converged:
        raise EquilibriumFailure(f"equilibrium failed to converge at beta={high.network_effect!r}")
    concentrated = polish_steady_state(high, rep.state).state

    balanced_state = symmetric_steady_state(low)
    conc = welfare_breakdown(high, concentrated)
    bal = welfare_breakdown(low, balanced_state)
    ctrl = welfare_breakdown(high, sym_high)
    return HeadEffectComparison(
        beta_star=float(beta_star),
        beta_high=high.network_effect,
        beta_low=low.network_effect,
        concentrated=conc,
        balanced=bal,
        controlled_symmetric=ctrl,
        welfare_concentrated=conc.total,
        welfare_balanced=bal.total,
        cs_delta=bal.consumer_surplus - conc.consumer_surplus,
        ps_delta=bal.producer_surplus - conc.producer_surplus,
        controlled_cs_delta=ctrl.consumer_surplus - conc.consumer_surplus,
        controlled_ps_delta=ctrl.producer_surplus - conc.producer_surplus,
    )
