"""Attention-market model of live streaming: logit viewer choice with network
effects, quality investment, concentration dynamics, welfare and platform
traffic allocation."""

from .allocation import AllocationSolution, optimize_allocation, simplex_project, welfare_gradient, welfare_of
from .control import ControlSolution, costate_drift, hamiltonian, solve_fbsm
from .dynamics import (
    DivergenceError,
    IntegratorConfig,
    Trajectory,
    integrate,
    path_dependence_experiment,
)
from .equilibrium import (
    EquilibriumReport,
    polish_steady_state,
    quality_best_response,
    solve_steady_state,
    symmetric_steady_state,
)
from .market import (
    CostSpec,
    MarketParams,
    MarketState,
    choice_probabilities,
    probabilities,
    probability_jacobians,
    streamer_profit,
    utilities,
)
from .stability import (
    CriticalBetaReport,
    StabilityReport,
    classify_stability,
    critical_beta,
    jacobian_at,
    measure_decay_rate,
    symmetric_critical_beta,
)
from .welfare import WelfareBreakdown, head_effect_comparison, welfare_breakdown

__version__ = "0.1.0"
