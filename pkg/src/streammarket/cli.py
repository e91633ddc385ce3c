"""Command-line interface.

Every subcommand reads one JSON scenario (``--scenario``) and writes its
result to ``--out`` (``-`` for standard output). Diagnostics go to standard
error. Exit codes: 0 success, 1 non-convergence, 2 configuration error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import itertools
import sys

import numpy as np

from . import serialize
from .allocation import optimize_allocation
from .control import solve_fbsm
from .dynamics import DivergenceError, IntegratorConfig, integrate
from .equilibrium import polish_steady_state, solve_steady_state, solve_with_probe
from .scenario import ScenarioError, load_scenario
from .stability import BracketError, EquilibriumFailure, classify_stability, critical_beta, eigenvalues, jacobian_at
from .welfare import HEAD_EFFECT_THRESHOLD, welfare_breakdown

__all__ = ["main", "run_cli", "build_parser"]

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

COMMANDS = ("simulate", "equilibrium", "stability", "critical-beta", "welfare", "allocate", "control", "sweep")


class _Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streammarket", description="Attention-market dynamics and welfare analysis")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", default="-", help="output path, '-' for stdout")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized starts")
        p.add_argument("--format", choices=("csv", "json"), default=None)
    return parser


def _equilibrium_kwargs(block: dict) -> dict:
    return {k: block[k] for k in ("tol_n", "tol_q", "damping", "max_iter") if k in block}


def _steady(scenario):
    """Damped iteration from the scenario's initial state, then Newton polish."""
    kwargs = _equilibrium_kwargs(scenario.commands.get("equilibrium", {}))
    report = solve_steady_state(scenario.params, scenario.initial, **kwargs)
    polished = polish_steady_state(scenario.params, report.state,
                                   tol_n=kwargs.get("tol_n"), tol_q=kwargs.get("tol_q"))
    return polished if polished.converged else report


def _state_for(scenario, block: dict):
    if block.get("at", "equilibrium") == "initial":
        return scenario.initial
    report = _steady(scenario)
    if not report.converged:
        raise _Failure(EXIT_NOT_CONVERGED, "equilibrium failed to converge")
    return report.state


def _cmd_simulate(scenario, args):
    if args.format == "json":
        raise _Failure(EXIT_CONFIG, "simulate writes CSV only")
    block = scenario.commands.get("integrator", {})
    cfg = IntegratorConfig(**block)
    cfg.check(scenario.params)
    traj = integrate(scenario.params, scenario.initial, cfg)
    return serialize.trajectory_csv(traj), EXIT_OK


def _json_only(args, name):
    if args.format == "csv":
        raise _Failure(EXIT_CONFIG, f"{name} writes JSON only")


def _cmd_equilibrium(scenario, args):
    _json_only(args, "equilibrium")
    block = scenario.commands.get("equilibrium", {})
    n_starts = block.get("n_starts", 0)
    kwargs = _equilibrium_kwargs(block)
    if n_starts:
        report = solve_with_probe(scenario.params, scenario.initial, n_starts,
                                  np.random.default_rng(args.seed), **kwargs)
    else:
        report = solve_steady_state(scenario.params, scenario.initial, **kwargs)
    code = EXIT_OK if report.converged else EXIT_NOT_CONVERGED
    return serialize.dumps(report), code


def _cmd_stability(scenario, args):
    _json_only(args, "stability")
    block = scenario.commands.get("stability", {})
    state = _state_for(scenario, block)
    report = classify_stability(scenario.params, state, **({"tol_eig": block["tol_eig"]} if "tol_eig" in block else {}))
    return serialize.dumps(report), EXIT_OK


def _cmd_critical_beta(scenario, args):
    _json_only(args, "critical-beta")
    block = dict(scenario.commands.get("critical_beta", {}))
    if "bracket" in block:
        block["bracket"] = tuple(block["bracket"])
    report = critical_beta(scenario.params, **block)
    return serialize.dumps(report), EXIT_OK


def _cmd_welfare(scenario, args):
    _json_only(args, "welfare")
    block = scenario.commands.get("welfare", {})
    state = _state_for(scenario, block)
    report = welfare_breakdown(scenario.params, state, threshold=block.get("threshold", HEAD_EFFECT_THRESHOLD))
    return serialize.dumps(report), EXIT_OK


def _cmd_allocate(scenario, args):
    _json_only(args, "allocate")
    block = scenario.commands.get("allocation", {})
    state = _state_for(scenario, {"at": block.get("at", "initial")})
    kwargs = {k: block[k] for k in ("mode", "tol", "max_iter") if k in block}
    sol = optimize_allocation(scenario.params, state, **kwargs)
    print(f"{'i':>3}  {'theta':>12}  {'grad_W':>12}  {'mu':>12}", file=sys.stderr)
    for i, (t, g, m) in enumerate(zip(sol.theta, sol.gradient, sol.mu), start=1):
        print(f"{i:>3}  {t:>12.6g}  {g:>12.6g}  {m:>12.6g}", file=sys.stderr)
    if sol.message:
        print(sol.message, file=sys.stderr)
    return serialize.dumps(sol), EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _cmd_control(scenario, args):
    block = dict(scenario.commands.get("control", {}))
    params = scenario.params
    horizon = block.pop("horizon", 2.0 / params.viewer_speed)
    steps = block.pop("steps", 50)
    sol = solve_fbsm(params, scenario.initial, horizon, steps, **block)
    text = serialize.dumps(sol) if args.format == "json" else serialize.control_csv(sol)
    if not sol.converged:
        print(f"not converged: max FOC residual {sol.foc_residual_path.max():.3g}", file=sys.stderr)
    return text, EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _sweep_cell(scenario, metric: str, changes: dict):
    params = scenario.params.replace(**changes)
    initial = scenario.initial
    kwargs = _equilibrium_kwargs(scenario.commands.get("equilibrium", {}))
    if params.total_viewers != scenario.params.total_viewers:
        initial = initial.replace(viewers=initial.viewers * params.total_viewers / scenario.params.total_viewers)
    report = solve_steady_state(params, initial, **kwargs)
    polished = polish_steady_state(params, report.state)
    if polished.converged:
        report = polished
    if not report.converged:
        return float("nan"), False
    state = report.state
    if metric == "hhi":
        value = float(np.sum((state.viewers / params.total_viewers) ** 2))
    elif metric == "max_re_lambda":
        value = float(eigenvalues(jacobian_at(params, state, warn=False)).real.max())
    else:
        value = welfare_breakdown(params, state).total
    return value, True


def _cmd_sweep(scenario, args):
    if args.format == "json":
        raise _Failure(EXIT_CONFIG, "sweep writes CSV only")
    block = scenario.commands.get("sweep")
    if block is None:
        raise _Failure(EXIT_CONFIG, "sweep: scenario has no 'sweep' block")
    axes = block["axes"]
    names = [a["param"] for a in axes]
    if len(set(names)) != len(names):
        raise _Failure(EXIT_CONFIG, "sweep: axes must name different parameters")
    metric = block["metric"]
    lines = [",".join(names + ["metric", "value", "converged"])]
    all_ok = True
    for combo in itertools.product(*[a["values"] for a in axes]):
        try:
            value, ok = _sweep_cell(scenario, metric, dict(zip(names, combo)))
        except ValueError as exc:
            raise _Failure(EXIT_CONFIG, f"sweep: {exc}") from exc
        all_ok &= ok
        cells = [serialize.format_float(float(v)) for v in combo]
        lines.append(",".join(cells + [metric, serialize.format_float(value), str(ok).lower()]))
    return "\n".join(lines) + "\n", EXIT_OK if all_ok else EXIT_NOT_CONVERGED


_HANDLERS = {
    "simulate": _cmd_simulate,
    "equilibrium": _cmd_equilibrium,
    "stability": _cmd_stability,
    "critical-beta": _cmd_critical_beta,
    "welfare": _cmd_welfare,
    "allocate": _cmd_allocate,
    "control": _cmd_control,
    "sweep": _cmd_sweep,
}


def _write(out: str, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def run_cli(argv=None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        print(f"error: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_IO
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text, code = _HANDLERS[args.command](scenario, args)
    except _Failure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DivergenceError, EquilibriumFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (BracketError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _write(args.out, text)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def main() -> None:
    sys.exit(run_cli())
