"""JSON scenario files: schema validation, shorthand expansion, object construction."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .market import CostSpec, MarketParams, MarketState

__all__ = ["ScenarioError", "Scenario", "SCHEMA", "parse_scenario", "load_scenario", "SWEEPABLE"]


class ScenarioError(ValueError):
    """Invalid scenario content; the message names the offending location."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {
    "oneOf": [
        {"type": "array", "items": _NUM, "minItems": 1},
        {"type": "object", "properties": {"uniform": _NUM}, "required": ["uniform"],
         "additionalProperties": False},
    ]
}


def _block(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SWEEPABLE = (
    "total_viewers", "network_effect", "viewer_speed", "quality_speed", "platform_cut",
    "revenue_rate", "traffic_sensitivity", "discount_rate",
)

SCHEMA = {
    "type": "object",
    "required": ["params"],
    "additionalProperties": False,
    "properties": {
        "params": {
            **_block({
                "n_streamers": {"type": "integer", "minimum": 1},
                "total_viewers": _NUM,
                "attractiveness": _VEC,
                "price": _VEC,
                "network_effect": _NUM,
                "viewer_speed": _NUM,
                "quality_speed": _NUM,
                "platform_cut": _NUM,
                "revenue_rate": _NUM,
                "traffic_sensitivity": _NUM,
                "discount_rate": _NUM,
                "normalized_quality_drift": {"type": "boolean"},
                "cost": _block({
                    "kind": {"enum": ["quadratic", "cubic"]},
                    "kappa": _NUM,
                    "a": _NUM,
                    "b": _NUM,
                }),
            }),
            "required": ["n_streamers", "total_viewers", "attractiveness"],
        },
        "initial": _block({
            "viewers": {
                "oneOf": [
                    _VEC,
                    {"type": "object", "properties": {"symmetric_perturbed": {"type": "number", "minimum": 0}},
                     "required": ["symmetric_perturbed"], "additionalProperties": False},
                ]
            },
            "quality": _VEC,
            "allocation": {"oneOf": [_VEC, {"const": "uniform"}]},
        }),
        "integrator": _block({
            "step": _POS,
            "horizon": _POS,
            "method": {"enum": ["rk4", "euler"]},
            "record_every": {"type": "integer", "minimum": 1},
        }),
        "equilibrium": _block({
            "tol_n": _POS,
            "tol_q": _POS,
            "damping": _POS,
            "max_iter": {"type": "integer", "minimum": 1},
            "n_starts": {"type": "integer", "minimum": 0},
        }),
        "stability": _block({
            "tol_eig": {"type": "number", "minimum": 0},
            "at": {"enum": ["equilibrium", "initial"]},
        }),
        "critical_beta": _block({
            "quality_frozen": {"type": "boolean"},
            "bracket": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
            "tol_beta": _POS,
        }),
        "welfare": _block({
            "at": {"enum": ["equilibrium", "initial"]},
            "threshold": _NUM,
        }),
        "allocation": _block({
            "mode": {"enum": ["exact_gradient", "paper_foc"]},
            "tol": _POS,
            "max_iter": {"type": "integer", "minimum": 1},
            "at": {"enum": ["equilibrium", "initial"]},
        }),
        "control": _block({
            "horizon": _POS,
            "steps": {"type": "integer", "minimum": 1},
            "tol": _POS,
            "max_sweeps": {"type": "integer", "minimum": 1},
            "relaxation": _POS,
            "joint_quality": {"type": "boolean"},
        }),
        "sweep": {
            **_block({
                "metric": {"enum": ["hhi", "max_re_lambda", "welfare"]},
                "axes": {
                    "type": "array",
                    "minItems": 1,
                    "maxItems": 2,
                    "items": {
                        **_block({
                            "param": {"enum": list(SWEEPABLE)},
                            "values": {"type": "array", "items": _NUM, "minItems": 1},
                        }),
                        "required": ["param", "values"],
                    },
                },
            }),
            "required": ["metric", "axes"],
        },
    },
}


@dataclass(frozen=True)
class Scenario:
    params: MarketParams
    initial: MarketState
    commands: dict = field(default_factory=dict)


def _location(path) -> str:
    parts = [str(p) for p in path]
    return "/".join(parts) if parts else "<root>"


def _vector(value, n: int, name: str) -> np.ndarray:
    if isinstance(value, dict):
        return np.full(n, float(value["uniform"]))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ScenarioError(f"{name}: expected {n} entries, got {arr.shape[0]}")
    return arr


def _build_params(raw: dict) -> MarketParams:
    n = raw["n_streamers"]
    kwargs = {k: v for k, v in raw.items() if k not in ("attractiveness", "price", "cost")}
    kwargs["attractiveness"] = _vector(raw["attractiveness"], n, "params/attractiveness")
    kwargs["price"] = _vector(raw.get("price", {"uniform": 0.0}), n, "params/price")
    if "cost" in raw:
        kwargs["cost"] = CostSpec(**raw["cost"])
    try:
        return MarketParams(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"params: {exc}") from exc


def _build_initial(raw: dict, params: MarketParams) -> MarketState:
    N, M = params.n_streamers, params.total_viewers
    viewers = raw.get("viewers", {"uniform": M / N})
    if isinstance(viewers, dict) and "symmetric_perturbed" in viewers:
        eps = float(viewers["symmetric_perturbed"])
        if N < 2 or eps >= M / N:
            raise ScenarioError("initial/viewers: symmetric_perturbed needs N >= 2 and eps < M/N")
        n = np.full(N, M / N)
        n[0] += eps
        n[1] -= eps
    else:
        n = _vector(viewers, N, "initial/viewers")
    q = _vector(raw.get("quality", {"uniform": 0.0}), N, "initial/quality")
    theta_raw = raw.get("allocation", "uniform")
    theta = np.full(N, 1.0 / N) if theta_raw == "uniform" else _vector(theta_raw, N, "initial/allocation")
    try:
        return MarketState(n, q, theta)
    except ValueError as exc:
        raise ScenarioError(f"initial: {exc}") from exc


def parse_scenario(doc: dict) -> Scenario:
    """Validate a decoded scenario document and build params, initial state and command blocks."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioError(f"{_location(err.absolute_path)}: {err.message}")
    params = _build_params(doc["params"])
    initial = _build_initial(doc.get("initial", {}), params)
    commands = {k: dict(v) for k, v in doc.items() if k not in ("params", "initial")}
    return Scenario(params, initial, commands)


def load_scenario(path) -> Scenario:
    """Read and parse a scenario file.

    Raises ``OSError`` when the file cannot be read and ``ScenarioError``
    for malformed JSON (with line and column) or invalid content.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc)
