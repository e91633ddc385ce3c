"""Report serialization: JSON dictionaries that round-trip, and CSV time series."""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from .allocation import AllocationSolution
from .control import ControlSolution
from .dynamics import Trajectory
from .equilibrium import EquilibriumReport
from .market import MarketState
from .stability import CriticalBetaReport, StabilityReport
from .welfare import HeadEffectComparison, WelfareBreakdown

__all__ = [
    "to_dict",
    "from_dict",
    "dumps",
    "loads",
    "reports_equal",
    "trajectory_csv",
    "control_csv",
    "format_float",
]

_TYPES = {
    cls.__name__: cls
    for cls in (
        MarketState, EquilibriumReport, StabilityReport, CriticalBetaReport, WelfareBreakdown,
        HeadEffectComparison, AllocationSolution, ControlSolution,
    )
}
_COMPLEX = {"eigenvalues"}


def format_float(x: float) -> str:
    """17 significant digits, enough to recover the exact double."""
    return "%.17g" % x


def _encode(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        out = {"type": type(value).__name__}
        for f in dataclasses.fields(value):
            out[f.name] = _encode(getattr(value, f.name))
        return out
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return [[float(z.real), float(z.imag)] for z in value.ravel()]
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def to_dict(report) -> dict:
    """Plain-JSON dictionary of a report; complex vectors become ``[re, im]`` pairs."""
    return _encode(report)


def _decode_field(name: str, annotation: str, value):
    if isinstance(value, dict) and "type" in value:
        return from_dict(value)
    if name in _COMPLEX:
        pairs = np.asarray(value, dtype=float).reshape(-1, 2)
        return pairs[:, 0] + 1j * pairs[:, 1]
    if annotation == "Array":
        return np.asarray(value, dtype=float)
    if annotation.startswith("tuple"):
        return tuple(value)
    if name == "basin_probe":
        return [tuple(from_dict(s) for s in pair) for pair in value]
    return value


def from_dict(data: dict):
    """Inverse of :func:`to_dict`."""
    cls = _TYPES.get(data.get("type"))
    if cls is None:
        raise ValueError(f"unknown report type {data.get('type')!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            kwargs[f.name] = _decode_field(f.name, str(f.type), data[f.name])
    return cls(**kwargs)


def dumps(report) -> str:
    return json.dumps(to_dict(report), indent=2) + "\n"


def loads(text: str):
    return from_dict(json.loads(text))


def reports_equal(a, b) -> bool:
    """Structural equality treating arrays element-wise (NaN equal to NaN)."""
    if type(a) is not type(b):
        return False
    if dataclasses.is_dataclass(a):
        return all(reports_equal(getattr(a, f.name), getattr(b, f.name)) for f in dataclasses.fields(a))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(reports_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, float) and np.isnan(a):
        return np.isnan(b)
    return a == b


def _table(header: list[str], columns: list[np.ndarray]) -> str:
    data = np.column_stack(columns)
    lines = [",".join(header)]
    lines.extend(",".join(format_float(x) for x in row) for row in data)
    return "\n".join(lines) + "\n"


def trajectory_csv(traj: Trajectory) -> str:
    """Columns ``t, n_1..n_N, q_1..q_N, s_1..s_N, hhi``."""
    N = traj.viewers.shape[1]
    idx = range(1, N + 1)
    header = ["t"] + [f"n_{i}" for i in idx] + [f"q_{i}" for i in idx] + [f"s_{i}" for i in idx] + ["hhi"]
    return _table(header, [traj.times, traj.viewers, traj.quality, traj.shares, traj.hhi])


def control_csv(sol: ControlSolution) -> str:
    """Columns ``t, theta_1..theta_N, lambda_1..lambda_N, n_1..n_N, W``.

    With joint quality dynamics the quality costates follow as
    ``lambda_q_1..lambda_q_N`` after ``W``.
    """
    N = sol.viewers.shape[1]
    idx = range(1, N + 1)
    header = (["t"] + [f"theta_{i}" for i in idx] + [f"lambda_{i}" for i in idx]
              + [f"n_{i}" for i in idx] + ["W"])
    columns = [sol.times, sol.theta_path, sol.costates[:, :N], sol.viewers, sol.welfare_path]
    if sol.costates.shape[1] > N:
        header += [f"lambda_q_{i}" for i in idx]
        columns.append(sol.costates[:, N:])
    return _table(header, columns)
