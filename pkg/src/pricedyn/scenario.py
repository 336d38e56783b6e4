"""Scenario documents: parsing, validation and execution.

A scenario is a single JSON object::

    {
      "name": "conservative",
      "model": {"alpha": 2, "beta": 1, "delta": 0, "p_hat": [1, 1]},
      "dynamics": {"mode": "flat", "kappa": 1, "gamma": 1, "dt": 0.001,
                   "t_end": 10, "sample_every": 10},
      "initial": {"q": [0.1, 0.0], "v": [0.0, 0.0]},
      "diagnostics": {"energy": true, "angular_momentum": false,
                      "recurrence": {"eps": 0.01, "min_duration": 1.0}},
      "output": {"trajectory_csv": "out.csv", "summary_json": "out.json"}
    }

Models are ``{"alpha", "beta", "delta", "p_hat"}``, ``{"M", "p_hat"}`` or
``{"potential", "skew", "p_hat"}`` (an optional ``"type"`` of ``two_price``,
``matrix`` or ``composite`` makes the choice explicit). Discrete maps use
``"mode": "discrete:<kind>"`` with ``f_a``, ``mu``, ``nu``, ``lambda``,
``bear_coeff`` and ``steps`` in the dynamics block. Relative output paths
resolve against the scenario file's directory.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from pricedyn import diagnostics as dg
from pricedyn.demand import DemandModel, LinearTwoPriceSpec, linear_model, quadratic_model
from pricedyn.discrete import KINDS, DiscreteAgentSpec, DiscreteState, DiscreteTrajectory, iterate, laggard_stability
from pricedyn.dynamics import MODES, DynamicsParams, FlatState, SphereState, Trajectory, integrate
from pricedyn.errors import PriceDynError, UsageError


class ScenarioParseError(PriceDynError):
    """The scenario file is not a readable JSON object."""


class ScenarioError(UsageError):
    """The scenario parsed but does not describe a valid run."""


@dataclass
class Scenario:
    name: str
    model: dict
    dynamics: dict
    initial: dict
    diagnostics: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)
    raw: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        return self.dynamics.get("mode", "sphere")

    @property
    def is_discrete(self) -> bool:
        return self.mode.startswith("discrete:")

    def output_path(self, key: str) -> Optional[Path]:
        value = self.output.get(key)
        if value is None:
            return None
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(raw, path.resolve().parent)


def scenario_from_dict(raw: Any, base_dir: Optional[Path] = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioParseError("scenario must be a JSON object")
    for key in ("model", "dynamics", "initial"):
        if not isinstance(raw.get(key), dict):
            raise ScenarioError(f"scenario needs an object field {key!r}")
    for key in ("diagnostics", "output"):
        if key in raw and not isinstance(raw[key], dict):
            raise ScenarioError(f"{key!r} must be an object")
    sc = Scenario(
        name=str(raw.get("name", "scenario")),
        model=raw["model"],
        dynamics=raw["dynamics"],
        initial=raw["initial"],
        diagnostics=raw.get("diagnostics", {}),
        output=raw.get("output", {}),
        base_dir=base_dir or Path.cwd(),
        raw=raw,
    )
    validate(sc)
    return sc


def _num(block: dict, key: str, default=None, where: str = "") -> float:
    value = block.get(key, default)
    if value is None:
        raise ScenarioError(f"missing number {where}{key}")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(f"{where}{key} must be a finite number, got {value!r}")
    return float(value)


def _vec(block: dict, key: str, where: str = "", required: bool = True) -> Optional[np.ndarray]:
    value = block.get(key)
    if value is None:
        if required:
            raise ScenarioError(f"missing vector {where}{key}")
        return None
    arr = np.asarray(value, dtype=float) if isinstance(value, list) else None
    if arr is None or arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{where}{key} must be a list of finite numbers")
    return arr


def _mat(block: dict, key: str) -> np.ndarray:
    value = block.get(key)
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        arr = None
    if arr is None or arr.ndim != 2 or arr.shape[0] != arr.shape[1] or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"model.{key} must be a square matrix of finite numbers")
    return arr


def model_kind(block: dict) -> str:
    kind = block.get("type")
    if kind is None:
        if "alpha" in block:
            kind = "two_price"
        elif "M" in block:
            kind = "matrix"
        elif "potential" in block:
            kind = "composite"
    if kind not in ("two_price", "matrix", "composite"):
        raise ScenarioError(f"cannot determine model type from {sorted(block)}")
    return kind


def build_model(sc: Scenario) -> Union[LinearTwoPriceSpec, DemandModel]:
    block = sc.model
    kind = model_kind(block)
    try:
        if kind == "two_price":
            p_hat = _vec(block, "p_hat", "model.", required=False)
            return LinearTwoPriceSpec(
                _num(block, "alpha", where="model."),
                _num(block, "beta", 0.0, "model."),
                _num(block, "delta", 0.0, "model."),
                tuple(p_hat) if p_hat is not None else (1.0, 1.0),
            )
        p_hat = _vec(block, "p_hat", "model.")
        if kind == "matrix":
            return linear_model(_mat(block, "M"), p_hat, name="matrix")
        return quadratic_model(_mat(block, "potential"), _mat(block, "skew"), p_hat)
    except ScenarioError:
        raise
    except UsageError as exc:
        raise ScenarioError(f"model: {exc}") from exc


def model_dim(model) -> int:
    return 2 if isinstance(model, LinearTwoPriceSpec) else model.dim


def build_params(sc: Scenario) -> DynamicsParams:
    d = sc.dynamics
    gamma = d.get("gamma", 1.0)
    if isinstance(gamma, list):
        if not gamma or not all(isinstance(g, (int, float)) and not isinstance(g, bool) for g in gamma):
            raise ScenarioError("dynamics.gamma list must hold numbers")
        gamma = tuple(float(g) for g in gamma)
    else:
        gamma = _num(d, "gamma", 1.0, "dynamics.")
    se = d.get("sample_every", 1)
    if isinstance(se, bool) or not isinstance(se, (int, float)):
        raise ScenarioError("dynamics.sample_every must be a positive integer")
    try:
        return DynamicsParams(
            kappa=_num(d, "kappa", 1.0, "dynamics."),
            gamma=gamma,
            dt=_num(d, "dt", 1e-3, "dynamics."),
            t_end=_num(d, "t_end", where="dynamics."),
            sample_every=se,
        )
    except ScenarioError:
        raise
    except UsageError as exc:
        raise ScenarioError(f"dynamics: {exc}") from exc


def build_initial(sc: Scenario, n: int):
    init = sc.initial
    if sc.mode == "flat":
        q = _vec(init, "q", "initial.")
        v = _vec(init, "v", "initial.", required=False)
        v = np.zeros(n) if v is None else v
        if q.shape[0] != n or v.shape[0] != n:
            raise ScenarioError(f"initial state must have {n} components")
        return FlatState(q, v)
    p = _vec(init, "p", "initial.")
    v = _vec(init, "v", "initial.", required=False)
    v = np.zeros(n) if v is None else v
    if p.shape[0] != n or v.shape[0] != n:
        raise ScenarioError(f"initial state must have {n} components")
    if not np.linalg.norm(p) > 0:
        raise ScenarioError("initial price vector must be nonzero")
    return SphereState(p, v)


def build_discrete(sc: Scenario, n: int):
    d = sc.dynamics
    kind = sc.mode.split(":", 1)[1]
    if kind not in KINDS:
        raise ScenarioError(f"unknown discrete map {kind!r}; expected one of {KINDS}")
    try:
        spec = DiscreteAgentSpec(
            kind=kind,
            f_a=_num(d, "f_a", where="dynamics."),
            mu=_num(d, "mu", 0.0, "dynamics."),
            nu=_num(d, "nu", 0.0, "dynamics."),
            lambda_=_num(d, "lambda", 0.0, "dynamics."),
            bear_coeff=_num(d, "bear_coeff", 0.0, "dynamics."),
            renormalize=bool(d.get("renormalize", False)),
        )
    except ScenarioError:
        raise
    except UsageError as exc:
        raise ScenarioError(f"dynamics: {exc}") from exc
    steps = d.get("steps")
    if isinstance(steps, bool) or not isinstance(steps, int) or steps < 2:
        raise ScenarioError("dynamics.steps must be an integer >= 2")
    p = _vec(sc.initial, "p", "initial.")
    dp = _vec(sc.initial, "dp_prev", "initial.", required=False)
    dp = np.zeros(n) if dp is None else dp
    p2 = _vec(sc.initial, "p_prev2", "initial.", required=False)
    if p2 is None:
        p2 = p - dp
    if not (p.shape[0] == dp.shape[0] == p2.shape[0] == n):
        raise ScenarioError(f"initial state must have {n} components")
    return spec, DiscreteState(p, dp, p2), steps


def validate(sc: Scenario) -> None:
    """Check the scenario is self-consistent by building every component once."""
    mode = sc.mode
    if not (mode in MODES or (mode.startswith("discrete:"))):
        raise ScenarioError(f"unknown mode {mode!r}")
    model = build_model(sc)
    n = model_dim(model)
    if sc.is_discrete:
        if isinstance(model, LinearTwoPriceSpec):
            model = model.model()
        build_discrete(sc, n)
    else:
        params = build_params(sc)
        n_steps = params.t_end / params.dt
        if abs(n_steps - round(n_steps)) > 1e-9 * n_steps or round(n_steps) % params.sample_every:
            raise ScenarioError("t_end/dt must be a whole number of steps divisible by sample_every")
        try:
            params.damping(n)
            if mode == "flat" and isinstance(model, LinearTwoPriceSpec):
                params.common_damping()
        except UsageError as exc:
            raise ScenarioError(f"dynamics: {exc}") from exc
        build_initial(sc, n)
    diag = sc.diagnostics
    if diag.get("angular_momentum"):
        if sc.is_discrete or mode != "flat" or not isinstance(model, LinearTwoPriceSpec):
            raise ScenarioError("angular_momentum diagnostics need a flat-mode two-price scenario")
    rec = diag.get("recurrence")
    if rec is not None:
        if sc.is_discrete:
            raise ScenarioError("recurrence detection applies to continuous runs")
        if not isinstance(rec, dict):
            raise ScenarioError("diagnostics.recurrence must be an object")
        eps = _num(rec, "eps", where="diagnostics.recurrence.")
        dur = _num(rec, "min_duration", where="diagnostics.recurrence.")
        if eps <= 0:
            raise ScenarioError("diagnostics.recurrence.eps must be positive")
        if dur < 3 * params.dt * params.sample_every:
            raise ScenarioError("diagnostics.recurrence.min_duration must span at least three samples")
    paths = [sc.output_path(k) for k in ("trajectory_csv", "summary_json")]
    paths = [p for p in paths if p is not None]
    if len(set(paths)) != len(paths):
        raise ScenarioError("output paths must be distinct")
    for p in paths:
        if not p.parent.is_dir():
            raise ScenarioError(f"output directory does not exist: {p.parent}")


@dataclass
class RunResult:
    scenario: Scenario
    trajectory: Union[Trajectory, DiscreteTrajectory]
    model: Any
    summary: dict

    @property
    def failed(self) -> bool:
        return self.trajectory.error is not None


def _floats(a) -> list:
    return [float(x) for x in np.asarray(a).ravel()]


def execute(sc: Scenario) -> RunResult:
    """Run the scenario's simulation and diagnostics in memory."""
    model = build_model(sc)
    n = model_dim(model)
    if sc.is_discrete:
        return _execute_discrete(sc, model, n)
    params = build_params(sc)
    initial = build_initial(sc, n)
    traj = integrate(initial, model, params, sc.mode)
    diag = sc.diagnostics

    energy_block = None
    if diag.get("energy", True) and len(traj) >= 3:
        res = dg.energy_balance_residual(traj)
        energy_block = {
            "final": float(traj.energy[-1]),
            "initial": float(traj.energy[0]),
            "max_residual": res.max_abs,
        }
    loops = []
    rec = diag.get("recurrence")
    if rec is not None and len(traj) >= 3:
        loops = dg.detect_recurrence(traj, float(rec["eps"]), float(rec["min_duration"]))
    am_block = None
    if diag.get("angular_momentum") and len(traj) >= 3:
        am = dg.angular_momentum_residual(traj, model, params)
        am_block = {"max_residual": am.max_abs, "terminal_ratio": am.terminal_ratio}

    last = len(traj) - 1
    terminal = {"p": _floats(traj.p[last]), "t": float(traj.t[last]), "v": _floats(traj.v[last])}
    if traj.p_hat is not None:
        terminal["q"] = _floats(traj.q[last])
    if n == 2 and traj.p_hat is not None:
        terminal["L"] = dg.angular_momentum(traj.q[last], traj.v[last])

    summary = {
        "angular_momentum": am_block,
        "energy": energy_block,
        "error": traj.error,
        "loops": [lp.as_dict() for lp in loops],
        "mode": sc.mode,
        "name": sc.name,
        "params": params.as_dict(),
        "positivity_violations": traj.positivity_violations,
        "status": "ok" if traj.error is None else "numeric_error",
        "terminal_state": terminal,
    }
    return RunResult(sc, traj, model, summary)


def _execute_discrete(sc: Scenario, model, n: int) -> RunResult:
    if isinstance(model, LinearTwoPriceSpec):
        model = model.model()
    spec, state, steps = build_discrete(sc, n)
    mode = "taylor" if sc.dynamics.get("taylor") else "exact"
    traj = iterate(state, spec, model, steps, mode=mode)
    last = len(traj) - 1
    d = sc.dynamics
    params = {
        "bear_coeff": spec.bear_coeff,
        "f_a": spec.f_a,
        "lambda": spec.lambda_,
        "mu": spec.mu,
        "nu": spec.nu,
        "renormalize": spec.renormalize,
        "steps": steps,
        "taylor": bool(d.get("taylor", False)),
    }
    summary = {
        "angular_momentum": None,
        "energy": None,
        "error": traj.error,
        "loops": [],
        "mode": sc.mode,
        "name": sc.name,
        "params": params,
        "positivity_violations": int(np.count_nonzero(np.any(traj.p < 0, axis=1))),
        "status": "ok" if traj.error is None else "numeric_error",
        "terminal_state": {"dp_prev": _floats(traj.dp[last]), "p": _floats(traj.p[last]), "t": int(traj.t[last])},
    }
    if spec.kind == "laggard":
        summary["stability"] = laggard_stability(spec, model)
    return RunResult(sc, traj, model, summary)


def set_path(raw: dict, path: str, value: float) -> dict:
    """Copy of ``raw`` with the scalar at dotted ``path`` replaced."""
    out = copy.deepcopy(raw)
    node = out
    keys = path.split(".")
    for key in keys[:-1]:
        if not isinstance(node, dict) or not isinstance(node.get(key), dict):
            raise ScenarioError(f"unknown parameter path {path!r}")
        node = node[key]
    leaf = keys[-1]
    current = node.get(leaf) if isinstance(node, dict) else None
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ScenarioError(f"parameter path {path!r} does not address a scalar field")
    node[leaf] = value
    return out
