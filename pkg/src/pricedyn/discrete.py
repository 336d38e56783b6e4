"""Discrete-time price maps for markets with two groups of price setters.

All maps update the mean price ``p_bar`` by a change ``dp`` built from the
excess demand at the previous price and, depending on the kind, the previous
change (trend following or aversion) or the price two periods back (delayed
response):

* ``laggard``  -- ``dp_t = f_a mu xi(p_{t-1}) + f_b nu dp_{t-1}``
* ``bullbear`` -- ``dp_t = (f_a lambda + f_b mu) xi(p_{t-1}) + (f_a nu - f_b bear) dp_{t-1}``
* ``delayed``  -- ``dp_t = f_a xi(p_{t-1}) + f_b xi(p_{t-2})``, or its first-order
  Taylor form ``xi(p_{t-1}) - f_b J(p_{t-1}) dp_{t-1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pricedyn.demand import DemandModel, as_vector
from pricedyn.errors import NumericError, UsageError

KINDS = ("laggard", "bullbear", "delayed")


@dataclass(frozen=True)
class DiscreteAgentSpec:
    """Group fractions and behavioural coefficients.

    Attributes:
        kind: which map the coefficients belong to.
        f_a: fraction of group a; group b is ``1 - f_a``.
        mu: excess-demand response (laggard group a, bears).
        nu: trend-following coefficient (laggard group b, bulls).
        lambda_: excess-demand response of bulls.
        bear_coeff: trend aversion of bears.
        renormalize: rescale prices to unit length after each step.
    """

    kind: str
    f_a: float
    mu: float = 0.0
    nu: float = 0.0
    lambda_: float = 0.0
    bear_coeff: float = 0.0
    renormalize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown map kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.f_a <= 1.0:
            raise UsageError(f"f_a must lie in [0, 1], got {self.f_a}")
        for name in ("mu", "nu", "lambda_", "bear_coeff"):
            if not math.isfinite(getattr(self, name)):
                raise UsageError(f"{name} must be finite")

    @property
    def f_b(self) -> float:
        return 1.0 - self.f_a

    @property
    def trend_coeff(self) -> float:
        """Coefficient on the previous change."""
        if self.kind == "laggard":
            return self.f_b * self.nu
        if self.kind == "bullbear":
            return self.f_a * self.nu - self.f_b * self.bear_coeff
        return 0.0

    @property
    def demand_coeff(self) -> float:
        """Coefficient on current excess demand."""
        if self.kind == "laggard":
            return self.f_a * self.mu
        if self.kind == "bullbear":
            return self.f_a * self.lambda_ + self.f_b * self.mu
        return self.f_a

    @property
    def damped(self) -> bool:
        """Whether the laggard trend term damps (``f_b nu < 1``)."""
        return self.f_b * self.nu < 1.0


@dataclass(frozen=True, eq=False)
class DiscreteState:
    p_bar: NDArray[np.float64]
    dp_prev: NDArray[np.float64]
    p_prev2: Optional[NDArray[np.float64]] = None
    t: int = 0

    def __post_init__(self):
        p = as_vector(np.atleast_1d(self.p_bar), name="p_bar")
        object.__setattr__(self, "p_bar", p)
        object.__setattr__(self, "dp_prev", as_vector(np.atleast_1d(self.dp_prev), p.shape[0], "dp_prev"))
        if self.p_prev2 is not None:
            object.__setattr__(self, "p_prev2", as_vector(np.atleast_1d(self.p_prev2), p.shape[0], "p_prev2"))

    @classmethod
    def from_history(cls, p_prev: ArrayLike, p_now: ArrayLike, t: int = 0) -> "DiscreteState":
        """State at ``p_now`` reached from ``p_prev`` in one period."""
        p_prev = np.atleast_1d(np.asarray(p_prev, dtype=float))
        p_now = np.atleast_1d(np.asarray(p_now, dtype=float))
        return cls(p_now, p_now - p_prev, p_prev, t)


def _advance(state: DiscreteState, dp: NDArray[np.float64], spec: DiscreteAgentSpec) -> DiscreteState:
    step = state.t + 1
    bad = np.flatnonzero(~np.isfinite(dp))
    if bad.size:
        raise NumericError(f"price change non-finite at step {step}", index=int(bad[0]), step=step)
    p_new = state.p_bar + dp
    if spec.renormalize:
        p_new = p_new / np.linalg.norm(p_new)
        dp = p_new - state.p_bar
    return DiscreteState(p_new, dp, state.p_bar, step)


def _xi(model: DemandModel, p, step):
    try:
        return model(p)
    except NumericError as exc:
        raise NumericError(str(exc), index=exc.index, step=step) from exc


def _check_kind(spec: DiscreteAgentSpec, *kinds):
    if spec.kind not in kinds:
        raise UsageError(f"map needs a spec of kind {' or '.join(kinds)}, got {spec.kind!r}")


def step_laggard(state: DiscreteState, spec: DiscreteAgentSpec, model: DemandModel) -> DiscreteState:
    _check_kind(spec, "laggard")
    xi = _xi(model, state.p_bar, state.t + 1)
    dp = spec.f_a * spec.mu * xi + spec.f_b * spec.nu * state.dp_prev
    return _advance(state, dp, spec)


def step_laggard_secondorder(state: DiscreteState, spec: DiscreteAgentSpec, model: DemandModel) -> DiscreteState:
    """Laggard map advanced through its difference-of-differences form.

    ``f_b nu D2 = f_a mu xi - (1 - f_b nu) dp_t`` with ``dp_t = dp_{t-1} + D2``
    is linear in the second difference ``D2``; it is solved for ``D2`` and the
    change rebuilt as ``dp_{t-1} + D2``.
    """
    _check_kind(spec, "laggard")
    c = spec.f_b * spec.nu
    if c == 0:
        raise UsageError("second-order form undefined when f_b * nu = 0")
    xi = _xi(model, state.p_bar, state.t + 1)
    rhs = spec.f_a * spec.mu * xi - (1.0 - c) * state.dp_prev
    d2 = rhs / (c + (1.0 - c))
    return _advance(state, state.dp_prev + d2, spec)


def step_bullbear(state: DiscreteState, spec: DiscreteAgentSpec, model: DemandModel) -> DiscreteState:
    """Population average of bulls (group a) and bears (group b)."""
    _check_kind(spec, "bullbear")
    xi = _xi(model, state.p_bar, state.t + 1)
    dp = spec.demand_coeff * xi + spec.trend_coeff * state.dp_prev
    return _advance(state, dp, spec)


def step_delayed(
    state: DiscreteState, spec: DiscreteAgentSpec, model: DemandModel, mode: str = "exact"
) -> DiscreteState:
    """Arbitrageurs split between one- and two-period response lags.

    ``mode="taylor"`` expands ``xi(p_{t-2})`` to first order about ``p_{t-1}``;
    the Jacobian is exact for linear models, central differences otherwise.
    """
    _check_kind(spec, "delayed")
    if state.p_prev2 is None:
        raise UsageError("delayed map needs the price two periods back (p_prev2)")
    step = state.t + 1
    xi_now = _xi(model, state.p_bar, step)
    if mode == "exact":
        dp = spec.f_a * xi_now + spec.f_b * _xi(model, state.p_prev2, step)
    elif mode == "taylor":
        lag = state.p_bar - state.p_prev2
        dp = xi_now - spec.f_b * (model.jacobian(state.p_bar) @ lag)
    else:
        raise UsageError(f"unknown delayed-map mode {mode!r}")
    return _advance(state, dp, spec)


def step(state: DiscreteState, spec: DiscreteAgentSpec, model: DemandModel, mode: str = "exact") -> DiscreteState:
    if spec.kind == "laggard":
        return step_laggard(state, spec, model)
    if spec.kind == "bullbear":
        return step_bullbear(state, spec, model)
    return step_delayed(state, spec, model, mode)


@dataclass(eq=False)
class DiscreteTrajectory:
    t: NDArray[np.int64]
    p: NDArray[np.float64]
    dp: NDArray[np.float64]
    spec: DiscreteAgentSpec
    error: Optional[str] = None

    def __len__(self) -> int:
        return self.t.shape[0]


def iterate(
    state: DiscreteState,
    spec: DiscreteAgentSpec,
    model: DemandModel,
    n_steps: int,
    stepper=None,
    mode: str = "exact",
) -> DiscreteTrajectory:
    """Apply a map ``n_steps`` times, stopping early (with ``error`` set) on blow-up."""
    if n_steps < 1:
        raise UsageError("n_steps must be positive")
    if stepper is None:

        def stepper(s, sp, m):
            return step(s, sp, m, mode)

    ts, ps, dps = [state.t], [state.p_bar], [state.dp_prev]
    error = None
    for _ in range(n_steps):
        try:
            state = stepper(state, spec, model)
        except NumericError as exc:
            error = f"step {exc.step}: {exc}"
            break
        ts.append(state.t)
        ps.append(state.p_bar)
        dps.append(state.dp_prev)
    return DiscreteTrajectory(np.array(ts), np.array(ps), np.array(dps), spec, error)


def laggard_stability(spec: DiscreteAgentSpec, model: DemandModel) -> dict:
    """Report the damping flag and, for linear models, the spectral radius of the map.

    In deviations ``x = p - p_hat`` the laggard map is linear with companion
    matrix ``[[I + a M, c I], [a M, c I]]`` acting on ``(x, dp)``, where
    ``a = f_a mu`` and ``c = f_b nu``.
    """
    _check_kind(spec, "laggard")
    c = spec.f_b * spec.nu
    report = {"f_b_nu": c, "damped": c < 1.0, "spectral_radius": None, "converges": None}
    if model.matrix is not None:
        n = model.dim
        a = spec.f_a * spec.mu
        M = np.asarray(model.matrix, dtype=float)
        eye = np.eye(n)
        T = np.block([[eye + a * M, c * eye], [a * M, c * eye]])
        rho = float(np.max(np.abs(np.linalg.eigvals(T))))
        report["spectral_radius"] = rho
        report["converges"] = rho < 1.0
    return report
