"""Second-order price dynamics on the unit sphere and in flat deviation coordinates.

Three modes share one fixed-step classical Runge-Kutta integrator:

* ``sphere`` -- ``a = kappa xi_T(p) - gamma v - p |v|^2`` with ``xi_T`` the
  tangential part of excess demand, renormalized onto the sphere after every step;
* ``flat`` -- the linearization about ``p_hat`` in ``q = p - p_hat``:
  ``q'' = kappa xi(p_hat + q) - gamma q'``;
* ``first_order`` -- the gradient-style baseline ``p' = kappa xi_T(p)`` on the sphere.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.typing import NDArray

from pricedyn.demand import (
    DemandModel,
    LinearTwoPriceSpec,
    as_vector,
    deviation_model,
)
from pricedyn.errors import NumericError, UsageError

log = logging.getLogger(__name__)

MODES = ("sphere", "flat", "first_order")
SPHERE_TOL = 1e-9
TANGENCY_TOL = 1e-9

Vector = NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class SphereState:
    p: Vector
    v: Vector
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p", as_vector(self.p))
        object.__setattr__(self, "v", as_vector(self.v, self.p.shape[0], "v"))

    def is_valid(self, sphere_tol: float = SPHERE_TOL, tangency_tol: float = TANGENCY_TOL) -> bool:
        return abs(float(self.p @ self.p) - 1.0) <= sphere_tol and abs(float(self.p @ self.v)) <= tangency_tol


@dataclass(frozen=True, eq=False)
class FlatState:
    q: Vector
    qdot: Vector
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", as_vector(self.q, name="q"))
        object.__setattr__(self, "qdot", as_vector(self.qdot, self.q.shape[0], "qdot"))


@dataclass(frozen=True)
class DynamicsParams:
    """Integration settings.

    ``gamma`` is either one damping value shared by all goods or one value per
    good (the diagonal of the damping matrix). Zero damping is accepted so
    conservative and periodic runs can be set up; negative entries are not.
    """

    kappa: float = 1.0
    gamma: Union[float, tuple] = 1.0
    dt: float = 1e-3
    t_end: float = 10.0
    sample_every: int = 1

    def __post_init__(self):
        if not (np.isfinite(self.kappa) and self.kappa > 0):
            raise UsageError(f"kappa must be positive, got {self.kappa}")
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if g.ndim != 1 or not np.all(np.isfinite(g)) or np.any(g < 0):
            raise UsageError(f"gamma entries must be finite and non-negative, got {self.gamma}")
        object.__setattr__(self, "gamma", float(g[0]) if np.ndim(self.gamma) == 0 else tuple(float(x) for x in g))
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise UsageError(f"dt must be positive, got {self.dt}")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise UsageError("sample_every must be a positive integer")
        object.__setattr__(self, "sample_every", int(self.sample_every))

    def damping(self, n: int) -> Vector:
        """Diagonal of the damping matrix for ``n`` goods."""
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if g.shape[0] == 1:
            return np.full(n, g[0])
        if g.shape[0] != n:
            raise UsageError(f"gamma has {g.shape[0]} entries for {n} goods")
        return g.copy()

    def common_damping(self) -> float:
        """The shared damping value; unequal entries are rejected."""
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(g != g[0]):
            raise UsageError("flat two-price mode requires equal damping for both goods")
        return float(g[0])

    def as_dict(self) -> dict:
        gamma = self.gamma if isinstance(self.gamma, float) else list(self.gamma)
        return {
            "dt": self.dt,
            "gamma": gamma,
            "kappa": self.kappa,
            "sample_every": self.sample_every,
            "t_end": self.t_end,
        }


@dataclass(eq=False)
class Trajectory:
    """Uniformly sampled run output.

    ``x`` holds the position coordinate of each sample: the price ``p`` in
    sphere and first-order mode, the deviation ``q`` in flat mode. ``v`` is its
    time derivative. Energy terms are stored per sample.
    """

    mode: str
    t: NDArray[np.float64]
    x: NDArray[np.float64]
    v: NDArray[np.float64]
    kinetic: NDArray[np.float64]
    potential: NDArray[np.float64]
    dissipation_rate: NDArray[np.float64]
    injection_rate: NDArray[np.float64]
    params: DynamicsParams
    model: DemandModel
    p_hat: Optional[Vector] = None
    error: Optional[str] = None
    positivity_violations: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def energy(self) -> NDArray[np.float64]:
        return self.kinetic + self.potential

    @property
    def p(self) -> NDArray[np.float64]:
        if self.mode == "flat":
            return self.x + (self.p_hat if self.p_hat is not None else 0.0)
        return self.x

    @property
    def q(self) -> NDArray[np.float64]:
        if self.mode == "flat":
            return self.x
        if self.p_hat is None:
            raise UsageError("trajectory has no equilibrium to measure deviations from")
        return self.x - self.p_hat

    @property
    def sample_dt(self) -> float:
        return self.params.dt * self.params.sample_every

    def state(self, i: int):
        if self.mode == "flat":
            return FlatState(self.x[i], self.v[i], float(self.t[i]))
        return SphereState(self.x[i], self.v[i], float(self.t[i]))

    @property
    def samples(self) -> list:
        from pricedyn.diagnostics import EnergyRecord

        return [
            (
                self.state(i),
                EnergyRecord(
                    float(self.kinetic[i]),
                    float(self.potential[i]),
                    float(self.kinetic[i] + self.potential[i]),
                    float(self.dissipation_rate[i]),
                    float(self.injection_rate[i]),
                ),
            )
            for i in range(len(self))
        ]


def _finite_or_raise(a: Vector, what: str) -> Vector:
    if not math.isfinite(float(np.sum(a))):
        bad = np.flatnonzero(~np.isfinite(a))
        idx = int(bad[0]) if bad.size else None
        raise NumericError(f"{what} is non-finite in component {idx}", index=idx)
    return a


def _tangent(p: Vector, xi: Vector) -> Vector:
    return xi - (p @ xi) / (p @ p) * p


def _xi(model: DemandModel) -> Callable[[Vector], Vector]:
    grad, sol = model.potential_grad, model.solenoidal
    if model.matrix is not None:
        M = np.asarray(model.matrix, dtype=float)
        c = model.equilibrium if model.equilibrium is not None else np.zeros(model.dim)
        return lambda p: M @ (p - c)
    return lambda p: np.asarray(sol(p), dtype=float) - np.asarray(grad(p), dtype=float)


def _sphere_rhs(model: DemandModel, params: DynamicsParams):
    xi = _xi(model)
    kappa = params.kappa
    g = params.damping(model.dim)

    def accel(p, v):
        return kappa * _tangent(p, xi(p)) - g * v - p * (v @ v)

    return accel


def _flat_rhs(model: DemandModel, params: DynamicsParams):
    xi = _xi(model)
    kappa = params.kappa
    g = params.damping(model.dim)

    def accel(q, qdot):
        return kappa * xi(q) - g * qdot

    return accel


def _two_price_rhs(spec: LinearTwoPriceSpec, params: DynamicsParams):
    kappa = params.kappa
    g = params.common_damping()
    ka = kappa * spec.alpha
    k_up = kappa * (spec.beta + spec.delta)
    k_dn = kappa * (spec.beta - spec.delta)

    def accel(q, qdot):
        return np.array(
            [
                -ka * q[0] + k_up * q[1] - g * qdot[0],
                -ka * q[1] + k_dn * q[0] - g * qdot[1],
            ]
        )

    return accel


def acceleration_sphere(state: SphereState, model: DemandModel, params: DynamicsParams) -> Vector:
    """Right side of the sphere-constrained second-order law at ``state``."""
    if state.p.shape[0] != model.dim:
        raise UsageError(f"state has dimension {state.p.shape[0]}, model expects {model.dim}")
    if not state.is_valid():
        raise UsageError("state is off the sphere or its velocity is not tangent")
    a = _sphere_rhs(model, params)(state.p, state.v)
    return _finite_or_raise(a, "acceleration")


def acceleration_flat(state: FlatState, spec: LinearTwoPriceSpec, params: DynamicsParams) -> Vector:
    """Linearized two-price acceleration in deviation coordinates."""
    if state.q.shape[0] != 2:
        raise UsageError("flat two-price acceleration needs a 2-D state")
    a = _two_price_rhs(spec, params)(state.q, state.qdot)
    return _finite_or_raise(a, "acceleration")


def renormalize(state: SphereState) -> SphereState:
    """Project ``p`` back onto the unit sphere and ``v`` onto its tangent plane."""
    p, v = _renormalize(state.p, state.v)
    return SphereState(p, v, state.t)


def _renormalize(p: Vector, v: Vector):
    norm = math.sqrt(float(p @ p))
    if norm == 0.0 or not math.isfinite(norm):
        raise NumericError(f"cannot renormalize price vector of length {norm}")
    p = p / norm
    v = v - (p @ v) * p
    return p, v


def _rk4_second_order(accel, x, v, h):
    k1x = v
    k1v = accel(x, v)
    k2x = v + 0.5 * h * k1v
    k2v = accel(x + 0.5 * h * k1x, k2x)
    k3x = v + 0.5 * h * k2v
    k3v = accel(x + 0.5 * h * k2x, k3x)
    k4x = v + h * k3v
    k4v = accel(x + h * k3x, k4x)
    x_new = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
    v_new = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return x_new, v_new


def _rk4_first_order(rate, x, h):
    k1 = rate(x)
    k2 = rate(x + 0.5 * h * k1)
    k3 = rate(x + 0.5 * h * k2)
    k4 = rate(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_linear_propagator(generator: NDArray[np.float64], h: float) -> NDArray[np.float64]:
    """One classical Runge-Kutta step for ``y' = B y`` as a matrix.

    For a linear autonomous system the four stages collapse to the degree-4
    Taylor polynomial of ``exp(h B)``.
    """
    z = h * np.asarray(generator, dtype=float)
    eye = np.eye(z.shape[0])
    return eye + z @ (eye + z @ (eye + z @ (eye + z / 4.0) / 3.0) / 2.0)


def _flat_generator(M: NDArray[np.float64], kappa: float, g: Vector) -> NDArray[np.float64]:
    n = M.shape[0]
    B = np.zeros((2 * n, 2 * n))
    B[:n, n:] = np.eye(n)
    B[n:, :n] = kappa * M
    B[n:, n:] = -np.diag(g)
    return B


def step_sphere(state: SphereState, model: DemandModel, params: DynamicsParams) -> SphereState:
    """One Runge-Kutta step of the sphere dynamics followed by renormalization."""
    if not state.is_valid():
        raise UsageError("state is off the sphere or its velocity is not tangent")
    accel = _sphere_rhs(model, params)
    x, v = _rk4_second_order(accel, state.p, state.v, params.dt)
    _finite_or_raise(x, "price")
    _finite_or_raise(v, "velocity")
    x, v = _renormalize(x, v)
    return SphereState(x, v, state.t + params.dt)


def _coerce(model, mode: str):
    """Return (model in the mode's coordinates, p_hat, fast two-price spec or None)."""
    spec = None
    if isinstance(model, LinearTwoPriceSpec):
        spec = model
        model = spec.model(unit=mode != "flat")
    if not isinstance(model, DemandModel):
        raise UsageError(f"expected DemandModel or LinearTwoPriceSpec, got {type(model).__name__}")
    p_hat = model.equilibrium
    if mode == "flat":
        model = deviation_model(model)
    return model, p_hat, spec


def integrate(initial, model, params: DynamicsParams, mode: str = "sphere") -> Trajectory:
    """Integrate from ``initial`` to ``params.t_end`` with a fixed step.

    ``model`` is a :class:`DemandModel` or a :class:`LinearTwoPriceSpec`. In
    flat mode with a two-price spec the damping must be equal for both goods.
    A non-finite state stops the run; the partial trajectory is returned with
    ``error`` set.
    """
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not params.t_end > 0:
        raise UsageError(f"t_end must be positive, got {params.t_end}")
    model, p_hat, spec = _coerce(model, mode)
    n = model.dim
    n_steps = int(round(params.t_end / params.dt))
    if n_steps < 1 or abs(n_steps * params.dt - params.t_end) > 1e-9 * params.t_end:
        raise UsageError("t_end must be a whole number of steps dt")
    if n_steps % params.sample_every:
        raise UsageError("number of steps must be a multiple of sample_every")
    if n_steps // params.sample_every < 1:
        raise UsageError("run too short to produce two samples")

    kappa = params.kappa
    g = params.damping(n)
    h = params.dt
    if mode == "flat":
        if not isinstance(initial, FlatState):
            raise UsageError("flat mode needs a FlatState")
        x, v, t0 = initial.q.copy(), initial.qdot.copy(), initial.t
    else:
        if not isinstance(initial, SphereState):
            raise UsageError(f"{mode} mode needs a SphereState")
        x, v, t0 = initial.p.copy(), initial.v.copy(), initial.t
        if not initial.is_valid():
            log.warning("initial state off sphere or velocity not tangent; renormalizing at t=0")
            x, v = _renormalize(x, v)
    if x.shape[0] != n:
        raise UsageError(f"initial state has dimension {x.shape[0]}, model expects {n}")

    if mode == "flat" and model.matrix is not None:
        if spec is not None:
            params.common_damping()
        R = rk4_linear_propagator(_flat_generator(np.asarray(model.matrix, float), kappa, g), h)

        def advance(x, v):
            y = R @ np.concatenate((x, v))
            return y[:n], y[n:]

    elif mode == "flat":
        accel = _flat_rhs(model, params)

        def advance(x, v):
            return _rk4_second_order(accel, x, v, h)

    elif mode == "sphere":
        accel = _sphere_rhs(model, params)

        def advance(x, v):
            return _renormalize(*_rk4_second_order(accel, x, v, h))

    else:
        xi = _xi(model)

        def rate(p):
            return kappa * _tangent(p, xi(p))

        def advance(x, v):
            x = _rk4_first_order(rate, x, h)
            x = x / math.sqrt(float(x @ x))
            return x, rate(x)

        v = rate(x)

    every = params.sample_every
    n_samples = n_steps // every + 1
    ts = np.empty(n_samples)
    xs = np.empty((n_samples, n))
    vs = np.empty((n_samples, n))
    ts[0], xs[0], vs[0] = t0, x, v
    error = None
    count = 1
    for k in range(1, n_steps + 1):
        try:
            x, v = advance(x, v)
            if not math.isfinite(float(np.sum(x) + np.sum(v))):
                raise NumericError("state became non-finite", step=k)
        except (NumericError, FloatingPointError, OverflowError) as exc:
            error = f"step {k}: {exc}"
            log.error("integration aborted at step %d: %s", k, exc)
            break
        if k % every == 0:
            ts[count] = t0 + k * h
            xs[count] = x
            vs[count] = v
            count += 1
    ts, xs, vs = ts[:count], xs[:count], vs[:count]

    # samples just before a blow-up may be finite yet overflow when squared
    with np.errstate(over="ignore", invalid="ignore"):
        kinetic = 0.5 * np.einsum("ij,ij->i", vs, vs)
        potential = kappa * np.array([model.potential(xx) for xx in xs], dtype=float)
        dissipation = np.einsum("ij,j,ij->i", vs, g, vs)
        sol = model.solenoidal
        injection = kappa * np.array([vv @ np.asarray(sol(xx), dtype=float) for xx, vv in zip(xs, vs)], dtype=float)

    prices = xs + p_hat if mode == "flat" else xs
    violations = int(np.count_nonzero(np.any(prices < 0, axis=1)))
    if violations:
        log.info("%d samples left the positive orthant", violations)

    return Trajectory(
        mode=mode,
        t=ts,
        x=xs,
        v=vs,
        kinetic=kinetic,
        potential=potential,
        dissipation_rate=dissipation,
        injection_rate=injection,
        params=params,
        model=model,
        p_hat=p_hat,
        error=error,
        positivity_violations=violations,
        meta={"model": model.name, "spec": spec},
    )
