"""Energy, circulation and angular-momentum checks on sampled trajectories.

Time derivatives of sampled series are centered differences with
second-order one-sided formulas at the ends, so every residual below shrinks
as the square of the sample spacing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from pricedyn.demand import LinearTwoPriceSpec, as_vector, deviation_model
from pricedyn.dynamics import DynamicsParams, FlatState, SphereState, Trajectory
from pricedyn.errors import UsageError


@dataclass(frozen=True)
class EnergyRecord:
    kinetic: float
    potential: float
    total: float
    dissipation_rate: float
    injection_rate: float


@dataclass(frozen=True)
class LoopRecord:
    """A near-recurrence of the phase point.

    ``circulation_A`` is ``kappa`` times the line integral of ``A`` along the
    loop; ``circulation_damping`` is the line integral of ``gamma . dp/dt``.
    """

    t_start: float
    t_end: float
    closure_gap: float
    circulation_A: float
    circulation_damping: float
    i_start: int
    i_end: int

    @property
    def period(self) -> float:
        return self.t_end - self.t_start

    def as_dict(self) -> dict:
        return dict(sorted(asdict(self).items()))


@dataclass(frozen=True, eq=False)
class ResidualReport:
    residual: NDArray[np.float64]
    max_abs: float
    rms: float


@dataclass(frozen=True, eq=False)
class AngularMomentumReport(ResidualReport):
    L: NDArray[np.float64]
    ratio: NDArray[np.float64]
    terminal_ratio: float


def _report(r: NDArray[np.float64]) -> tuple:
    return r, float(np.max(np.abs(r))), float(np.sqrt(np.mean(r * r)))


def time_derivative(t: ArrayLike, y: ArrayLike) -> NDArray[np.float64]:
    """Centered-difference derivative of a sampled series, second order at the ends too."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape[0] < 3:
        raise UsageError("need at least 3 samples to differentiate")
    return np.gradient(y, t, edge_order=2)


def energy(state: Union[SphereState, FlatState], model, params: DynamicsParams) -> EnergyRecord:
    """Kinetic, potential and rate terms of the energy balance at one state.

    For a :class:`FlatState` the model is evaluated at ``p_hat + q``.
    """
    if isinstance(model, LinearTwoPriceSpec):
        model = model.model(unit=isinstance(state, SphereState))
    if isinstance(state, FlatState):
        x, v = state.q, state.qdot
        model = deviation_model(model)
    else:
        x, v = state.p, state.v
    g = params.damping(model.dim)
    kinetic = 0.5 * float(v @ v)
    potential = params.kappa * float(model.potential(x))
    return EnergyRecord(
        kinetic,
        potential,
        kinetic + potential,
        float(v @ (g * v)),
        params.kappa * float(v @ np.asarray(model.solenoidal(x), dtype=float)),
    )


def energy_balance_residual(traj: Trajectory) -> ResidualReport:
    """Residual of ``d(total)/dt = injection_rate - dissipation_rate`` per sample."""
    if len(traj) < 3:
        raise UsageError("energy balance needs at least 3 samples")
    dE = time_derivative(traj.t, traj.energy)
    return ResidualReport(*_report(dE - traj.injection_rate + traj.dissipation_rate))


def angular_momentum(q: ArrayLike, qdot: ArrayLike) -> float:
    """``L = q2 qdot1 - q1 qdot2`` for a two-good deviation."""
    q = as_vector(q, name="q")
    qdot = as_vector(qdot, name="qdot")
    if q.shape[0] != 2 or qdot.shape[0] != 2:
        raise UsageError("angular momentum is defined for two goods only")
    return float(q[1] * qdot[0] - q[0] * qdot[1])


def _angular_momentum_series(q, qdot):
    return q[:, 1] * qdot[:, 0] - q[:, 0] * qdot[:, 1]


def angular_momentum_residual(
    traj: Trajectory, spec: LinearTwoPriceSpec, params: Optional[DynamicsParams] = None
) -> AngularMomentumReport:
    """Residual of ``dL/dt = kappa delta |q|^2 - gamma L`` along a flat two-price run.

    The law follows from multiplying the first linearized equation by ``q2``,
    the second by ``q1``, and subtracting. For ``beta != 0`` the same step
    leaves an extra ``kappa beta (q2^2 - q1^2)``, which is included so the
    residual vanishes for every two-price run. Also returns ``L / |q|^2`` per
    sample and at the last sample.
    """
    params = traj.params if params is None else params
    if traj.dim != 2:
        raise UsageError("angular momentum residual needs a two-good trajectory")
    if len(traj) < 3:
        raise UsageError("angular momentum residual needs at least 3 samples")
    gamma = params.common_damping()
    q, qdot = traj.q, traj.v
    L = _angular_momentum_series(q, qdot)
    q2 = np.einsum("ij,ij->i", q, q)
    coupling = spec.delta * q2 + spec.beta * (q[:, 1] ** 2 - q[:, 0] ** 2)
    r = time_derivative(traj.t, L) - params.kappa * coupling + gamma * L
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(q2 > 0, L / np.where(q2 > 0, q2, 1.0), 0.0)
    return AngularMomentumReport(*_report(r), L=L, ratio=ratio, terminal_ratio=float(ratio[-1]))


def _phase_points(traj: Trajectory, tau: Optional[float]) -> NDArray[np.float64]:
    if tau is None:
        tau = characteristic_time(traj.params, traj.dim)
    return np.hstack([traj.x, tau * traj.v])


def characteristic_time(params: DynamicsParams, n: int) -> float:
    """``1 / max(gamma)``, or 1 when there is no damping."""
    gmax = float(np.max(params.damping(n)))
    return 1.0 / gmax if gmax > 0 else 1.0


def circulation_integrals(
    traj: Trajectory, i_start: int, i_end: int, eps: Optional[float] = None, tau: Optional[float] = None
) -> tuple:
    """Trapezoidal line integrals ``kappa * sum dp.A`` and ``sum dp.gamma.v`` over samples ``i_start..i_end``.

    When ``eps`` is given the segment must close to within ``eps`` in phase space.
    """
    if not 0 <= i_start < i_end < len(traj):
        raise UsageError(f"invalid segment [{i_start}, {i_end}] for {len(traj)} samples")
    if eps is not None:
        z = _phase_points(traj, tau)
        gap = float(np.linalg.norm(z[i_end] - z[i_start]))
        if gap > eps:
            raise UsageError(f"segment is open: closure gap {gap:.3e} exceeds eps {eps:.3e}")
    x = traj.x[i_start : i_end + 1]
    v = traj.v[i_start : i_end + 1]
    g = traj.params.damping(traj.dim)
    A = np.array([np.asarray(traj.model.solenoidal(xx), dtype=float) for xx in x])
    dx = np.diff(x, axis=0)
    circ_A = traj.params.kappa * float(np.sum(dx * 0.5 * (A[1:] + A[:-1])))
    circ_damp = float(np.sum(dx * g * 0.5 * (v[1:] + v[:-1])))
    return circ_A, circ_damp


def _first_exit(z, i, eps, chunk=256):
    n = z.shape[0]
    start = i + 1
    while start < n:
        stop = min(n, start + chunk)
        d = np.linalg.norm(z[start:stop] - z[i], axis=1)
        out = np.flatnonzero(d >= eps)
        if out.size:
            return start + int(out[0])
        start = stop
        chunk *= 2
    return None


def detect_recurrence(
    traj: Trajectory, eps: float, min_duration: float, tau: Optional[float] = None
) -> list:
    """Find non-overlapping near-returns of the phase point ``(p, tau v)``.

    Scanning forward from a start sample, a return counts only after the
    trajectory has left the ``eps`` ball around the start and at least
    ``min_duration`` has elapsed; the closest sample of the first qualifying
    pass is the loop end, and the scan resumes there. Once the rest of the run
    never leaves the ball around the current start, scanning stops.
    """
    if not eps > 0:
        raise UsageError("eps must be positive")
    if min_duration < 3 * traj.sample_dt:
        raise UsageError("min_duration must span at least three samples")
    z = _phase_points(traj, tau)
    n = z.shape[0]
    m = int(math.ceil(min_duration / traj.sample_dt - 1e-9))
    tree = cKDTree(z)
    loops = []
    i = 0
    while i + m < n:
        exit_at = _first_exit(z, i, eps)
        if exit_at is None:
            break
        lo = max(exit_at + 1, i + m)
        cands = np.array(sorted(j for j in tree.query_ball_point(z[i], eps) if j >= lo), dtype=int)
        if cands.size == 0:
            i += 1
            continue
        breaks = np.flatnonzero(np.diff(cands) > 1)
        block = cands[: breaks[0] + 1] if breaks.size else cands
        d = np.linalg.norm(z[block] - z[i], axis=1)
        j = int(block[np.argmin(d)])
        gap = float(np.min(d))
        circ_A, circ_damp = circulation_integrals(traj, i, j)
        loops.append(LoopRecord(float(traj.t[i]), float(traj.t[j]), gap, circ_A, circ_damp, i, j))
        i = j
    return loops


def oscillation_estimate(t: ArrayLike, y: ArrayLike) -> tuple:
    """Angular frequency and exponential rate of a damped oscillation.

    Frequency comes from the spacing of interpolated zero crossings, the rate
    from a log-linear fit to parabolically refined extrema.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.flatnonzero(np.signbit(y[:-1]) != np.signbit(y[1:]))
    if s.size < 2:
        raise UsageError("series has fewer than two zero crossings")
    crossings = t[s] - y[s] * (t[s + 1] - t[s]) / (y[s + 1] - y[s])
    omega = math.pi / float(np.mean(np.diff(crossings)))

    dy = np.diff(y)
    k = np.flatnonzero(np.signbit(dy[:-1]) != np.signbit(dy[1:])) + 1
    k = k[(k > 0) & (k < y.shape[0] - 1)]
    if k.size < 2:
        raise UsageError("series has fewer than two extrema")
    h = t[1] - t[0]
    y0, y1, y2 = y[k - 1], y[k], y[k + 1]
    denom = y0 - 2 * y1 + y2
    shift = np.where(denom != 0, 0.5 * (y0 - y2) / np.where(denom != 0, denom, 1.0), 0.0)
    t_ext = t[k] + shift * h
    y_ext = y1 - 0.25 * (y0 - y2) * shift
    rate = float(np.polyfit(t_ext, np.log(np.abs(y_ext)), 1)[0])
    return omega, rate
