"""Closed-form mode analysis and solutions of the linearized two-price system.

With equal damping the linearized dynamics decouple in two special cases:

* ``delta = 0``: ``y1 = q1 + q2`` obeys ``y1'' + gamma y1' + kappa (alpha - beta) y1 = 0``
  and ``y2 = q1 - q2`` obeys the same with ``alpha + beta``. The sum feels the
  softer stiffness: the symmetric coupling ``-beta q1 q2`` in the potential
  lowers the curvature along ``q1 = q2``. So for ``beta > alpha`` the growing
  mode lies along ``y1``;
* ``beta = 0``: ``z = q1 + i q2`` obeys ``z'' + gamma z' + kappa (alpha + i delta) z = 0``.

Rates are roots of ``w^2 + gamma w + c = 0``, i.e.
``-gamma/2 (1 +/- sqrt(1 - 4c/gamma^2))``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pricedyn.demand import LinearTwoPriceSpec
from pricedyn.dynamics import DynamicsParams, FlatState
from pricedyn.errors import UsageError

TIE_TOL = 1e-12


@dataclass(frozen=True)
class ModeSet:
    """Complex growth rates ``w`` (``exp(w t)``) and the coordinate each governs.

    ``dominant`` is the rate with the largest real part, or None when two
    rates tie. ``ratio`` is the asymptotic ``L / |q|^2`` implied by the
    dominant rotational mode.
    """

    modes: tuple
    basis_labels: tuple
    kind: str
    dominant: Optional[complex] = None
    ratio: Optional[float] = None

    @property
    def stable(self) -> bool:
        return all(w.real < 0 for w in self.modes)

    @property
    def spiral(self) -> bool:
        return any(w.imag != 0 for w in self.modes)

    @property
    def verdict(self) -> str:
        return "decays" if self.stable else "unstable"

    def as_dict(self) -> dict:
        return {
            "basis_labels": list(self.basis_labels),
            "dominant": None if self.dominant is None else [self.dominant.real, self.dominant.imag],
            "kind": self.kind,
            "modes": [[w.real, w.imag] for w in self.modes],
            "ratio": self.ratio,
            "spiral": self.spiral,
            "stable": self.stable,
            "verdict": self.verdict,
        }


def quadratic_roots(b: complex, c: complex) -> tuple:
    """Roots of ``w^2 + b w + c = 0``, avoiding cancellation in the smaller one."""
    b = complex(b)
    c = complex(c)
    s = cmath.sqrt(b * b - 4 * c)
    # pick the sign that adds magnitudes
    if (b.conjugate() * s).real < 0:
        s = -s
    big = -(b + s) / 2
    if big == 0:
        return 0j, 0j
    small = c / big
    return big, small


def _ordered(r1: complex, r2: complex) -> tuple:
    """Larger real part first, then larger imaginary part."""
    return tuple(sorted((r1, r2), key=lambda w: (-w.real, -w.imag)))


def _dominant(modes) -> Optional[complex]:
    ranked = sorted(modes, key=lambda w: -w.real)
    scale = 1.0 + max(abs(w) for w in modes)
    if abs(ranked[0].real - ranked[1].real) <= TIE_TOL * scale:
        return None
    return ranked[0]


def _gamma(params: DynamicsParams) -> float:
    return params.common_damping()


def conservative_modes(spec: LinearTwoPriceSpec, params: DynamicsParams) -> ModeSet:
    """Rates of the ``y1 = q1 + q2`` and ``y2 = q1 - q2`` modes when ``delta = 0``.

    ``y1`` has stiffness ``kappa (alpha - beta)``, ``y2`` has ``kappa (alpha + beta)``.
    """
    if spec.delta != 0:
        raise UsageError("conservative modes require delta = 0")
    g = _gamma(params)
    k = params.kappa
    y1 = _ordered(*quadratic_roots(g, k * (spec.alpha - spec.beta)))
    y2 = _ordered(*quadratic_roots(g, k * (spec.alpha + spec.beta)))
    modes = (complex(y1[0]), complex(y1[1]), complex(y2[0]), complex(y2[1]))
    return ModeSet(modes, ("y1", "y1", "y2", "y2"), "conservative", _dominant(modes), None)


def rotational_modes(spec: LinearTwoPriceSpec, params: DynamicsParams) -> ModeSet:
    """Rates of ``z = q1 + i q2`` when ``beta = 0``.

    A single mode ``z = c exp(w t)`` has ``L / |q|^2 = -Im(w)``, which is
    reported for the dominant mode.
    """
    if spec.beta != 0:
        raise UsageError("rotational modes require beta = 0")
    g = _gamma(params)
    modes = tuple(complex(w) for w in _ordered(*quadratic_roots(g, params.kappa * complex(spec.alpha, spec.delta))))
    dom = _dominant(modes)
    ratio = None if dom is None else -dom.imag
    return ModeSet(modes, ("z", "z"), "rotational", dom, ratio)


def _scalar_solution(c: complex, g: float, y0: complex, v0: complex, t: float) -> tuple:
    """Exact ``(y, y')`` at ``t`` for ``y'' + g y' + c y = 0``.

    Uses ``y = exp(m t) [y0 cosh(s t) + (v0 - m y0) sinh(s t)/s]`` with
    ``m = -g/2`` and ``s^2 = m^2 - c``, which reduces to the repeated-root form
    ``(y0 + (v0 - m y0) t) exp(m t)`` when ``s = 0``.
    """
    m = -g / 2
    s = cmath.sqrt(m * m - c)
    st = s * t
    ch = cmath.cosh(st)
    if abs(st) < 1e-4:
        shc = t * (1 + st * st / 6 + st**4 / 120)  # sinh(st)/s
        s_sh = s * st * (1 + st * st / 6)  # s sinh(st)
    else:
        shc = cmath.sinh(st) / s
        s_sh = s * cmath.sinh(st)
    e = cmath.exp(m * t)
    w = v0 - m * y0
    y = e * (y0 * ch + w * shc)
    # d/dt of the bracket: y0 s sinh + w cosh
    dy = m * y + e * (y0 * s_sh + w * ch)
    return y, dy


def flat_solution(spec: LinearTwoPriceSpec, params: DynamicsParams, initial: FlatState, t: float) -> FlatState:
    """Exact flat-mode state at time ``t`` from ``initial`` (``delta = 0`` or ``beta = 0``)."""
    g = _gamma(params)
    k = params.kappa
    q0, v0 = initial.q, initial.qdot
    if q0.shape[0] != 2:
        raise UsageError("flat solution needs a two-good state")
    tau = t - initial.t
    if spec.delta == 0:
        y1, dy1 = _scalar_solution(k * (spec.alpha - spec.beta), g, q0[0] + q0[1], v0[0] + v0[1], tau)
        y2, dy2 = _scalar_solution(k * (spec.alpha + spec.beta), g, q0[0] - q0[1], v0[0] - v0[1], tau)
        y1, dy1, y2, dy2 = y1.real, dy1.real, y2.real, dy2.real
        q = np.array([(y1 + y2) / 2, (y1 - y2) / 2])
        qdot = np.array([(dy1 + dy2) / 2, (dy1 - dy2) / 2])
    elif spec.beta == 0:
        z, dz = _scalar_solution(k * complex(spec.alpha, spec.delta), g, complex(q0[0], q0[1]), complex(v0[0], v0[1]), tau)
        q = np.array([z.real, z.imag])
        qdot = np.array([dz.real, dz.imag])
    else:
        raise UsageError("closed form available only for delta = 0 or beta = 0")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
        raise UsageError("closed form overflowed at this time")
    return FlatState(q, qdot, t)


def balanced_delta(alpha: float, gamma: float, kappa: float = 1.0) -> float:
    """Asymmetry at which one rotational mode neither grows nor decays (``beta = 0``).

    Returns the negative root; the mode then rotates at ``sqrt(kappa alpha)``.
    """
    return -gamma * math.sqrt(alpha / kappa)
