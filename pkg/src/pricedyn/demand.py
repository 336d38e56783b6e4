"""Excess demand models built from a potential part and a divergence-free part.

A model is supplied constructively: the caller gives the scalar potential
``phi`` (with its gradient) and the solenoidal field ``A``, and the excess
demand is ``xi(p) = -grad phi(p) + A(p)``. Linear fields ``xi(p) = M (p - p_hat)``
can be split in closed form with :func:`decompose_linear`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from pricedyn.errors import NumericError, UsageError

Vector = NDArray[np.float64]
ScalarField = Callable[[Vector], float]
VectorField = Callable[[Vector], Vector]

UNIT_TOL = 1e-12
DIV_TOL = 1e-6


def as_vector(x: ArrayLike, dim: Optional[int] = None, name: str = "p") -> Vector:
    """Convert to a finite float vector, checking the dimension if given."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise UsageError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise UsageError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NumericError(f"{name} has non-finite component {bad[0]}", index=int(bad[0]))
    return arr


def _check_unit(p: Vector) -> None:
    if abs(float(p @ p) - 1.0) > 2 * UNIT_TOL:
        raise UsageError(f"price vector must be unit length, |p| = {np.linalg.norm(p)!r}")


@dataclass(frozen=True, eq=False)
class DemandModel:
    """Excess demand ``xi = -grad(potential) + solenoidal``.

    Attributes:
        dim: number of commodities.
        potential: scalar potential ``phi(p)``, referenced so ``phi(p_hat) = 0``.
        potential_grad: gradient of ``phi``.
        solenoidal: divergence-free field ``A(p)``.
        equilibrium: equilibrium price vector, if known.
        matrix: generator ``M`` when the model is linear, ``xi = M (p - p_hat)``
            (``p_hat`` taken as the origin when ``equilibrium`` is None).
        name: short label used in run summaries.
    """

    dim: int
    potential: ScalarField
    potential_grad: VectorField
    solenoidal: VectorField
    equilibrium: Optional[Vector] = None
    matrix: Optional[NDArray[np.float64]] = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise UsageError("dim must be a positive integer")
        if self.equilibrium is not None:
            object.__setattr__(self, "equilibrium", as_vector(self.equilibrium, self.dim, "equilibrium"))

    def __call__(self, p: ArrayLike) -> Vector:
        return eval_excess_demand(self, p)

    @property
    def is_linear(self) -> bool:
        return self.matrix is not None

    def jacobian(self, p: ArrayLike, step: Optional[float] = None) -> NDArray[np.float64]:
        """Jacobian ``d xi_i / d p_j``; exact for linear models, else central differences."""
        p = as_vector(p, self.dim)
        if self.matrix is not None:
            return np.array(self.matrix, dtype=float)
        h = 1e-6 * (1.0 + np.linalg.norm(p)) if step is None else step
        jac = np.empty((self.dim, self.dim))
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            jac[:, j] = (self(p + e) - self(p - e)) / (2 * h)
        return jac


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    """Closed-form split of a linear field generator ``M``.

    ``potential_quadratic`` is the Hessian ``H`` of ``phi(q) = 1/2 q.H.q``
    with ``q = p - p_hat``; it equals ``-symmetric_matrix``.
    """

    symmetric_matrix: NDArray[np.float64]
    skew_matrix: NDArray[np.float64]
    potential_quadratic: NDArray[np.float64]
    p_hat: Vector


@dataclass(frozen=True)
class LinearTwoPriceSpec:
    """Two goods with own-price ``alpha``, symmetric ``beta`` and antisymmetric ``delta`` coupling."""

    alpha: float
    beta: float
    delta: float
    p_hat: tuple = (1.0, 1.0)

    def __post_init__(self):
        for name in ("alpha", "beta", "delta"):
            if not np.isfinite(getattr(self, name)):
                raise UsageError(f"{name} must be finite")
        if not self.alpha > 0:
            raise UsageError(f"alpha must be positive, got {self.alpha}")
        if self.beta < 0:
            raise UsageError(f"beta must be non-negative, got {self.beta}")
        p_hat = tuple(float(x) for x in self.p_hat)
        if len(p_hat) != 2:
            raise UsageError("p_hat must have two components")
        object.__setattr__(self, "p_hat", p_hat)

    def matrix(self) -> NDArray[np.float64]:
        a, b, d = self.alpha, self.beta, self.delta
        return np.array([[-a, b + d], [b - d, -a]])

    def model(self, unit: bool = False) -> DemandModel:
        """Build the demand model; ``unit=True`` normalizes ``p_hat`` onto the unit circle."""
        p_hat = np.array(self.p_hat)
        if unit:
            p_hat = p_hat / np.linalg.norm(p_hat)
        return linear_model(self.matrix(), p_hat, name="two_price")


def eval_excess_demand(model: DemandModel, p: ArrayLike) -> Vector:
    p = as_vector(p, model.dim)
    xi = -np.asarray(model.potential_grad(p), dtype=float) + np.asarray(model.solenoidal(p), dtype=float)
    bad = np.flatnonzero(~np.isfinite(xi))
    if bad.size:
        raise NumericError(f"excess demand non-finite in component {bad[0]}", index=int(bad[0]))
    return xi


def decompose_linear(M: ArrayLike, p_hat: ArrayLike) -> DecompositionResult:
    """Split ``M`` into symmetric (gradient) and antisymmetric (divergence-free) parts."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError(f"M must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("M has non-finite entries")
    p_hat = as_vector(p_hat, M.shape[0], "p_hat")
    sym = (M + M.T) / 2
    skew = (M - M.T) / 2
    return DecompositionResult(sym, skew, -sym, p_hat)


def quadratic_model(
    hessian: ArrayLike, skew: ArrayLike, p_hat: ArrayLike, name: str = "composite", matrix=None
) -> DemandModel:
    """Model with ``phi(q) = 1/2 q.H.q`` and ``A(q) = K q`` where ``q = p - p_hat``."""
    H = np.asarray(hessian, dtype=float)
    K = np.asarray(skew, dtype=float)
    n = H.shape[0]
    if H.shape != (n, n) or K.shape != (n, n):
        raise UsageError("potential and skew matrices must be square and of equal size")
    if not np.allclose(H, H.T, rtol=0, atol=1e-14 * max(1.0, np.abs(H).max())):
        raise UsageError("potential quadratic must be symmetric")
    if not np.allclose(K, -K.T, rtol=0, atol=1e-14 * max(1.0, np.abs(K).max())):
        raise UsageError("skew matrix must be antisymmetric")
    p_hat = as_vector(p_hat, n, "p_hat")

    def phi(p):
        q = p - p_hat
        return 0.5 * float(q @ H @ q)

    def grad(p):
        return H @ (p - p_hat)

    def A(p):
        return K @ (p - p_hat)

    if matrix is None:
        matrix = -H + K
    return DemandModel(n, phi, grad, A, p_hat, np.asarray(matrix, dtype=float), name)


def linear_model(M: ArrayLike, p_hat: ArrayLike, name: str = "linear") -> DemandModel:
    """Model ``xi(p) = M (p - p_hat)`` split via :func:`decompose_linear`."""
    dec = decompose_linear(M, p_hat)
    return quadratic_model(dec.potential_quadratic, dec.skew_matrix, dec.p_hat, name, matrix=np.asarray(M, float))


def rotation_model(c: float) -> DemandModel:
    """Pure circulation ``A(p) = c (p2, -p1)`` on two goods, zero potential."""
    J = np.array([[0.0, c], [-c, 0.0]])
    return DemandModel(
        2,
        lambda p: 0.0,
        lambda p: np.zeros(2),
        lambda p: J @ p,
        None,
        J,
        "rotation",
    )


def project_tangent(p: ArrayLike, xi: ArrayLike) -> Vector:
    """Remove the component of ``xi`` along the unit vector ``p``."""
    p = as_vector(p)
    xi = as_vector(xi, p.shape[0], "xi")
    _check_unit(p)
    return xi - (p @ xi) / (p @ p) * p


def verify_walras(model: DemandModel, p: ArrayLike, tol: float = 1e-9) -> bool:
    """True when ``|p . xi(p)| <= tol`` at the unit price vector ``p``."""
    p = as_vector(p, model.dim)
    _check_unit(p)
    return bool(abs(float(p @ model(p))) <= tol)


def divergence(field_fn: VectorField, p: ArrayLike, h: Optional[float] = None) -> float:
    """Central-difference divergence of ``field_fn`` at ``p`` with step ``h`` per coordinate."""
    p = as_vector(p)
    if h is None:
        h = 1e-5 * max(1.0, float(np.linalg.norm(p)))
    if not h > 0:
        raise UsageError("step h must be positive")
    total = 0.0
    for i in range(p.shape[0]):
        e = np.zeros_like(p)
        e[i] = h
        hi = np.asarray(field_fn(p + e), dtype=float)
        lo = np.asarray(field_fn(p - e), dtype=float)
        if not (np.all(np.isfinite(hi)) and np.all(np.isfinite(lo))):
            raise NumericError("field is non-finite near p", index=i)
        total += (hi[i] - lo[i]) / (2 * h)
    return total


def verify_divergence_free(
    model: DemandModel, p: ArrayLike, h: Optional[float] = None, tol: float = DIV_TOL
) -> bool:
    p = as_vector(p, model.dim)
    return bool(abs(divergence(model.solenoidal, p, h)) <= tol)


def deviation_model(model: DemandModel) -> DemandModel:
    """Re-express ``model`` in deviation coordinates ``q = p - p_hat``.

    Linear models are rebuilt about the origin so small deviations keep full
    relative precision.
    """
    if model.equilibrium is None:
        raise UsageError("model has no equilibrium; deviation coordinates undefined")
    p_hat = model.equilibrium
    zero = np.zeros(model.dim)
    if model.matrix is not None:
        return linear_model(model.matrix, zero, name=model.name)
    return DemandModel(
        model.dim,
        lambda q: model.potential(p_hat + q),
        lambda q: model.potential_grad(p_hat + q),
        lambda q: model.solenoidal(p_hat + q),
        zero,
        model.matrix,
        model.name,
    )
