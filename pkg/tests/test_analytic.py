import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from pricedyn.analytic import (
    balanced_delta,
    conservative_modes,
    flat_solution,
    quadratic_roots,
    rotational_modes,
)
from pricedyn.demand import LinearTwoPriceSpec
from pricedyn.dynamics import DynamicsParams, FlatState
from pricedyn.errors import UsageError


def _matched(ours, ref, tol):
    ref = list(ref)
    for w in ours:
        j = int(np.argmin([abs(w - r) for r in ref]))
        if abs(w - ref.pop(j)) > tol:
            return False
    return not ref


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 10), st.floats(0, 10), st.floats(-10, 10), st.floats(0.01, 10))
def test_rotational_roots_match_polynomial_oracle(alpha, gamma, delta, kappa):
    modes = rotational_modes(LinearTwoPriceSpec(alpha, 0.0, delta), DynamicsParams(kappa=kappa, gamma=gamma))
    c = kappa * complex(alpha, delta)
    for w in modes.modes:
        assert abs(w * w + gamma * w + c) <= 1e-12 * (1 + abs(w) ** 2)
    assert _matched(modes.modes, np.roots([1, gamma, c]), 1e-8 * (1 + abs(c) + gamma))


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 10), st.floats(0, 10), st.floats(0, 10), st.floats(0.01, 10))
def test_conservative_roots_match_polynomial_oracle(alpha, beta, gamma, kappa):
    modes = conservative_modes(LinearTwoPriceSpec(alpha, beta, 0.0), DynamicsParams(kappa=kappa, gamma=gamma))
    for label, stiff in (("y1", alpha - beta), ("y2", alpha + beta)):
        ws = [w for w, lab in zip(modes.modes, modes.basis_labels) if lab == label]
        c = kappa * stiff
        for w in ws:
            assert abs(w * w + gamma * w + c) <= 1e-12 * (1 + abs(w) ** 2 + abs(c))
        assert _matched(ws, np.roots([1, gamma, c]).astype(complex), 1e-7 * (1 + abs(c) + gamma))


def test_quadratic_roots_small_root_is_accurate():
    # w^2 + 1e8 w + 1 = 0 has a root near -1e-8 that naive formulas lose
    big, small = quadratic_roots(1e8, 1.0)
    assert small == pytest.approx(-1e-8, rel=1e-12)
    assert big == pytest.approx(-1e8, rel=1e-12)
    assert quadratic_roots(0, 0) == (0j, 0j)


def test_conservative_verdicts():
    p = DynamicsParams(kappa=1.0, gamma=1.0)
    assert conservative_modes(LinearTwoPriceSpec(2, 1, 0), p).verdict == "decays"
    unstable = conservative_modes(LinearTwoPriceSpec(1, 2, 0), p)
    assert unstable.verdict == "unstable"
    grow = [lab for w, lab in zip(unstable.modes, unstable.basis_labels) if w.real > 0]
    assert grow == ["y1"]


def test_conservative_overlap_has_no_dominant():
    modes = conservative_modes(LinearTwoPriceSpec(2, 0, 0), DynamicsParams(kappa=1.0, gamma=1.0))
    assert modes.dominant is None
    assert modes.modes[:2] == modes.modes[2:]


def test_rotational_examples():
    modes = rotational_modes(LinearTwoPriceSpec(2, 0, 0.5), DynamicsParams(kappa=1.0, gamma=1.0))
    assert modes.stable and modes.spiral
    assert modes.ratio == pytest.approx(-modes.dominant.imag)
    assert modes.ratio > 0  # positive delta turns the dominant mode so that L > 0


def test_rotational_ratio_is_odd_in_delta():
    p = DynamicsParams(kappa=1.0, gamma=1.0)
    for d in (0.1, 0.5, 2.0):
        a = rotational_modes(LinearTwoPriceSpec(2, 0, d), p).ratio
        b = rotational_modes(LinearTwoPriceSpec(2, 0, -d), p).ratio
        assert a == pytest.approx(-b, rel=1e-12)


def test_large_damping_ratio_approaches_delta_over_gamma():
    gamma = 10 * np.sqrt(2)
    r = rotational_modes(LinearTwoPriceSpec(2, 0, 0.5), DynamicsParams(kappa=1.0, gamma=gamma)).ratio
    assert r == pytest.approx(0.5 / gamma, rel=0.05)


def test_balanced_delta_gives_neutral_mode():
    alpha, gamma = 2.0, 1.0
    d = balanced_delta(alpha, gamma)
    modes = rotational_modes(LinearTwoPriceSpec(alpha, 0, d), DynamicsParams(kappa=1.0, gamma=gamma))
    assert abs(modes.dominant.real) <= 1e-12
    assert abs(modes.dominant.imag) == pytest.approx(np.sqrt(alpha), rel=1e-12)
    assert modes.ratio == pytest.approx(-np.sqrt(alpha), rel=1e-12)


def test_mode_requests_rejected_off_case():
    p = DynamicsParams(kappa=1.0, gamma=1.0)
    with pytest.raises(UsageError):
        conservative_modes(LinearTwoPriceSpec(2, 1, 0.5), p)
    with pytest.raises(UsageError):
        rotational_modes(LinearTwoPriceSpec(2, 1, 0.5), p)
    with pytest.raises(UsageError):
        flat_solution(LinearTwoPriceSpec(2, 1, 0.5), p, FlatState([0.1, 0], [0, 0]), 1.0)


def _expm_oracle(spec, kappa, gamma, s0, t):
    B = np.zeros((4, 4))
    B[:2, 2:] = np.eye(2)
    B[2:, :2] = kappa * spec.matrix()
    B[2:, 2:] = -gamma * np.eye(2)
    return expm(B * t) @ np.concatenate([s0.q, s0.qdot])


@pytest.mark.parametrize(
    "alpha,beta,delta,gamma",
    [
        (2.0, 1.0, 0.0, 1.0),
        (1.0, 2.0, 0.0, 1.0),
        (2.0, 0.0, 0.5, 1.0),
        (2.0, 0.0, -1.3, 0.3),
        (2.0, 0.0, 0.0, 0.0),
        (0.25, 0.0, 0.0, 1.0),  # critically damped
        (2.0, 1.75, 0.0, 1.0),  # y1 critically damped
    ],
)
def test_flat_solution_matches_matrix_exponential(alpha, beta, delta, gamma):
    spec = LinearTwoPriceSpec(alpha, beta, delta)
    params = DynamicsParams(kappa=1.0, gamma=gamma)
    s0 = FlatState([0.1, -0.04], [0.02, 0.07])
    for t in (0.0, 0.3, 2.0, 7.5):
        ours = flat_solution(spec, params, s0, t)
        ref = _expm_oracle(spec, 1.0, gamma, s0, t)
        np.testing.assert_allclose(np.concatenate([ours.q, ours.qdot]), ref, rtol=1e-9, atol=1e-13)


def test_flat_solution_satisfies_ode():
    spec = LinearTwoPriceSpec(2.0, 0.0, 0.5)
    params = DynamicsParams(kappa=1.0, gamma=0.7)
    s0 = FlatState([0.1, 0.0], [0.0, 0.05])
    h = 1e-4
    for t in (0.5, 3.0):
        a, b, c = (flat_solution(spec, params, s0, t + k * h) for k in (-1, 0, 1))
        qdd = (c.q - 2 * b.q + a.q) / h**2
        np.testing.assert_allclose(qdd, spec.matrix() @ b.q - 0.7 * b.qdot, atol=1e-6)
        np.testing.assert_allclose((c.q - a.q) / (2 * h), b.qdot, atol=1e-8)


def test_flat_solution_respects_start_time():
    spec = LinearTwoPriceSpec(2.0, 1.0, 0.0)
    params = DynamicsParams(kappa=1.0, gamma=1.0)
    a = flat_solution(spec, params, FlatState([0.1, 0], [0, 0], t=0.0), 1.5)
    b = flat_solution(spec, params, FlatState([0.1, 0], [0, 0], t=5.0), 6.5)
    np.testing.assert_allclose(a.q, b.q, rtol=1e-14)
    assert b.t == 6.5
