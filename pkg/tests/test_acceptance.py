"""Acceptance checks, one test per criterion.

Each test records its measured quantities; the terminal summary prints one
PASS/FAIL line per criterion (see conftest.py).
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from pricedyn.analytic import balanced_delta, conservative_modes, flat_solution, rotational_modes
from pricedyn.cli import main
from pricedyn.demand import DemandModel, LinearTwoPriceSpec, linear_model
from pricedyn.diagnostics import (
    angular_momentum_residual,
    detect_recurrence,
    energy_balance_residual,
    oscillation_estimate,
)
from pricedyn.discrete import (
    DiscreteAgentSpec,
    DiscreteState,
    iterate,
    step_delayed,
    step_laggard_secondorder,
)
from pricedyn.dynamics import DynamicsParams, FlatState, SphereState, integrate

GOLDEN = Path(__file__).parent / "golden"


def _flat(spec, gamma=1.0, dt=1e-3, t_end=10.0, every=1, q0=(0.1, 0.0), v0=(0.0, 0.0), kappa=1.0):
    params = DynamicsParams(kappa=kappa, gamma=gamma, dt=dt, t_end=t_end, sample_every=every)
    return integrate(FlatState(q0, v0), spec, params, "flat")


def _g(x):
    return f"{x:.3g}"


@pytest.mark.criterion(1, "sphere constraint holds over 1e5 steps")
def test_sphere_constraint_invariant(record_property):
    spec = LinearTwoPriceSpec(2.0, 1.0, 0.5, (1.0, 1.0))
    params = DynamicsParams(kappa=1.0, gamma=0.5, dt=1e-3, t_end=100.0, sample_every=1)
    traj = integrate(SphereState([0.8, 0.6], [-0.3, 0.4]), spec, params, "sphere")
    assert traj.error is None and len(traj) == 100_001
    norm_err = float(np.max(np.abs(np.einsum("ij,ij->i", traj.p, traj.p) - 1.0)))
    tangency = float(np.max(np.abs(np.einsum("ij,ij->i", traj.p, traj.v))))
    record_property("max||p|^2-1|", _g(norm_err))
    record_property("max|p.v|", _g(tangency))
    assert norm_err <= 1e-9
    assert tangency <= 1e-9


@pytest.mark.criterion(2, "flat run matches closed form; y1 frequency and rate match its root")
def test_integrator_matches_oracle(record_property):
    spec = LinearTwoPriceSpec(2.0, 1.0, 0.0)
    params = DynamicsParams(kappa=1.0, gamma=1.0)
    s0 = FlatState([0.1, 0.0], [0.0, 0.0])
    traj = _flat(spec, t_end=20.0, every=10)
    i10 = int(np.flatnonzero(np.isclose(traj.t, 10.0))[0])
    exact = flat_solution(spec, params, s0, 10.0)
    rel = float(np.linalg.norm(traj.x[i10] - exact.q) / np.linalg.norm(exact.q))
    record_property("rel_err(t=10)", _g(rel))
    assert rel <= 1e-6

    # y1 = q1 + q2 has stiffness kappa (alpha - beta)
    root = conservative_modes(spec, params).modes[0]
    omega, rate = oscillation_estimate(traj.t, traj.x[:, 0] + traj.x[:, 1])
    e_omega = abs(omega - abs(root.imag)) / abs(root.imag)
    e_rate = abs(rate - root.real) / abs(root.real)
    record_property("freq_err", _g(e_omega))
    record_property("rate_err", _g(e_rate))
    assert e_omega <= 0.01
    assert e_rate <= 0.01


@pytest.mark.criterion(3, "beta<alpha contracts; beta>alpha grows along q1+q2")
def test_stability_dichotomy(record_property):
    decay = _flat(LinearTwoPriceSpec(2.0, 1.0, 0.0), every=10)
    shrink = float(np.linalg.norm(decay.x[-1]) / np.linalg.norm(decay.x[0]))
    record_property("|q(10)|/|q(0)|", _g(shrink))
    assert shrink < 1e-2

    grow = _flat(LinearTwoPriceSpec(1.0, 2.0, 0.0), every=10)
    soft = np.abs(grow.x[:, 0] + grow.x[:, 1])
    stiff = np.abs(grow.x[:, 0] - grow.x[:, 1])
    after = grow.t >= 1.0
    record_property("|q1+q2| growth", _g(soft[-1] / soft[0]))
    assert np.all(np.diff(soft[after]) > 0)
    assert soft[-1] > 100 * soft[0]
    assert stiff[-1] < stiff[0]
    verdict = conservative_modes(LinearTwoPriceSpec(1.0, 2.0, 0.0), DynamicsParams(gamma=1.0)).verdict
    assert verdict == "unstable"


@pytest.mark.criterion(4, "energy balance residual small and second order")
def test_energy_balance(record_property):
    for label, spec in (("delta0", LinearTwoPriceSpec(2.0, 1.0, 0.0)), ("beta0", LinearTwoPriceSpec(2.0, 0.0, 0.5))):
        coarse = energy_balance_residual(_flat(spec, dt=2e-3)).max_abs
        fine = energy_balance_residual(_flat(spec, dt=1e-3)).max_abs
        record_property(f"{label}:max_r", _g(fine))
        record_property(f"{label}:refine_ratio", f"{coarse / fine:.3f}")
        assert fine <= 5e-6
        assert coarse / fine == pytest.approx(4.0, rel=0.25)


@pytest.mark.criterion(5, "without circulation the total energy never increases")
def test_conservative_dissipation(record_property):
    bound = 5e-6
    flat = _flat(LinearTwoPriceSpec(2.0, 1.0, 0.0), every=1, q0=(0.3, -0.1), v0=(0.1, 0.2))
    dt = flat.sample_dt
    worst = float(np.max(np.diff(flat.energy)))
    record_property("flat:max_dE", _g(worst))
    assert worst <= bound * dt

    params = DynamicsParams(kappa=1.0, gamma=(0.5, 1.5), dt=1e-3, t_end=10.0)
    sphere = integrate(SphereState([0.8, 0.6], [-0.3, 0.4]), LinearTwoPriceSpec(2.0, 1.0, 0.0), params, "sphere")
    assert np.all(sphere.injection_rate == 0)
    worst = float(np.max(np.diff(sphere.energy)))
    record_property("sphere:max_dE", _g(worst))
    assert worst <= bound * dt


def _sweep_rows(tmp_path, capsys, doc, param, grid):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    assert main(["--quiet", "sweep", str(path), "--param", param, f"--grid={grid}"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


@pytest.mark.criterion(6, "angular-momentum law, terminal ratio and overdamped limit")
def test_angular_momentum_law(record_property, tmp_path, capsys):
    alpha, delta, kappa = 2.0, 0.5, 1.0
    spec = LinearTwoPriceSpec(alpha, 0.0, delta)
    traj = _flat(spec, t_end=60.0)
    rep = angular_momentum_residual(traj, spec)
    want = rotational_modes(spec, DynamicsParams(kappa=kappa, gamma=1.0)).ratio
    err = abs(rep.terminal_ratio - want) / abs(want)
    record_property("max_r", _g(rep.max_abs))
    record_property("terminal_ratio_err", _g(err))
    assert rep.max_abs <= 5e-6
    assert err <= 5e-3

    g_over = 10 * math.sqrt(kappa * alpha)
    doc = {
        "name": "gamma_sweep",
        "model": {"alpha": alpha, "beta": 0, "delta": delta, "p_hat": [1, 1]},
        "dynamics": {"mode": "flat", "kappa": kappa, "gamma": 1, "dt": 1e-3, "t_end": 60, "sample_every": 100},
        "initial": {"q": [0.1, 0.0], "v": [0.0, 0.0]},
        "diagnostics": {"angular_momentum": True},
    }
    rows = _sweep_rows(tmp_path, capsys, doc, "dynamics.gamma", f"1,2,5,{g_over!r}")
    ratios = [float(r["terminal_ratio"]) for r in rows]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
    limit = kappa * delta / g_over
    over_err = abs(ratios[-1] - limit) / limit
    record_property("overdamped_err", _g(over_err))
    assert over_err <= 0.05


@pytest.mark.criterion(7, "loop period on the periodic orbit; circulation balance on damped loops")
def test_loop_circulation(record_property):
    alpha, r = 2.0, 0.1
    spec = LinearTwoPriceSpec(alpha, 0.0, 0.0)
    omega = abs(rotational_modes(spec, DynamicsParams(gamma=0.0)).modes[0].imag)
    orbit = _flat(spec, gamma=0.0, t_end=20.0, q0=(r, 0.0), v0=(0.0, r * omega))
    loops = detect_recurrence(orbit, eps=1e-4, min_duration=1.0)
    assert loops
    period_err = max(abs(lp.period - 2 * math.pi / omega) / (2 * math.pi / omega) for lp in loops)
    record_property("period_err", _g(period_err))
    assert period_err <= 5e-3

    # the balanced asymmetry turns one damped mode into a limit cycle at the same frequency
    gamma = 1.0
    dt = 1e-3
    damped_spec = LinearTwoPriceSpec(alpha, 0.0, balanced_delta(alpha, gamma))
    damped = _flat(damped_spec, gamma=gamma, dt=dt, t_end=40.0, q0=(r, 0.0), v0=(0.0, r * omega))
    loops = detect_recurrence(damped, eps=1e-3, min_duration=2.0)
    assert len(loops) >= 3
    worst = 0.0
    for lp in loops:
        gap_bound = 10 * (lp.closure_gap + dt**2)
        worst = max(worst, abs(lp.circulation_A - lp.circulation_damping) / gap_bound)
        assert lp.period == pytest.approx(2 * math.pi / omega, rel=5e-3)
    record_property("damped_loops", len(loops))
    record_property("max|diff|/bound", _g(worst))
    assert worst <= 1.0


@pytest.mark.criterion(8, "discrete-map equivalences and first-order reductions")
def test_discrete_equivalences(record_property):
    toy = linear_model([[-1.0]], [1.0])
    two = LinearTwoPriceSpec(2.0, 1.0, 0.5, (1.0, 1.0)).model()
    worst = 0.0
    for f_a, nu in ((0.5, 0.4), (0.5, 1.998), (0.5, 0.2)):
        spec = DiscreteAgentSpec("laggard", f_a=f_a, mu=0.2, nu=nu)
        for model, p0, dp0 in ((toy, [1.5], [0.0]), (two, [1.2, 0.9], [0.01, -0.02])):
            a = iterate(DiscreteState(p0, dp0), spec, model, 1000)
            b = iterate(DiscreteState(p0, dp0), spec, model, 1000, stepper=step_laggard_secondorder)
            worst = max(worst, float(np.max(np.abs(a.p - b.p))))
    record_property("laggard_gap", _g(worst))
    assert worst <= 1e-12

    def first_order(c, p0, n):
        p = [np.array(p0, dtype=float)]
        for _ in range(n):
            p.append(p[-1] + c * two(p[-1]))
        return np.array(p)

    p0, dp0 = [1.2, 0.9], [0.01, -0.02]
    reductions = {
        "laggard": DiscreteAgentSpec("laggard", f_a=1.0, mu=0.3, nu=0.7),
        "bullbear": DiscreteAgentSpec("bullbear", f_a=0.5, mu=0.2, nu=0.3, lambda_=0.1, bear_coeff=0.3),
        "delayed": DiscreteAgentSpec("delayed", f_a=1.0),
    }
    for name, spec in reductions.items():
        state = DiscreteState(p0, dp0, np.array(p0) - np.array(dp0))
        got = iterate(state, spec, two, 100).p
        np.testing.assert_array_equal(got, first_order(spec.demand_coeff, p0, 100), err_msg=name)

    bumpy_hat = np.array([1.0, 1.0])
    def grad(p):
        q = p - bumpy_hat
        return np.sin(q) + 0.5 * q**2

    bumpy = DemandModel(
        2,
        lambda p: float(np.sum(1 - np.cos(p - bumpy_hat) + (p - bumpy_hat) ** 3 / 6)),
        grad,
        lambda p: 0.3 * np.array([p[1] - 1.0, 1.0 - p[0]]),
        bumpy_hat,
    )
    spec = DiscreteAgentSpec("delayed", f_a=0.4)

    def gap(scale):
        s = DiscreteState.from_history(bumpy_hat + scale * np.array([0.5, 0.1]), bumpy_hat + scale * np.array([0.3, -0.2]))
        return float(np.linalg.norm(step_delayed(s, spec, bumpy).p_bar - step_delayed(s, spec, bumpy, "taylor").p_bar))

    ratio = gap(0.1) / gap(0.05)
    record_property("taylor_gap_ratio", f"{ratio:.3f}")
    assert ratio == pytest.approx(4.0, rel=0.15)


@pytest.mark.criterion(9, "byte-identical reruns; golden summaries per mode")
def test_determinism_and_golden_files(record_property, tmp_path, capsys):
    modes = {"sphere": "sphere", "flat": "flat", "first_order": "first_order", "discrete": "discrete:laggard"}
    for name, mode in modes.items():
        doc = json.loads((GOLDEN / f"{name}.json").read_text())
        assert doc["dynamics"]["mode"] == mode
        doc["output"] = {"trajectory_csv": "t.csv", "summary_json": "s.json"}
        outputs = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            d.mkdir()
            (d / "sc.json").write_text(json.dumps(doc), encoding="utf-8")
            assert main(["--quiet", "run", str(d / "sc.json")]) == 0
            outputs.append(((d / "t.csv").read_bytes(), (d / "s.json").read_bytes()))
        assert outputs[0] == outputs[1]
        assert main(["--quiet", "run", str(GOLDEN / f"{name}.json")]) == 0
        printed = capsys.readouterr().out
        assert printed == (GOLDEN / f"{name}.summary.json").read_text()
    record_property("modes", ",".join(modes))
