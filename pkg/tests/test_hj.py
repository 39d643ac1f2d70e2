import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticekam import (
    CflViolation,
    InadmissibleStepSize,
    InvalidArgument,
    NumericFailure,
    Parity,
    ScalarField,
    build_grid,
    builtin_model,
    compute_bounds,
    discrete_dx,
    minimizing_control_field,
    random_field,
    semiconcavity_monitor,
    solve_ivp,
    step_backward_scheme,
    step_forward_scheme,
    time_one_map,
)
from latticekam.grid import second_difference

from helpers import random_level_field


def test_free_constant_steps(free1d):
    g = build_grid(1, 4, 8)
    zero = ScalarField.constant(g, Parity.ODD)
    assert np.all(step_backward_scheme(zero, 0, 0.0, free1d).sub == 0)
    assert np.allclose(step_backward_scheme(zero, 0, 1.0, free1d).sub, -g.tau / 2)
    assert np.all(step_forward_scheme(zero, 0, 0.0, free1d).sub == 0)
    assert np.allclose(step_forward_scheme(zero, 0, 1.0, free1d).sub, g.tau / 2)


def test_forward_then_backward_constant(free1d):
    g = build_grid(1, 4, 8)
    v = ScalarField.constant(g, g.level_parity(3), 0.4)
    c = np.array([0.3])
    back = step_backward_scheme(step_forward_scheme(v, 3, c, free1d), 2, c, free1d)
    assert np.allclose(back.sub, 0.4, atol=1e-15)


def test_two_node_grid(mech1d):
    g = build_grid(1, 1, 4)
    a, c = 0.8, np.array([0.5])
    v = ScalarField.from_sublattice(g, Parity.ODD, np.array([a]))
    nxt = step_backward_scheme(v, 0, c, mech1d)
    x = g.coords(g.parity_index(Parity.EVEN))
    assert np.allclose(nxt.sub, a - g.tau * mech1d.H(x, 0.0, c))


def test_parity_checked(mech1d):
    g = build_grid(1, 4, 8)
    with pytest.raises(InvalidArgument):
        step_backward_scheme(ScalarField.constant(g, Parity.EVEN), 0, 0.0, mech1d)


def test_nan_fails_fast(mech1d):
    g = build_grid(1, 4, 8)
    vals = np.zeros(g.n_nodes // 2)
    vals[2] = np.nan
    v = ScalarField.from_sublattice(g, Parity.ODD, vals)
    with pytest.raises(NumericFailure):
        step_backward_scheme(v, 0, 0.0, mech1d)


def test_solve_free_one_period(free1d):
    g = build_grid(1, 4, 8)
    sol = solve_ivp(ScalarField.constant(g, Parity.ODD), g.period_steps, 1.0, free1d)
    assert np.allclose(sol.final.sub, -0.5, atol=1e-14)
    assert sol.final.parity == Parity.ODD
    assert [v.parity for v in sol.levels[:3]] == [Parity.ODD, Parity.EVEN, Parity.ODD]


def test_zero_steps_identity(mech1d, rng):
    g = build_grid(1, 4, 8)
    v = random_level_field(g, 0, rng)
    assert np.array_equal(solve_ivp(v, 0, 0.3, mech1d).final.flat, v.flat)


def test_time_one_map_constants(free1d):
    g = build_grid(2, 2, 8)
    free2 = builtin_model("free", d=2)
    v = ScalarField.constant(g, Parity.ODD, 2.0)
    assert np.allclose(time_one_map(v, [0.0, 0.0], free2).sub, 2.0)
    assert np.allclose(time_one_map(v, [0.4, -0.2], free2).sub, 2.0 - 0.1, atol=1e-14)


def test_cfl_violation_reports_level(free1d):
    g = build_grid(1, 4, 4)  # lam = 0.5, cap 2
    with pytest.raises(CflViolation) as info:
        solve_ivp(ScalarField.constant(g, Parity.ODD), 4, 3.0, free1d)
    assert info.value.level == 0


def test_inadmissible_refused_unless_forced(mech1d):
    b = compute_bounds(mech1d, r=1.0, P=0.0)
    g = build_grid(1, 4, 2)  # lam = 2 > lambda1 = 1
    v = ScalarField.constant(g, Parity.ODD)
    with pytest.raises(InadmissibleStepSize):
        solve_ivp(v, 2, 0.0, mech1d, b)
    assert solve_ivp(v, 2, 0.0, mech1d, b, force=True).steps == 2


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.sampled_from([1, 2]), a=st.floats(-5, 5))
def test_constants_commute_and_monotone(seed, d, a):
    rng = np.random.default_rng(seed)
    model = builtin_model("mechanical-1d" if d == 1 else "mechanical-2d")
    g = build_grid(d, 3, 12)
    c = rng.uniform(-0.3, 0.3, d)
    v = random_level_field(g, 0, rng, 0.05)
    w = ScalarField.from_sublattice(g, v.parity, v.sub + rng.uniform(0, 0.05, v.sub.size))
    sv = step_backward_scheme(v, 0, c, model)
    assert np.allclose(step_backward_scheme(v.shift(a), 0, c, model).sub, sv.sub + a, atol=1e-12)
    assert np.all(step_backward_scheme(w, 0, c, model).sub >= sv.sub - 1e-15)
    # non-expansive over one period
    fv, fw = time_one_map(v, c, model), time_one_map(w, c, model)
    assert fv.sup_distance(fw) <= v.sup_distance(w) + 1e-14
    assert np.all(fw.sub >= fv.sub - 1e-14)


def test_minimizing_controls(free1d, mech1d, rng):
    g = build_grid(1, 4, 8)
    sol = solve_ivp(ScalarField.constant(g, Parity.ODD, 1.0), 3, 0.7, free1d)
    for xi in minimizing_control_field(sol, free1d):
        assert np.allclose(xi.sub, 0.7)
    v0 = random_level_field(g, 0, rng, 0.1)
    sol = solve_ivp(v0, 1, 0.0, free1d)
    xi = minimizing_control_field(sol, free1d)[0]
    assert np.allclose(xi.sub, discrete_dx(v0).sub)
    b = compute_bounds(mech1d, r=1.0, P=0.0)
    g = build_grid(1, 8, 100)
    v0 = random_field(g, Parity.ODD, rng, slope=1.0)
    sol = solve_ivp(v0, 2 * g.period_steps, 0.0, mech1d, b)
    cap = 1.0 / (g.d * b.lambda1)
    assert max(np.max(np.abs(x.sub)) for x in minimizing_control_field(sol, mech1d)) <= cap
    assert np.max(sol.slope) <= b.u_star
    assert all(e["within_r"] for e in sol.rebound)


def test_semiconcavity_cases(mech1d, rng):
    b = compute_bounds(mech1d, r=1.0, P=0.0)
    g = build_grid(1, 4, 40)
    flat = ScalarField.constant(g, Parity.ODD, 0.3)
    rep = semiconcavity_monitor(solve_ivp(flat, 20, 0.0, mech1d, b), b)
    assert rep.M_delta[0] == 0 and rep.ok and rep.starts_below_plus and rep.stays_below_plus
    # sawtooth of slope r: M^0 = r / h
    x = g.coords(g.parity_index(Parity.ODD))[:, 0]
    saw = ScalarField.from_sublattice(g, Parity.ODD, 1.0 * (0.25 - np.abs(x - 0.5 - g.h)))
    sol = solve_ivp(saw, g.period_steps, 0.0, mech1d, b)
    rep = semiconcavity_monitor(sol, b)
    assert rep.M_delta[0] == pytest.approx(np.max(second_difference(saw)))
    assert rep.ok
    assert rep.M_delta[-1] < rep.M_delta[0]


def test_export(tmp_path, mech1d, rng):
    g = build_grid(1, 4, 8)
    sol = solve_ivp(random_level_field(g, 0, rng, 0.05), 4, 0.1, mech1d)
    csv, js = sol.export(tmp_path)
    lines = csv.read_text().splitlines()
    assert lines[0].startswith("level")
    assert len(lines) == 1 + 5 * (g.n_nodes // 2)
    meta = json.loads(js.read_text())
    assert len(meta["per_level"]) == 5
