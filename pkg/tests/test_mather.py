import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticekam import (
    ControlPolicy,
    InvalidControl,
    Parity,
    averaged_path,
    aubry_set,
    build_grid,
    builtin_model,
    cell_problem_1d,
    effective_surface,
    find_periodic_solution,
    holonomic_check,
    mather_measure,
    occupation_measure,
    random_field,
    rotation_vector,
    uniqueness_on_mather_set,
)
from latticekam.mather import SUPPORT_THRESHOLD, holonomic_boundary, holonomic_integrand
from latticekam.walk import BACKWARD


@pytest.fixture(scope="module")
def pendulum():
    m = builtin_model("mechanical-1d")
    g = build_grid(1, 16, 64)
    return m, g, find_periodic_solution(0.5, m, g, tol=1e-12)


def test_zero_control_tends_to_uniform():
    g = build_grid(1, 8, 8)
    mu = occupation_measure(ControlPolicy.constant(g, [0.0]), start=1, horizon=2**14, mode="autonomous")
    assert np.allclose(mu.node_mass, 1.0 / g.n_nodes, atol=2e-3)
    assert np.all(mu.node_xi == 0)
    assert mu.total == pytest.approx(1.0, abs=1e-12)


def test_edge_control_single_orbit():
    g = build_grid(1, 4, 4)  # lam = 1/2: one period = 8 levels, one sweep of the circle
    mu = occupation_measure(ControlPolicy.constant(g, [1.0 / g.lam]), start=1, horizon=g.period_steps)
    nz = mu.mass[mu.mass > 0]
    assert nz.size == g.period_steps
    assert np.allclose(nz, g.tau / (g.period_steps * g.tau))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.sampled_from([1, 2]), periods=st.integers(1, 40), extra=st.integers(0, 7))
def test_mass_and_box(seed, d, periods, extra):
    g = build_grid(d, 4, 4)
    pol = ControlPolicy.random(g, np.random.default_rng(seed))
    mu = occupation_measure(pol, start="all", horizon=periods * g.period_steps + extra)
    assert abs(mu.total - 1.0) <= 1e-10
    assert np.all(mu.mass >= 0)
    assert np.max(np.abs(mu.xi)) <= 1.0 / (d * g.lam) * (1 + 1e-12)
    assert abs(mu.end.sum() - 1.0) <= 1e-10


def test_start_must_be_level_zero():
    g = build_grid(1, 4, 4)
    with pytest.raises(Exception):
        occupation_measure(ControlPolicy.constant(g, [0.0]), start=0)


def test_invalid_control_table():
    g = build_grid(1, 4, 4)
    with pytest.raises(InvalidControl):
        occupation_measure(np.full((g.period_steps, g.n_nodes, 1), 10.0), start=1, grid=g)


def test_holonomic_constant_and_identity(rng):
    g = build_grid(1, 8, 8)
    pol = ControlPolicy.random(g, rng)
    mu = occupation_measure(pol, start=1, horizon=5 * g.period_steps)
    assert holonomic_check(mu, np.full(g.n_nodes, 3.0))[0] == pytest.approx(0.0, abs=1e-13)
    gf = rng.normal(size=g.n_nodes)
    got = holonomic_check(mu, gf)[0]
    bnd = holonomic_boundary(mu, gf)
    assert got == pytest.approx(abs(bnd), abs=1e-12)
    assert got <= 2 * np.abs(gf).max() / (mu.horizon * g.tau) + 1e-12
    # spacetime test fields work the same way
    G = rng.normal(size=(g.period_steps, g.n_nodes))
    assert holonomic_check(mu, G)[0] == pytest.approx(abs(holonomic_boundary(mu, G)), abs=1e-12)
    assert holonomic_integrand(mu, gf).shape == mu.mass.shape


def test_holonomic_halves_when_doubled(rng):
    g = build_grid(1, 8, 8)
    pol = ControlPolicy.random(g, rng)
    for _ in range(5):
        gf = rng.normal(size=g.n_nodes)
        vals = [holonomic_check(occupation_measure(pol, 1, P * g.period_steps), gf)[0] for P in (16, 32, 64)]
        for a, b in zip(vals, vals[1:]):
            assert 0.5 / 1.5 <= b / a <= 0.5 * 1.5


def test_free_mather_uniform():
    m = builtin_model("free", d=1)
    g = build_grid(1, 8, 16)
    for c in (0.0, 0.3, -0.8):
        sol = find_periodic_solution(c, m, g)
        ma = mather_measure(c, sol, m)
        assert abs(ma.defect) <= 1e-10 and ma.converged and not ma.partial
        assert ma.action == pytest.approx(-c * c / 2, abs=1e-14)
        assert np.allclose(ma.measure.xi[ma.measure.mass > 0], c)
        # uniform in space after projection
        assert np.ptp(ma.measure.node_mass) < 1e-5
        rot = rotation_vector(c, sol, m, periods=64)
        assert rot.drift[0] == pytest.approx(c, abs=1e-15)


def test_defect_bound_every_horizon(pendulum):
    m, g, sol = pendulum
    ma = mather_measure(0.5, sol, m, tol=1e-6)
    assert ma.converged and abs(ma.defect) <= 1e-6
    assert ma.defect >= -1e-6
    for h in ma.history:
        assert abs(h["defect"]) <= h["bound"] + 1e-12
        assert h["defect"] == pytest.approx(h["identity"], abs=1e-9)
    assert 0 < ma.support_fraction() <= 1


def test_partial_when_horizon_short(pendulum):
    m, g, sol = pendulum
    ma = mather_measure(0.5, sol, m, tol=1e-12, max_doublings=2)
    assert ma.partial and len(ma.history) == 3 and ma.summary()["partial"]


def test_minimality_against_random_policies(pendulum, rng):
    m, g, sol = pendulum
    ma = mather_measure(0.5, sol, m, tol=1e-7)
    osc = np.ptp(sol.levels[np.array([g.node_parity == int(g.level_parity(k)) for k in range(g.period_steps)])])
    l = 2**12 * g.period_steps
    for _ in range(20):
        pol = ControlPolicy.random(g, rng, scale=0.9)
        mu = occupation_measure(pol, start=g.parity_index(Parity.ODD)[0], horizon=l)
        assert mu.action(m, 0.5) >= ma.action - 1e-7 - osc / (l * g.tau)


def test_rotation_from_averaged_path(pendulum):
    m, g, sol = pendulum
    pol = ControlPolicy(g, sol.controls(m), periodic=True)
    start = int(g.parity_index(Parity.ODD)[0])
    l = 3 * g.period_steps
    path = averaged_path(start, pol, l, BACKWARD, k_start=0)
    rot = rotation_vector(0.5, sol, m, periods=3, start=start)
    t_l = l * g.tau
    assert (g.coords(start) - path[-1]) / t_l == pytest.approx(rot.drift, abs=1e-12)
    assert path[-1] / (-t_l) == pytest.approx(rot.ratio, abs=1e-12)


def test_rotation_flat_and_graph(mech1d):
    g = build_grid(1, 32, 128)
    c0 = cell_problem_1d(mech1d, 0.0).c0
    sol = find_periodic_solution(0.3, mech1d, g)
    assert abs(rotation_vector(0.3, sol, mech1d, periods=2**14).drift[0]) <= 5e-2
    c, dc = 1.75, 0.125
    assert c > c0
    surf = effective_surface(mech1d, g, [np.array([c - dc, c, c + dc])])
    sol = find_periodic_solution(c, mech1d, g)
    rot = rotation_vector(c, sol, mech1d, periods=2**14, surface=surf)
    assert rot.error <= 5e-2


def test_aubry_sets():
    m = builtin_model("free", d=1)
    g = build_grid(1, 4, 16)
    sol = find_periodic_solution(0.4, m, g)
    A = aubry_set(0.4, [sol], m)
    on = np.array([g.node_parity == int(g.level_parity(k)) for k in range(g.period_steps)])
    assert np.array_equal(A.mask, on)
    assert np.allclose(A.controls[on], 0.4)
    ma = mather_measure(0.4, sol, m)
    assert A.contains(ma.measure)[0]


def test_aubry_containment_pendulum(pendulum, rng):
    m, g, sol = pendulum
    others = [find_periodic_solution(0.5, m, g, tol=1e-12, v0=random_field(g, Parity.ODD, rng, 1.0).sub)
              for _ in range(2)]
    A = aubry_set(0.5, [sol] + others, m, tol=1e-6)
    ok, worst, outside = A.contains(mather_measure(0.5, sol, m).measure)
    assert ok and worst <= 1e-6 and outside == 0


def test_uniqueness_reports(pendulum, rng):
    m, g, sol = pendulum
    import dataclasses

    shifted = dataclasses.replace(sol, levels=sol.levels + 2.5)
    sup = mather_measure(0.5, sol, m).measure.support()
    rep = uniqueness_on_mather_set(sol, shifted, sup, tol=1e-8)
    assert rep.agree_on_support and rep.implied and rep.gap_everywhere < 1e-12
    other = find_periodic_solution(0.5, m, g, tol=1e-12, v0=random_field(g, Parity.ODD, rng, 1.0).sub)
    rep = uniqueness_on_mather_set(sol, other, sup, tol=1e-8)
    if rep.agree_on_support:
        assert rep.gap_everywhere <= 10 * 1e-8


def test_exports(pendulum, tmp_path):
    m, g, sol = pendulum
    ma = mather_measure(0.5, sol, m, max_doublings=3)
    p = ma.measure.export(tmp_path / "mu.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "level,m1,mass,xi1"
    assert len(lines) - 1 == int((ma.measure.mass > 0).sum())
    A = aubry_set(0.5, [sol], m)
    q = A.export(tmp_path / "aubry.csv")
    assert len(q.read_text().splitlines()) - 1 == int(A.mask.sum())
    assert SUPPORT_THRESHOLD == 1e-9
