"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from latticekam import (
    ControlPolicy,
    Parity,
    action_functional,
    aubry_set,
    build_grid,
    builtin_model,
    cell_problem_1d,
    compute_bounds,
    effective_surface,
    enumerate_paths_value,
    estimate_effective_hamiltonian,
    find_periodic_solution,
    holonomic_check,
    long_time_convergence,
    mather_measure,
    minimizing_control_field,
    occupation_measure,
    propagate_distribution,
    random_field,
    rotation_vector,
    scaling_study,
    semiconcavity_monitor,
    solve_ivp,
    step_backward_scheme,
    validate_step_sizes,
    variance_diagnostic,
)
from latticekam.cli import EXIT_OK, main
from latticekam.oracle import brute_force_level
from latticekam.weakkam import fit_slope

from helpers import random_level_field, small_grid


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return emit


def _model(d):
    return builtin_model("mechanical-1d" if d == 1 else "mechanical-2d")


def _box_clip(table, grid):
    cap = 1.0 / (grid.d * grid.lam)
    return np.clip(table, -cap, cap)


def test_c01_duality_oracle(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for d in (1, 2):
        g, model = small_grid(d), _model(d)
        for k in (0, 1):
            v = random_level_field(g, k, rng, scale=0.05)
            c = rng.uniform(-0.5, 0.5, size=d)
            diff = step_backward_scheme(v, k, c, model).sub - brute_force_level(v, k, c, model)
            worst = max(worst, float(np.max(np.abs(diff))))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-8 and elapsed < 60, f"max|scheme - oracle| = {worst:.2e}, {elapsed:.1f} s")


def test_c02_path_measure_exactness(report):
    rng = np.random.default_rng(2)
    model = _model(1)
    g = build_grid(1, 4, 16)
    worst = 0.0
    for i in range(100):
        l = i % 13
        pol = ControlPolicy.random(g, rng)
        v0 = random_level_field(g, 0, rng)
        c = rng.uniform(-1, 1, size=1)
        start = int(g.parity_index(g.level_parity(l + 1))[rng.integers(g.n_nodes // 2)])
        a = enumerate_paths_value(v0, pol, start, l, c, model)
        b = action_functional(v0, pol, start, l, c, model)
        worst = max(worst, abs(a - b))
    report(2, worst <= 1e-12, f"max|propagation - enumeration| = {worst:.2e} over 100 policies, l <= 12")


def test_c03_minimizing_control(report):
    rng = np.random.default_rng(3)
    gap, slack = 0.0, np.inf
    for d in (1, 2):
        model = _model(d)
        g = build_grid(d, 4, 16)
        v0 = random_level_field(g, 0, rng, 0.05)
        c = rng.uniform(-0.5, 0.5, d)
        l = 5
        sol = solve_ivp(v0, l + 1, c, model)
        best = ControlPolicy.from_fields(minimizing_control_field(sol, model), k_start=1)
        starts = g.parity_index(g.level_parity(l + 1))[:3]
        for start in starts:
            val = action_functional(v0, best, start, l, c, model)
            gap = max(gap, abs(val - sol.level(l + 1).flat[start]))
        for _ in range(50):
            table = _box_clip(best.table + rng.normal(scale=0.3, size=best.table.shape), g)
            pert = ControlPolicy(g, table, k_start=1)
            for start in starts:
                diff = action_functional(v0, pert, start, l, c, model) - sol.level(l + 1).flat[start]
                slack = min(slack, diff)
    ok = gap <= 1e-10 and slack >= -1e-12
    report(3, ok, f"|action(xi*) - scheme| = {gap:.2e}, min(perturbed - optimal) = {slack:.2e}")


def test_c04_mass_conservation(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for d in (1, 2):
        g = build_grid(d, 4, 8)
        for _ in range(5):
            pol = ControlPolicy.random(g, rng)
            start = int(g.parity_index(Parity.ODD)[0])
            for direction in ("backward", "forward"):
                for dist in propagate_distribution(start, pol, 16, direction):
                    worst = max(worst, abs(dist.total - 1.0))
            periods = int(rng.integers(1, 20))
            mu = occupation_measure(pol, start="all", horizon=periods * g.period_steps)
            worst = max(worst, abs(mu.total - 1.0), abs(mu.end.sum() - 1.0))
            per_level = mu.mass.sum(axis=1) * g.period_steps
            worst = max(worst, float(np.max(np.abs(per_level - 1.0))))
    report(4, worst <= 1e-10, f"max mass error = {worst:.2e}")


def test_c05_variance_sandwich(report):
    rng = np.random.default_rng(5)
    failures = 0
    for i in range(20):
        d = 1 + i % 2
        g = build_grid(d, 6, 12)
        failures += not variance_diagnostic(1, ControlPolicy.random(g, rng), 8).ok
    report(5, failures == 0, f"{failures} of 20 random policies violate the sandwich")


def test_c06_semiconcavity(report):
    model = _model(1)
    b = compute_bounds(model, r=1.0, P=0.0)
    g = build_grid(1, 4, 40)
    admissible = validate_step_sizes(b, g).passed
    bad = 0
    for seed in range(20):
        v0 = random_field(g, Parity.ODD, np.random.default_rng(seed), slope=b.r)
        rep = semiconcavity_monitor(solve_ivp(v0, g.period_steps, 0.0, model, b), b)
        bad += rep.violations.size > 0
    report(6, admissible and bad == 0, f"step sizes admissible={admissible}, {bad} of 20 seeds exceed M(t_k)")


def test_c07_free_model(report):
    model = builtin_model("free", d=1)
    g = build_grid(1, 8, 16)
    worst_h = worst_res = worst_def = worst_rot = worst_ptp = 0.0
    for c in np.linspace(-1.6, 1.6, 17):
        e = estimate_effective_hamiltonian(c, model, g)
        worst_h = max(worst_h, abs(e.Hbar - c * c / 2))
        sol = find_periodic_solution(c, model, g)
        worst_res = max(worst_res, sol.residual)
        ma = mather_measure(c, sol, model)
        worst_def = max(worst_def, abs(ma.defect))
        worst_ptp = max(worst_ptp, float(np.ptp(ma.measure.node_mass)))
        worst_rot = max(worst_rot, float(abs(rotation_vector(c, sol, model, periods=64).drift[0] - c)))
    eps = np.finfo(float).eps
    ok = worst_h <= 4 * eps and worst_res == 0 and worst_def <= 1e-10 and worst_ptp < 1e-5 and worst_rot <= 4 * eps
    report(
        7,
        ok,
        f"|Hbar - c^2/2| = {worst_h:.1e}, residual = {worst_res:.1e}, defect = {worst_def:.1e}, "
        f"mass spread = {worst_ptp:.1e}, |rotation - c| = {worst_rot:.1e}",
    )


def test_c08_hamiltonian_identity(report):
    cases = [("mechanical-1d", c) for c in (0.0, 0.5, 1.0, 1.8)]
    cases += [("mechanical-2d", (0.3, -0.2)), ("mechanical-2d", (0.0, 0.8))]
    cases += [("shifted-pendulum-nonautonomous", c) for c in (0.0, 0.4)]
    worst, converged = 0.0, 0
    for name, c in cases:
        model = builtin_model(name)
        g = build_grid(model.d, 8 if model.d == 1 else 4, 32 if model.d == 1 else 16)
        sol = find_periodic_solution(c, model, g, tol=1e-10)
        if sol.converged:
            converged += 1
            worst = max(worst, abs(sol.Hbar - sol.hamiltonian_average(model)))
    report(8, converged == len(cases) and worst <= 1e-8, f"{converged}/{len(cases)} converged, max gap {worst:.2e}")


def test_c09_scaling_rate(report):
    model = _model(1)
    t0 = time.perf_counter()
    grids = [build_grid(1, N, 8 * N) for N in (8, 16, 32, 64)]
    rep = scaling_study(model, 0.0, grids)
    elapsed = time.perf_counter() - t0
    ok = rep.kind == "oracle" and rep.monotone and rep.slope is not None and rep.slope >= 0.4 and elapsed < 300
    errs = ", ".join(f"{e:.3f}" for e in rep.errors)
    report(9, ok, f"errors [{errs}], slope {rep.slope:.3f}, {elapsed:.0f} s")


def test_c10_convexity(report):
    surf1 = effective_surface(_model(1), build_grid(1, 16, 64), [np.linspace(-2, 2, 17)])
    surf2 = effective_surface(_model(2), build_grid(2, 4, 16), [np.linspace(-1, 1, 5)] * 2)
    reps = [s.convexity(1e-8) for s in (surf1, surf2)]
    holes = surf1.holes + surf2.holes
    margin = min(r.min_margin for r in reps)
    report(10, all(r.ok for r in reps) and holes == 0, f"min convexity margin {margin:.2e}, {holes} holes")


def test_c11_rotation_vector(report):
    model = _model(1)
    g = build_grid(1, 128, 512)
    c0 = cell_problem_1d(model, 0.0).c0
    flat = 0.0
    for c in (0.0, 0.4 * c0, 0.79 * c0):
        sol = find_periodic_solution(c, model, g)
        flat = max(flat, float(abs(rotation_vector(c, sol, model, periods=2**14).drift[0])))
    worst, allowed = 0.0, np.inf
    dc = 0.125
    for c in (1.5, 1.75, 2.0):
        surf = effective_surface(model, g, [np.array([c - dc, c, c + dc])])
        sol = find_periodic_solution(c, model, g)
        rot = rotation_vector(c, sol, model, periods=2**14, surface=surf)
        worst = max(worst, rot.error)
        allowed = min(allowed, max(5e-2, float(np.max(surf.widths))))
    ok = flat <= 5e-2 and worst <= allowed
    report(11, ok, f"flat part max|rotation| = {flat:.1e}, graph part max error = {worst:.1e} (c0 = {c0:.4f})")


@pytest.fixture(scope="module")
def pendulum_cases():
    model = _model(1)
    g = build_grid(1, 16, 64)
    rng = np.random.default_rng(14)
    out = []
    for c in (0.0, 0.5, 1.75):
        sols = [find_periodic_solution(c, model, g, tol=1e-12)]
        for _ in range(2):
            v0 = random_field(g, Parity.ODD, rng, 1.0).sub
            sols.append(find_periodic_solution(c, model, g, tol=1e-12, v0=v0))
        out.append((c, sols, mather_measure(c, sols[0], model, tol=1e-6)))
    return model, g, out


def test_c12_mather_defect(report, pendulum_cases):
    _, _, cases = pendulum_cases
    over, final = 0, 0.0
    for _, _, ma in cases:
        over += sum(abs(h["defect"]) > h["bound"] + 1e-12 for h in ma.history)
        final = max(final, abs(ma.defect))
    report(12, over == 0 and final <= 1e-6, f"{over} horizons above the bound, final |defect| = {final:.1e}")


def test_c13_holonomic_decay(report, pendulum_cases):
    model, g, cases = pendulum_cases
    rng = np.random.default_rng(13)
    sol = cases[1][1][0]
    pol = ControlPolicy(g, sol.controls(model), periodic=True)
    horizons = [P * g.period_steps for P in (1, 2, 4, 8)]
    mus = [occupation_measure(pol, horizon=l) for l in horizons]
    t = [l * g.tau for l in horizons]
    slopes = []
    for _ in range(10):
        gf = rng.normal(size=g.n_nodes)
        slopes.append(fit_slope(t, [holonomic_check(mu, gf)[0] for mu in mus]))
    slopes = np.array(slopes, dtype=float)
    ok = np.all(np.abs(slopes + 1.0) <= 0.1)
    report(13, ok, f"fitted slopes in [{slopes.min():.3f}, {slopes.max():.3f}] (expected -1)")


def test_c14_aubry_containment(report, pendulum_cases):
    model, _, cases = pendulum_cases
    worst, failed = 0.0, 0
    for c, sols, ma in cases:
        ok, mismatch, _ = aubry_set(c, sols, model, tol=1e-6).contains(ma.measure)
        failed += not ok
        worst = max(worst, mismatch)
    report(14, failed == 0 and worst <= 1e-6, f"{failed} of {len(cases)} c fail, max control mismatch {worst:.1e}")


def test_c15_long_time_convergence(report):
    model = _model(1)
    g = build_grid(1, 8, 32)
    rng = np.random.default_rng(15)
    bad, dist = 0, 0.0
    for _ in range(10):
        v0 = random_field(g, Parity.ODD, rng, 1.0)
        rep = long_time_convergence(v0, 0.3, model, g, extra_periods=5)
        bad += not (rep.monotone and rep.converged)
        dist = max(dist, float(rep.dist_even[-1]))
    report(15, bad == 0 and dist <= 1e-8, f"{bad} of 10 runs non-monotone or unconverged, final distance {dist:.1e}")


def test_c16_hbar_uniqueness(report):
    rng = np.random.default_rng(16)
    worst_ratio = 0.0
    for model, g, c in ((_model(1), build_grid(1, 8, 32), 0.3), (_model(2), build_grid(2, 4, 16), (0.4, 0.1))):
        ref = estimate_effective_hamiltonian(c, model, g, tol=1e-10)
        for _ in range(5):
            v0 = random_field(g, Parity.ODD, rng, 1.0).sub
            e = estimate_effective_hamiltonian(c, model, g, v0=v0, tol=1e-10)
            width = max(e.width, ref.width, np.finfo(float).eps)
            worst_ratio = max(worst_ratio, abs(e.Hbar - ref.Hbar) / width)
    report(16, worst_ratio <= 2.0, f"max |Hbar - Hbar_ref| / bracket width = {worst_ratio:.2f}")


CLI_CONFIG = """
c = 0.3
steps = 16
[model]
name = "mechanical-1d"
[grid]
d = 1
N = 4
K = 16
[bounds]
r = 1.0
P = 1.0
[v0]
kind = "random"
seed = 11
[mather]
c = [0.3, 1.5]
extra_solutions = 2
seed = 12
fd_step = 0.125
max_doublings = 16
[effective]
n = 9
[convergence]
c = 0.0
grids = [[4, 32], [8, 64]]
"""


def test_c17_determinism(report, tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(CLI_CONFIG)
    commands = (["solve"], ["effective", "run"], ["effective", "verify"], ["mather"], ["convergence"])
    codes = []
    for out in ("a", "b"):
        for cmd in commands:
            codes.append(main([*cmd, "--config", str(cfg), "--out", str(tmp_path / out)]))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = names == sorted(p.name for p in (tmp_path / "b").iterdir())
    differ = [n for n in names if (tmp_path / "a" / n).read_bytes() != (tmp_path / "b" / n).read_bytes()]
    ok = all(code == EXIT_OK for code in codes) and same and not differ
    report(17, ok, f"{len(names)} files compared, {len(differ)} differ, exit codes {sorted(set(codes))}")
