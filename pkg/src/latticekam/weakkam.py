"""Effective Hamiltonians and time-periodic solutions of the lattice scheme.

The time-one map phi commutes with constants and preserves order, so for
any field v the per-period shift s = phi(v) - v brackets the effective
Hamiltonian: -max(s) <= Hbar <= -min(s).  Iterating phi shrinks the bracket
as v approaches a periodic solution.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CflViolation,
    FixedPointNotReached,
    InadmissibleStepSize,
    InvalidArgument,
    NoConvergence,
    PropertyFailure,
)
from .grid import GridSpec, Parity, ScalarField, discrete_dx, lipschitz_interpolate
from .hj import BACKWARD, FORWARD, advance
from .io import field_columns, field_rows, write_csv, write_json
from .models import HamiltonianModel, MechanicalModel, SchemeBounds, validate_step_sizes
from .oracle import cell_problem_1d

LEVEL0 = Parity.ODD


def _check_admissible(bounds: SchemeBounds | None, grid: GridSpec, force: bool):
    if bounds is not None and not force and not validate_step_sizes(bounds, grid).cfl_ok:
        raise InadmissibleStepSize(f"lam = {grid.lam} is not below lambda1 = {bounds.lambda1}")


def _initial(grid: GridSpec, v0) -> np.ndarray:
    if v0 is None:
        return np.zeros(grid.n_nodes)
    if isinstance(v0, ScalarField):
        if v0.parity != LEVEL0:
            raise InvalidArgument("initial field must live on the level-0 (odd) sublattice")
        return v0.flat.copy()
    f = np.zeros(grid.n_nodes)
    f[grid.parity_index(LEVEL0)] = np.asarray(v0, dtype=float)
    return f


def anchor_index(grid: GridSpec) -> int:
    """Flat index of the first level-0 node; periodic fields vanish there."""
    return int(grid.parity_index(LEVEL0)[0])


class _PeriodMap:
    """phi (backward, level 0 -> 2K) or its forward mirror (2K -> 0) on flat arrays."""

    def __init__(self, c, model, grid, direction=BACKWARD):
        self.c = np.asarray(c, dtype=float).reshape(grid.d)
        self.model = model
        self.grid = grid
        self.sign = direction
        self.k0 = 0 if direction == BACKWARD else grid.period_steps
        self.idx = grid.parity_index(LEVEL0)
        self.cap = 1.0 / (grid.d * grid.lam)

    def __call__(self, f, store=False, check_cfl=True):
        out = advance(f, self.k0, self.grid.period_steps, self.c, self.model, self.grid, sign=self.sign, store=store)
        if check_cfl:
            hp = out[3]
            if hp.size and hp.max() > self.cap * (1 + 1e-12):
                j = int(np.argmax(hp > self.cap * (1 + 1e-12)))
                lvl = self.k0 + j if self.sign == BACKWARD else self.k0 - j
                raise CflViolation(f"|H_p| = {hp[j]} exceeds (d lam)^-1 = {self.cap}", lvl, self.cap - hp[j])
        return out

    def shift(self, f, w):
        """(min, max) of w - f on the level-0 nodes, signed so Hbar is in [lo, hi]."""
        s = (w - f)[self.idx]
        if self.sign == BACKWARD:
            return -s.max(), -s.min()
        return s.min(), s.max()


@dataclass
class HbarEstimate:
    c: np.ndarray
    Hbar: float
    lower: float
    upper: float
    periods: int
    converged: bool
    widths: list[float] = field(default_factory=list)
    direction: str = "backward"
    v: np.ndarray | None = field(default=None, repr=False)

    @property
    def width(self) -> float:
        return self.upper - self.lower


def estimate_effective_hamiltonian(
    c,
    model: HamiltonianModel,
    grid: GridSpec,
    bounds: SchemeBounds | None = None,
    v0=None,
    max_periods: int = 10000,
    tol: float = 1e-10,
    *,
    direction: str = BACKWARD,
    force: bool = False,
    raise_on_failure: bool = True,
) -> HbarEstimate:
    """Bracket Hbar_delta(c) by iterating the time-one map until the bracket is below tol.

    ``direction=FORWARD`` estimates the forward-scheme constant instead.
    """
    _check_admissible(bounds, grid, force)
    pm = _PeriodMap(c, model, grid, direction)
    f = _initial(grid, v0)
    a = anchor_index(grid)
    lo, hi = -math.inf, math.inf
    widths = []
    for p in range(1, max_periods + 1):
        w = pm(f)[0]
        lo_p, hi_p = pm.shift(f, w)
        lo, hi = max(lo, lo_p), min(hi, hi_p)
        widths.append(hi_p - lo_p)
        f = w - w[a]
        if hi_p - lo_p <= tol:
            break
    est = HbarEstimate(pm.c, 0.5 * (lo + hi), lo, hi, p, widths[-1] <= tol, widths, direction, f)
    if not est.converged and raise_on_failure:
        raise NoConvergence(f"bracket width {widths[-1]:.3e} after {p} periods exceeds {tol:.1e}", est)
    return est


@dataclass
class PeriodicSolution:
    """Time-periodic solution of the cell scheme.

    ``levels[k]`` (k = 0 .. 2K-1) is vbar^k = phi^k(vbar^0) + t_k Hbar on
    full-cube storage; vbar^{2K} = vbar^0.
    """

    grid: GridSpec
    c: np.ndarray
    Hbar: float
    levels: np.ndarray  # (2K, n_nodes)
    residual: float
    iterations: int
    converged: bool
    anchor: int
    bracket: tuple[float, float]
    model_name: str = ""
    stationarity_residual: float | None = None
    hp_max: float = 0.0
    slope_max: float = 0.0

    def level(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.grid.level_parity(k), self.levels[k % self.grid.period_steps])

    @property
    def v0(self) -> ScalarField:
        return self.level(0)

    def slopes(self) -> np.ndarray:
        """max |D_x vbar^k|_inf per level."""
        return np.array([discrete_dx(self.level(k)).sup_norm() for k in range(self.grid.period_steps)])

    def controls(self, model: HamiltonianModel) -> np.ndarray:
        """xi^k = H_p(x, t_{k-1}, c + D_x vbar^{k-1}) at level k, shape (2K, n, d)."""
        g = self.grid
        L = g.period_steps
        out = np.zeros((L, g.n_nodes, g.d))
        for k in range(L):
            D = discrete_dx(self.level(k - 1))
            idx = g.parity_index(D.parity)
            out[k, idx] = model.H_p(g.coords(idx), g.t(k - 1), self.c + D.sub)
        return out

    def hamiltonian_average(self, model: HamiltonianModel) -> float:
        """Mean of H(x_m, t_k, c + D_x vbar^k) over one period of the lattice.

        Equals Hbar for an exact periodic solution.  In one dimension the
        per-node weight is (2h) tau; in general it is 2 h^d tau.
        """
        g = self.grid
        total = 0.0
        for k in range(g.period_steps):
            D = discrete_dx(self.level(k))
            idx = g.parity_index(D.parity)
            total += float(np.sum(model.H(g.coords(idx), g.t(k), self.c + D.sub)))
        return total * 2.0 * g.h**g.d * g.tau

    def scheme_residual(self, model: HamiltonianModel) -> float:
        """max |(D_t vbar)^{k+1} + H(x, t_k, c + D_x vbar^k) - Hbar| over one period."""
        g = self.grid
        worst = 0.0
        for k in range(g.period_steps):
            v, nxt = self.level(k), self.level(k + 1)
            nxt_vals = nxt.flat if k + 1 < g.period_steps else self.levels[0]
            D = discrete_dx(v)
            idx = g.parity_index(D.parity)
            mean = v.flat[g.neighbors[idx]].mean(axis=1)
            Dt = (nxt_vals[idx] - mean) / g.tau
            H = model.H(g.coords(idx), g.t(k), self.c + D.sub)
            worst = max(worst, float(np.max(np.abs(Dt + H - self.Hbar))))
        return worst

    def metadata(self) -> dict:
        return {
            "c": self.c.tolist(),
            "Hbar": self.Hbar,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "bracket": list(self.bracket),
            "anchor": int(self.anchor),
            "grid": {"d": self.grid.d, "N": self.grid.N, "K": self.grid.K},
            "model": self.model_name,
            "stationarity_residual": self.stationarity_residual,
        }

    def export(self, out_dir, stem: str = "periodic") -> list[Path]:
        out_dir = Path(out_dir)
        rows = (row for k in range(self.grid.period_steps) for row in field_rows(self.level(k), level=k))
        p1 = write_csv(out_dir / f"{stem}_levels.csv", field_columns(self.v0, with_level=True), rows)
        p2 = write_json(out_dir / f"{stem}.json", self.metadata())
        return [p1, p2]


def find_periodic_solution(
    c,
    model: HamiltonianModel,
    grid: GridSpec,
    bounds: SchemeBounds | None = None,
    tol: float = 1e-10,
    max_iters: int = 20000,
    *,
    v0=None,
    relax: float = 1.0,
    stationarity_tol: float = 1e-6,
    force: bool = False,
    raise_on_failure: bool = True,
) -> PeriodicSolution:
    """Picard iteration v <- phi(v) + Hbar, anchored at the first level-0 node.

    ``relax`` < 1 blends each update with the previous iterate
    (Krasnoselskii-Mann).  The loop stops once max|phi(v) + Hbar - v| <= tol
    with Hbar the midpoint of the current bracket.
    """
    if not 0.0 < relax <= 1.0:
        raise InvalidArgument("relax must lie in (0, 1]")
    _check_admissible(bounds, grid, force)
    pm = _PeriodMap(c, model, grid, BACKWARD)
    f = _initial(grid, v0)
    a = anchor_index(grid)
    f = f - f[a]
    f[grid.parity_index(LEVEL0.other)] = 0.0
    best = (math.inf, f, 0.0, (-math.inf, math.inf), 0)
    for it in range(1, max_iters + 1):
        w = pm(f)[0]
        lo, hi = pm.shift(f, w)
        H = 0.5 * (lo + hi)
        res = 0.5 * (hi - lo)
        if res < best[0]:
            best = (res, f, H, (lo, hi), it)
        if res <= tol:
            break
        f = (1.0 - relax) * f + relax * (w + H)
        f = f - f[a]
    res, f, H, br, it_best = best
    converged = res <= tol
    final, levels, slope, hp = pm(f, store=True)
    L = grid.period_steps
    lv = levels[:L] + (np.arange(L) * grid.tau * H)[:, None]
    for k in range(L):
        lv[k, grid.parity_index(grid.level_parity(k).other)] = 0.0
    sol = PeriodicSolution(
        grid=grid,
        c=pm.c,
        Hbar=float(H),
        levels=lv,
        residual=float(res),
        iterations=it_best,
        converged=converged,
        anchor=a,
        bracket=(float(br[0]), float(br[1])),
        model_name=model.name,
        hp_max=float(hp.max()),
        slope_max=float(slope.max()),
    )
    if model.autonomous:
        two = advance(f, 0, 2, pm.c, model, grid)[0]
        sol.stationarity_residual = float(np.max(np.abs((two + 2 * grid.tau * H - f)[pm.idx])))
        if converged and sol.stationarity_residual > stationarity_tol:
            raise PropertyFailure(
                f"converged solution is not 2-step stationary (residual {sol.stationarity_residual:.3e})"
            )
    if not converged and raise_on_failure:
        raise FixedPointNotReached(f"residual {res:.3e} after {max_iters} iterations exceeds {tol:.1e}", sol)
    return sol


# --------------------------------------------------------------------------
# surfaces
# --------------------------------------------------------------------------


@dataclass
class ConvexityReport:
    min_margin: float  # min over triples of H(a) + H(b) - 2 H((a+b)/2) + allowance
    n_triples: int
    violations: list[tuple]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class EffectiveSurface:
    c_axes: list[np.ndarray]
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ok: np.ndarray  # False marks a hole
    forward: np.ndarray | None = None
    periods: np.ndarray | None = None

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def holes(self) -> int:
        return int((~self.ok).sum())

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.c_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def convexity(self, tol: float = 1e-8) -> ConvexityReport:
        """Midpoint convexity on all axis-aligned triples of consecutive grid values.

        Each triple is allowed tol plus twice the largest bracket width involved.
        """
        vals, w = self.values, self.widths
        worst = math.inf
        bad = []
        count = 0
        for j, ax in enumerate(self.c_axes):
            if ax.size < 3:
                continue
            steps = np.diff(ax)
            if not np.allclose(steps, steps[0]):
                raise InvalidArgument("convexity check needs uniform c axes")
            for idx in np.ndindex(*vals.shape):
                i = idx[j]
                if not 0 < i < ax.size - 1:
                    continue
                lo = idx[:j] + (i - 1,) + idx[j + 1 :]
                hi = idx[:j] + (i + 1,) + idx[j + 1 :]
                if not (self.ok[lo] and self.ok[idx] and self.ok[hi]):
                    continue
                count += 1
                allowance = tol + 2 * max(w[lo], w[idx], w[hi])
                margin = vals[lo] + vals[hi] - 2 * vals[idx] + allowance
                worst = min(worst, margin)
                if margin < 0:
                    bad.append((j, idx, margin))
        return ConvexityReport(worst, count, bad)

    def rows(self):
        pts = self.points()
        flat = [self.values.ravel(), self.lower.ravel(), self.upper.ravel(), self.ok.ravel()]
        fw = self.forward.ravel() if self.forward is not None else None
        for i, c in enumerate(pts):
            row = list(c) + [flat[0][i], flat[2][i] - flat[1][i], int(flat[3][i])]
            if fw is not None:
                row.append(fw[i])
            yield row

    def columns(self) -> list[str]:
        cols = [f"c{j + 1}" for j in range(len(self.c_axes))] + ["Hbar", "bracket_width", "ok"]
        return cols + (["Hbar_forward"] if self.forward is not None else [])


def default_c_axes(d: int, P=2.0, n: int = 17) -> list[np.ndarray]:
    from .models import as_box

    lo, hi = as_box(P, d)
    return [np.linspace(lo[j], hi[j], n) for j in range(d)]


def effective_surface(
    model: HamiltonianModel,
    grid: GridSpec,
    c_axes=None,
    bounds: SchemeBounds | None = None,
    tol: float = 1e-10,
    *,
    forward: bool = False,
    max_periods: int = 10000,
    threads: int = 1,
    force: bool = False,
) -> EffectiveSurface:
    """Hbar_delta on the product grid of ``c_axes``; failed points become holes."""
    if c_axes is None:
        c_axes = default_c_axes(grid.d, bounds.P if bounds is not None else 2.0)
    c_axes = [np.asarray(ax, dtype=float) for ax in c_axes]
    if len(c_axes) != grid.d:
        raise InvalidArgument("need one c axis per dimension")
    if bounds is not None:
        for j, ax in enumerate(c_axes):
            if ax.min() < bounds.P[0][j] - 1e-12 or ax.max() > bounds.P[1][j] + 1e-12:
                raise InvalidArgument(f"c axis {j} leaves the box P")
    _check_admissible(bounds, grid, force)
    shape = tuple(ax.size for ax in c_axes)
    pts = np.stack([m.ravel() for m in np.meshgrid(*c_axes, indexing="ij")], axis=1)

    def one(c, direction):
        try:
            e = estimate_effective_hamiltonian(c, model, grid, None, None, max_periods, tol, direction=direction)
            return e.Hbar, e.lower, e.upper, True, e.periods
        except (NoConvergence, CflViolation) as exc:
            res = getattr(exc, "result", None)
            if res is not None:
                return res.Hbar, res.lower, res.upper, False, res.periods
            return math.nan, math.nan, math.nan, False, 0

    def run(direction):
        if threads > 1:
            with ThreadPoolExecutor(threads) as ex:
                return list(ex.map(lambda c: one(c, direction), pts))
        return [one(c, direction) for c in pts]

    res = run(BACKWARD)
    vals = np.array([r[0] for r in res]).reshape(shape)
    surf = EffectiveSurface(
        c_axes=c_axes,
        values=vals,
        lower=np.array([r[1] for r in res]).reshape(shape),
        upper=np.array([r[2] for r in res]).reshape(shape),
        ok=np.array([r[3] for r in res]).reshape(shape),
        periods=np.array([r[4] for r in res]).reshape(shape),
    )
    if forward:
        surf.forward = np.array([r[0] for r in run(FORWARD)]).reshape(shape)
    return surf


# --------------------------------------------------------------------------
# autonomous long-time behaviour
# --------------------------------------------------------------------------


@dataclass
class LongTimeReport:
    S: np.ndarray  # S^k = max_m (v^{k+2} - v^k)
    monotone: bool
    worst_increase: float
    periods: int
    Hbar: float
    dist_even: np.ndarray  # per period end: max|v^{2k} - vbar^0|
    dist_odd: np.ndarray  # per period end: max|v^{2k+1} - vbar^1|
    limit_even: np.ndarray = field(repr=False)
    limit_odd: np.ndarray = field(repr=False)
    converged: bool = False


def long_time_convergence(
    v0,
    c,
    model: HamiltonianModel,
    grid: GridSpec,
    max_periods: int = 2000,
    tol: float = 1e-8,
    *,
    extra_periods: int = 50,
    slack: float = 1e-12,
    check: bool = True,
) -> LongTimeReport:
    """Run v^k = phi^k(v0) + t_k Hbar and watch the two-step increments.

    S^k is nonincreasing under the CFL condition; a violation beyond
    ``slack`` (relative to the size of the increments) raises
    PropertyFailure.  The run stops once consecutive period-end iterates
    differ by less than tol/100, then continues ``extra_periods`` more to
    fix the reference limit.
    """
    if not model.autonomous:
        raise InvalidArgument("long-time convergence needs an autonomous model")
    c = np.asarray(c, dtype=float).reshape(grid.d)
    f = _initial(grid, v0)
    L = grid.period_steps
    S = []
    ends_even, ends_odd = [], []
    prev2 = None  # last two levels of the previous chunk
    stop_at = None
    p = 0
    while p < max_periods + extra_periods:
        k0 = p * L
        final, levels, _, hp = advance(f, k0, L, c, model, grid, store=True)
        if hp.max() > 1.0 / (grid.d * grid.lam) * (1 + 1e-12):
            raise CflViolation("CFL condition violated during long-time run", k0 + int(np.argmax(hp)), 0.0)
        seq = levels if prev2 is None else np.concatenate([prev2, levels[1:]])
        par_idx = [grid.parity_index(0), grid.parity_index(1)]
        base = 0 if prev2 is None else k0 - 1
        for j in range(seq.shape[0] - 2):
            k = base + j
            idx = par_idx[int(grid.level_parity(k))]
            S.append(float(np.max(seq[j + 2, idx] - seq[j, idx])))
        prev2 = levels[-2:]
        ends_even.append(levels[-1].copy())
        ends_odd.append(levels[1].copy())
        f = final
        p += 1
        if stop_at is None and len(ends_even) >= 2:
            # periodic shift removes the drift Hbar
            d_end = ends_even[-1] - ends_even[-2]
            idx = grid.parity_index(LEVEL0)
            if np.ptp(d_end[idx]) < tol * 1e-2:
                stop_at = p
        if stop_at is not None and p >= stop_at + extra_periods:
            break
    S = np.array(S)
    idx0 = grid.parity_index(LEVEL0)
    idx1 = grid.parity_index(LEVEL0.other)
    last_shift = ends_even[-1] - ends_even[-2]
    Hbar = -float(np.mean(last_shift[idx0]))
    # remove the drift: v^{k} + t_k Hbar
    ev = np.array([e + (i + 1) * Hbar for i, e in enumerate(ends_even)])
    od = np.array([o + (i * L + 1) * grid.tau * Hbar for i, o in enumerate(ends_odd)])
    lim_e, lim_o = ev[-1], od[-1]
    dist_even = np.max(np.abs(ev[:, idx0] - lim_e[idx0]), axis=1)
    dist_odd = np.max(np.abs(od[:, idx1] - lim_o[idx1]), axis=1)
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    incr = np.diff(S)
    worst = float(incr.max()) if incr.size else -math.inf
    monotone = worst <= slack * scale
    term = stop_at if stop_at is not None else len(ends_even)
    rep = LongTimeReport(
        S=S,
        monotone=monotone,
        worst_increase=worst,
        periods=p,
        Hbar=Hbar,
        dist_even=dist_even[:term],
        dist_odd=dist_odd[:term],
        limit_even=lim_e,
        limit_odd=lim_o,
        converged=stop_at is not None,
    )
    if check and not monotone:
        raise PropertyFailure(f"S^k increased by {worst:.3e}; CFL or scheme defect")
    return rep


# --------------------------------------------------------------------------
# convergence studies
# --------------------------------------------------------------------------


def _oracle_available(model) -> bool:
    return isinstance(model, MechanicalModel) and model.d == 1 and model.autonomous


@dataclass
class ConvergenceReport:
    h: np.ndarray
    Hbar: np.ndarray
    reference: np.ndarray | None
    errors: np.ndarray
    slope: float | None
    monotone: bool
    kind: str  # "oracle" or "self"
    interpolation_gaps: np.ndarray | None = None

    def rows(self):
        for i in range(self.h.size):
            err = self.errors[i] if i < self.errors.size else math.nan
            gap = self.interpolation_gaps[i] if self.interpolation_gaps is not None else math.nan
            yield [self.h[i], self.Hbar[i], err, gap]

    def columns(self) -> list[str]:
        return ["h", "Hbar", "error", "interpolation_gap"]


def fit_slope(h, err) -> float | None:
    h, err = np.asarray(h, float), np.asarray(err, float)
    ok = err > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(h[ok]), np.log(err[ok]), 1)[0])


def scaling_study(
    model: HamiltonianModel,
    c,
    grids: list[GridSpec],
    tol: float = 1e-10,
    *,
    max_periods: int = 20000,
    n_probe: int = 997,
) -> ConvergenceReport:
    """Hbar_delta(c) along a grid sequence, compared with the 1-D oracle if available.

    Without an oracle the errors are successive differences.  Solutions are
    also cross-compared through their Lipschitz interpolants against the
    finest grid (sup distance after removing the best constant).
    """
    if not grids:
        raise InvalidArgument("empty grid sequence")
    c = np.asarray(c, dtype=float).reshape(grids[0].d)
    sols = [find_periodic_solution(c, model, g, tol=tol, max_iters=max_periods) for g in grids]
    h = np.array([g.h for g in grids])
    H = np.array([s.Hbar for s in sols])
    if _oracle_available(model):
        ref = cell_problem_1d(model, float(c[0])).Hbar
        errors = np.abs(H - ref)
        kind = "oracle"
        reference = np.full(H.shape, ref)
    else:
        errors = np.abs(np.diff(H))
        kind = "self"
        reference = None
    x = (np.arange(n_probe) + 0.5) / n_probe
    probe = np.stack([x] + [np.full(n_probe, 0.3)] * (grids[0].d - 1), axis=1)
    w_ref = lipschitz_interpolate(sols[-1].v0)(probe)
    gaps = np.array([0.5 * np.ptp(lipschitz_interpolate(s.v0)(probe) - w_ref) for s in sols])
    eh = h if kind == "oracle" else h[:-1]
    slope = fit_slope(eh, errors) if errors.size >= 2 else None
    monotone = bool(np.all(np.diff(errors) <= 1e-14)) if errors.size >= 2 else True
    return ConvergenceReport(h, H, reference, errors, slope, monotone, kind, gaps)


@dataclass
class DerivativeProbe:
    h: np.ndarray
    errors: np.ndarray  # max |D_x vbar - oracle slope| at probe nodes
    sign_changes: list[np.ndarray]
    shock: float | None


def derivative_convergence_probe(
    solutions: list[PeriodicSolution], model: HamiltonianModel, margin: float = 0.1
) -> DerivativeProbe:
    """Compare D_x vbar^0 with the 1-D oracle slope away from its switch point.

    Nodes within ``margin`` of the switch point and of the maximiser of V are
    skipped, since the oracle slope is only Lipschitz there.
    """
    if not _oracle_available(model):
        raise InvalidArgument("derivative probe needs an autonomous 1-D mechanical model")
    errs, signs = [], []
    shock = None
    for s in solutions:
        cp = cell_problem_1d(model, float(s.c[0]))
        shock = cp.shock
        D = discrete_dx(s.v0)
        idx = s.grid.parity_index(D.parity)
        x = s.grid.coords(idx)[:, 0]

        def far(p):
            return np.minimum(np.mod(x - p, 1.0), np.mod(p - x, 1.0)) > margin

        keep = far(cp.x_max) if cp.shock is None else far(cp.x_max) & far(cp.shock)
        err = np.abs(D.sub[:, 0] - cp.slope(x))
        errs.append(float(err[keep].max()) if keep.any() else math.nan)
        sgn = np.sign(D.sub[:, 0] + s.c[0])
        flips = np.flatnonzero(np.diff(np.append(sgn, sgn[0])) != 0)
        signs.append(x[flips])
    return DerivativeProbe(np.array([s.grid.h for s in solutions]), np.array(errs), signs, shock)
