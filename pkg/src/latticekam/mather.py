"""Occupation measures of controlled walks, Mather measures, Aubry sets.

A backward walk started at level 0 visits levels 0, -1, ..., -l+1 before
stopping at -l.  Its occupation measure gives weight 1/l to each visited
level, projected to one time period, and carries the control used to leave
each node.  Long horizons are reached exactly by doubling: with T the
one-period transition matrix, sum_{j<2P} T^j = S_P + T^P S_P.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import InvalidArgument
from .grid import GridSpec, Parity
from .io import write_csv
from .models import HamiltonianModel
from .walk import ControlPolicy, _rho, _start_index
from .weakkam import PeriodicSolution

SUPPORT_THRESHOLD = 1e-9
LEVEL0 = Parity.ODD


def _policy_table(policy, grid: GridSpec) -> np.ndarray:
    if isinstance(policy, ControlPolicy):
        return np.stack([policy.at(k) for k in range(grid.period_steps)])
    tab = np.asarray(policy, dtype=float)
    if tab.shape != (grid.period_steps, grid.n_nodes, grid.d):
        raise InvalidArgument("control table must have shape (2K, n_nodes, d)")
    ControlPolicy(grid, tab)  # box check
    return tab


class _PeriodWalk:
    """Backward walk from level 0 over one period, as sparse step matrices."""

    def __init__(self, grid: GridSpec, xi: np.ndarray):
        self.grid = grid
        self.xi = xi
        L = grid.period_steps
        n = grid.n_nodes
        self.steps = []
        # step s leaves level -s, whose control is xi[(-s) mod 2K]
        for s in range(L):
            k = (-s) % L
            src = grid.parity_index(grid.level_parity(-s))
            rho = _rho(xi[k, src], grid.lam, -1)
            tgt = grid.neighbors[src]
            cols = np.repeat(src, 2 * grid.d)
            self.steps.append(sparse.csr_matrix((rho.ravel(), (tgt.ravel(), cols)), shape=(n, n)))
        self.idx0 = grid.parity_index(LEVEL0)

    def period_matrix(self) -> np.ndarray:
        """T restricted to the level-0 sublattice (column-stochastic)."""
        g = self.grid
        M = np.zeros((g.n_nodes, self.idx0.size))
        M[self.idx0, np.arange(self.idx0.size)] = 1.0
        for S in self.steps:
            M = S @ M
        return M[self.idx0]

    def sweep(self, p: np.ndarray, n_steps: int | None = None):
        """Per-level masses over one period (or n_steps) and the final law."""
        L = self.grid.period_steps
        n_steps = L if n_steps is None else n_steps
        levels = np.zeros((L, self.grid.n_nodes))
        for s in range(n_steps):
            levels[(-s) % L] += p
            p = self.steps[s] @ p
        return levels, p


@dataclass
class OccupationMeasure:
    grid: GridSpec
    mode: str  # "spacetime" or "autonomous"
    mass: np.ndarray  # (2K, n): weight of (level k mod 2K, node)
    xi: np.ndarray  # (2K, n, d): control attached to each support point
    horizon: int  # number of levels l
    start: np.ndarray  # (n,) initial law at level 0
    end: np.ndarray  # (n,) law at level -l

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def node_mass(self) -> np.ndarray:
        """Projection to the spatial lattice."""
        return self.mass.sum(axis=0)

    @property
    def node_xi(self) -> np.ndarray:
        """Mass-weighted mean control per node (exact for stationary controls)."""
        m = self.node_mass
        num = np.einsum("kn,knd->nd", self.mass, self.xi)
        out = np.zeros_like(num)
        ok = m > 0
        out[ok] = num[ok] / m[ok, None]
        return out

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
        """Boolean mask over (level, node) or, in autonomous mode, nodes."""
        if self.mode == "autonomous":
            return self.node_mass > threshold
        return self.mass > threshold

    def integrate(self, f) -> float:
        """f(x, t, zeta) over the support points, t = t_k for level k."""
        g = self.grid
        total = 0.0
        x = g.coords()
        for k in range(g.period_steps):
            w = self.mass[k]
            nz = np.flatnonzero(w)
            if nz.size:
                total += float(w[nz] @ f(x[nz], g.t(k), self.xi[k, nz]))
        return total

    def action(self, model: HamiltonianModel, c) -> float:
        """int L^{(c)}(x, t - tau, zeta) d mu."""
        c = np.asarray(c, dtype=float)
        return self.integrate(lambda x, t, z: model.L_c(x, t - self.grid.tau, z, c))

    def mean_control(self) -> np.ndarray:
        return np.einsum("kn,knd->d", self.mass, self.xi) / self.total

    def rows(self):
        g = self.grid
        for k in range(g.period_steps):
            for m in np.flatnonzero(self.mass[k] > 0):
                yield [k] + list(g.multi_index[m]) + [self.mass[k, m]] + list(self.xi[k, m])

    def columns(self) -> list[str]:
        d = self.grid.d
        return ["level"] + [f"m{j + 1}" for j in range(d)] + ["mass"] + [f"xi{j + 1}" for j in range(d)]

    def export(self, path) -> Path:
        return write_csv(path, self.columns(), self.rows())


def _start_law(grid: GridSpec, starts) -> np.ndarray:
    idx0 = grid.parity_index(LEVEL0)
    if starts is None:
        starts = [int(idx0[0])]
    elif isinstance(starts, str) and starts == "all":
        starts = list(idx0)
    elif np.ndim(starts) == 0:
        starts = [starts]
    p = np.zeros(grid.n_nodes)
    for s in starts:
        n = _start_index(grid, s)
        if int(grid.node_parity[n]) != int(LEVEL0):
            raise InvalidArgument("start nodes must lie on the level-0 sublattice")
        p[n] += 1.0 / len(starts)
    return p


class _Doubling:
    """Cached (T^(2^i), sum_{j<2^i} T^j) pairs on the level-0 sublattice."""

    def __init__(self, walk: _PeriodWalk):
        self.walk = walk
        T = walk.period_matrix()
        self.pows = [T]
        self.sums = [np.eye(T.shape[0])]

    def level(self, i: int):
        while len(self.pows) <= i:
            A, S = self.pows[-1], self.sums[-1]
            # keep columns stochastic so round-off does not leak mass
            n = 2.0 ** len(self.pows)
            S2 = S + A @ S
            A2 = A @ A
            self.sums.append(S2 * (n / S2.sum(axis=0)))
            self.pows.append(A2 / A2.sum(axis=0))
        return self.pows[i], self.sums[i]

    def apply(self, P: int, q0: np.ndarray):
        """(sum_{j<P} T^j q0, T^P q0) for q0 on the level-0 sublattice."""
        acc = np.zeros_like(q0)
        cur = q0.copy()
        i = 0
        while P >> i:
            if (P >> i) & 1:
                A, S = self.level(i)
                acc += S @ cur
                cur = A @ cur
            i += 1
        return acc, cur


def _measure_from(walk: _PeriodWalk, dbl: _Doubling | None, p0: np.ndarray, l: int, mode: str) -> OccupationMeasure:
    g = walk.grid
    L = g.period_steps
    P, r = divmod(l, L)
    idx0 = walk.idx0
    mass = np.zeros((L, g.n_nodes))
    if P:
        dbl = dbl or _Doubling(walk)
        acc, cur = dbl.apply(P, p0[idx0])
        full = np.zeros(g.n_nodes)
        full[idx0] = acc
        lv, _ = walk.sweep(full)
        mass += lv
        end = np.zeros(g.n_nodes)
        end[idx0] = cur
    else:
        end = p0.copy()
    if r:
        lv, end = walk.sweep(end, r)
        mass += lv
    mass /= l
    return OccupationMeasure(g, mode, mass, walk.xi, l, p0, end)


def occupation_measure(
    policy, start=None, horizon: int | None = None, mode: str = "spacetime", grid: GridSpec | None = None
) -> OccupationMeasure:
    """Time-averaged projected law of the backward walk over ``horizon`` levels.

    ``policy`` is a 1-periodic ControlPolicy or a (2K, n, d) table on ``grid``;
    ``start`` is a flat node index, a list of flat indices or multi-indices
    (averaged), or "all".
    """
    if mode not in ("spacetime", "autonomous"):
        raise InvalidArgument(f"unknown mode {mode!r}")
    if isinstance(policy, ControlPolicy):
        grid = policy.grid
    elif grid is None:
        raise InvalidArgument("a raw control table needs its grid")
    xi = _policy_table(policy, grid)
    l = grid.period_steps if horizon is None else int(horizon)
    if l < 1:
        raise InvalidArgument("horizon must be positive")
    return _measure_from(_PeriodWalk(grid, xi), None, _start_law(grid, start), l, mode)


def _test_table(g, grid: GridSpec) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape == (grid.n_nodes,):
        return np.broadcast_to(g, (grid.period_steps, grid.n_nodes))
    if g.shape == (grid.period_steps, grid.n_nodes):
        return g
    raise InvalidArgument("test field must have shape (n_nodes,) or (2K, n_nodes)")


def holonomic_integrand(mu: OccupationMeasure, g) -> np.ndarray:
    """f = (D_t g)^k + (D_x g)^{k-1} . zeta at every (level, node), zero off-lattice."""
    grid = mu.grid
    G = _test_table(g, grid)
    L = grid.period_steps
    out = np.zeros((L, grid.n_nodes))
    for k in range(L):
        idx = grid.parity_index(grid.level_parity(k))
        prev = G[(k - 1) % L]
        nb = prev[grid.neighbors[idx]]
        Dt = (G[k, idx] - nb.mean(axis=1)) / grid.tau
        Dx = (nb[:, 0::2] - nb[:, 1::2]) / (2 * grid.h)
        out[k, idx] = Dt + np.sum(Dx * mu.xi[k, idx], axis=1)
    return out


def holonomic_check(mu: OccupationMeasure, gs) -> np.ndarray:
    """|int f d mu| for each test field (a single field or a list)."""
    single = np.ndim(gs) in (1, 2) and not isinstance(gs, list)
    fields = [gs] if single else list(gs)
    out = np.array([abs(float(np.sum(mu.mass * holonomic_integrand(mu, g)))) for g in fields])
    return out


def holonomic_boundary(mu: OccupationMeasure, g) -> float:
    """(g^0 at the start - E[g^{-l}]) / t_l, which equals int f d mu exactly."""
    grid = mu.grid
    G = _test_table(g, grid)
    return float(mu.start @ G[0] - mu.end @ G[(-mu.horizon) % grid.period_steps]) / (mu.horizon * grid.tau)


# --------------------------------------------------------------------------
# Mather measures
# --------------------------------------------------------------------------


@dataclass
class MatherApproximation:
    c: np.ndarray
    Hbar: float
    measure: OccupationMeasure
    action: float
    defect: float  # action + Hbar
    bound: float  # osc(vbar) / t_l
    identity: float  # (vbar^0(start) - E vbar^{-l}) / t_l
    history: list[dict] = field(default_factory=list)
    converged: bool = False

    @property
    def support(self) -> np.ndarray:
        return self.measure.support()

    @property
    def partial(self) -> bool:
        return not self.converged

    def support_fraction(self) -> float:
        g = self.measure.grid
        sup = self.measure.support()
        total = g.n_nodes if self.measure.mode == "autonomous" else g.period_steps * g.n_nodes // 2
        return float(sup.sum()) / total

    def summary(self) -> dict:
        return {
            "c": self.c.tolist(),
            "Hbar": self.Hbar,
            "action": self.action,
            "defect": self.defect,
            "bound": self.bound,
            "converged": self.converged,
            "partial": self.partial,
            "horizon_levels": self.measure.horizon,
            "support_fraction": self.support_fraction(),
            "history": self.history,
        }


def mather_measure(
    c,
    periodic: PeriodicSolution,
    model: HamiltonianModel,
    *,
    tol: float = 1e-6,
    max_doublings: int = 24,
    start=None,
    mode: str | None = None,
    tv_tol: float = 1e-6,
) -> MatherApproximation:
    """Occupation measure of the minimising walk for horizons 2K * 2^i.

    Stops at the first horizon whose action defect |int L^{(c)} + Hbar| is
    at most tol and whose masses moved by at most tv_tol in total variation
    since the previous horizon; otherwise returns the last horizon with
    converged=False.
    """
    grid = periodic.grid
    c = np.asarray(c, dtype=float).reshape(grid.d)
    if not np.allclose(c, periodic.c):
        raise InvalidArgument("c does not match the periodic solution")
    mode = mode or ("autonomous" if model.autonomous else "spacetime")
    xi = periodic.controls(model)
    walk = _PeriodWalk(grid, xi)
    dbl = _Doubling(walk)
    p0 = _start_law(grid, start)
    lv = periodic.levels
    masks = np.array([grid.node_parity == int(grid.level_parity(k)) for k in range(grid.period_steps)])
    osc = float(lv[masks].max() - lv[masks].min())
    hist = []
    prev = None
    for i in range(max_doublings + 1):
        l = grid.period_steps * 2**i
        mu = _measure_from(walk, dbl, p0, l, mode)
        act = mu.action(model, c)
        defect = act + periodic.Hbar
        t_l = l * grid.tau
        ident = float(p0 @ lv[0] - mu.end @ lv[(-l) % grid.period_steps]) / t_l
        tv = 0.5 * float(np.abs(mu.mass - prev.mass).sum()) if prev is not None else math.nan
        hist.append(
            {"levels": l, "periods": 2**i, "defect": defect, "bound": osc / t_l, "identity": ident, "tv_change": tv}
        )
        prev = mu
        done = abs(defect) <= tol and tv <= tv_tol
        if done:
            break
    return MatherApproximation(c, periodic.Hbar, mu, act, defect, osc / t_l, ident, hist, done)


@dataclass
class RotationReport:
    drift: np.ndarray  # int zeta d mu = (x_start - gamma_bar^{-l}) / t_l
    ratio: np.ndarray  # gamma_bar^{-l} / t_{-l}
    horizon: int
    gradient: np.ndarray | None = None
    one_sided: np.ndarray | None = None

    @property
    def error(self) -> float | None:
        if self.gradient is None:
            return None
        return float(np.max(np.abs(self.drift - self.gradient)))


def rotation_vector(
    c, periodic: PeriodicSolution, model: HamiltonianModel, periods: int = 2**16, start=None, surface=None
) -> RotationReport:
    """Average velocity of the minimising walk over ``periods`` time periods.

    The averaged path satisfies gamma_bar^{-l} = x_start - t_l int zeta d mu,
    so the drift is read off the occupation measure.  With ``surface`` the
    centred finite-difference gradient of Hbar_delta is attached.
    """
    grid = periodic.grid
    xi = periodic.controls(model)
    walk = _PeriodWalk(grid, xi)
    p0 = _start_law(grid, start)
    l = periods * grid.period_steps
    mu = _measure_from(walk, None, p0, l, "spacetime")
    drift = mu.mean_control()
    x0 = p0 @ grid.coords()
    t_l = l * grid.tau
    gamma_end = x0 - t_l * drift
    rep = RotationReport(drift, gamma_end / (-t_l), l)
    if surface is not None:
        from .oracle import fd_gradient

        rep.gradient, rep.one_sided = fd_gradient(surface, c)
    return rep


# --------------------------------------------------------------------------
# Aubry set and uniqueness
# --------------------------------------------------------------------------


@dataclass
class AubrySet:
    grid: GridSpec
    mask: np.ndarray  # (2K, n) lattice points in the set
    controls: np.ndarray  # (2K, n, d) controls of the first solution
    spread: np.ndarray  # (2K, n) max control mismatch across solutions
    tol: float

    def contains(self, mu: OccupationMeasure, tol: float | None = None) -> tuple[bool, float, int]:
        """(all support in the set, worst control mismatch on support, #points outside)."""
        tol = self.tol if tol is None else tol
        sup = mu.mass > SUPPORT_THRESHOLD
        mism = np.max(np.abs(mu.xi - self.controls), axis=2)
        worst = float(mism[sup].max()) if sup.any() else 0.0
        outside = int((sup & ~self.mask).sum() + (sup & (mism > tol)).sum())
        return outside == 0, worst, outside

    def rows(self):
        g = self.grid
        for k in range(g.period_steps):
            for m in np.flatnonzero(self.mask[k]):
                yield [k] + list(g.multi_index[m]) + list(self.controls[k, m])

    def columns(self) -> list[str]:
        d = self.grid.d
        return ["level"] + [f"m{j + 1}" for j in range(d)] + [f"xi{j + 1}" for j in range(d)]

    def export(self, path) -> Path:
        return write_csv(path, self.columns(), self.rows())


def aubry_set(c, solutions: list[PeriodicSolution], model: HamiltonianModel, tol: float = 1e-6) -> AubrySet:
    """Intersection of the control graphs of the given periodic solutions."""
    if not solutions:
        raise InvalidArgument("need at least one periodic solution")
    grid = solutions[0].grid
    c = np.asarray(c, dtype=float).reshape(grid.d)
    tabs = [s.controls(model) for s in solutions]
    base = tabs[0]
    spread = np.zeros(base.shape[:2])
    for t in tabs[1:]:
        spread = np.maximum(spread, np.max(np.abs(t - base), axis=2))
    on_lattice = np.array(
        [grid.node_parity == int(grid.level_parity(k)) for k in range(grid.period_steps)], dtype=bool
    )
    return AubrySet(grid, on_lattice & (spread <= tol), base, spread, tol)


@dataclass
class UniquenessReport:
    gap_support: float
    gap_everywhere: float
    agree_on_support: bool
    implied: bool  # agreement on the support carried over to the whole lattice
    factor: float


def uniqueness_on_mather_set(
    vbar: PeriodicSolution, vhat: PeriodicSolution, support: np.ndarray, tol: float = 1e-8, factor: float = 10.0
) -> UniquenessReport:
    """Compare two periodic solutions after aligning them on the Mather support."""
    grid = vbar.grid
    sup = np.asarray(support, dtype=bool)
    if sup.shape == (grid.n_nodes,):
        sup = np.array(
            [sup & (grid.node_parity == int(grid.level_parity(k))) for k in range(grid.period_steps)]
        )
    on = np.array([grid.node_parity == int(grid.level_parity(k)) for k in range(grid.period_steps)])
    diff = vbar.levels - vhat.levels
    if not sup.any():
        raise InvalidArgument("empty support")
    shift = diff[sup].mean()
    g_sup = float(np.max(np.abs(diff[sup] - shift)))
    g_all = float(np.max(np.abs(diff[on] - shift)))
    agree = g_sup <= tol
    return UniquenessReport(g_sup, g_all, agree, (not agree) or g_all <= factor * max(tol, g_sup), factor)
