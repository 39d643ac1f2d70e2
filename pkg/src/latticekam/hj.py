"""Explicit staggered scheme for the lattice Hamilton-Jacobi equation.

Backward step (level k -> k+1, nodes of parity k mod 2):

    v^{k+1}_m = mean_{omega} v^k_{m+omega} - tau * H(x_m, t_k, c + (D_x v^k)_m)

The forward step flips the sign of the Hamiltonian term and moves k -> k-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import CflViolation, InadmissibleStepSize, InvalidArgument, NumericFailure, SlopeBoundExceeded
from .grid import GridSpec, Parity, ScalarField, VectorField, discrete_dx, second_difference
from .io import field_columns, field_rows, write_csv, write_json
from .models import HamiltonianModel, MechanicalModel, SchemeBounds, validate_step_sizes

BACKWARD = -1.0
FORWARD = 1.0


@lru_cache(maxsize=64)
def _potential_table(model: MechanicalModel, grid: GridSpec) -> np.ndarray:
    """Row k holds V(x_m, t_k) on the nodes of parity k mod 2, one period."""
    targets = _targets(grid)
    n_rows = 2 if model.autonomous else grid.period_steps
    tab = np.empty((n_rows, targets.shape[1]))
    for k in range(n_rows):
        tab[k] = model.potential.value(grid.coords(targets[k % 2]), grid.t(k))
    tab.flags.writeable = False
    return tab


@lru_cache(maxsize=64)
def _targets(grid: GridSpec) -> np.ndarray:
    return np.stack([grid.parity_index(0), grid.parity_index(1)])


def _level_rows(model, grid: GridSpec, ks: np.ndarray) -> np.ndarray:
    tab = _potential_table(model, grid)
    return tab[np.mod(ks, tab.shape[0])]


def _check_finite(f: np.ndarray, grid: GridSpec, level: int):
    bad = ~np.isfinite(f)
    if bad.any():
        node = tuple(int(i) for i in grid.multi_index[np.flatnonzero(bad)[0]])
        raise NumericFailure(f"non-finite value at level {level}, node {node}")


def advance(f, k0: int, steps: int, c, model: HamiltonianModel, grid: GridSpec, *, sign=BACKWARD, store=False):
    """Low-level driver on flat full-cube arrays.

    Returns (final, levels, slope, hp) where slope[j] = max|D_x v^{k_j}| and
    hp[j] = max|H_p(c + D_x v^{k_j})|_inf for the level k_j stepped from.
    """
    c = np.asarray(c, dtype=float).reshape(grid.d)
    f = np.asarray(f, dtype=float)
    ks = np.asarray(k0 - np.arange(steps) if sign == FORWARD else k0 + np.arange(steps), dtype=np.int64)
    if steps == 0:
        return f.copy(), f[None].copy(), np.zeros(0), np.zeros(0)
    tpar = np.mod(ks, 2).astype(np.int64)
    if isinstance(model, MechanicalModel):
        out = _kernels.advance_quadratic(
            f, _targets(grid), tpar, grid.neighbors, _level_rows(model, grid, ks), c, grid.tau, grid.h, sign, store
        )
    else:
        out = _advance_generic(f, ks, tpar, c, model, grid, sign, store)
    _check_finite(out[0], grid, int(ks[-1] + (1 if sign == BACKWARD else -1)))
    return out


def _advance_generic(f, ks, tpar, c, model, grid, sign, store):
    n = grid.n_nodes
    targets = _targets(grid)
    levels = np.empty((len(ks) + 1 if store else 1, n))
    levels[0] = f
    slope = np.empty(len(ks))
    hp = np.empty(len(ks))
    f = f.copy()
    for j, k in enumerate(ks):
        idx = targets[tpar[j]]
        vals = f[grid.neighbors[idx]]
        D = (vals[:, 0::2] - vals[:, 1::2]) / (2 * grid.h)
        x = grid.coords(idx)
        q = c + D
        new = np.zeros(n)
        new[idx] = vals.sum(axis=1) / (2 * grid.d) + sign * grid.tau * model.H(x, grid.t(k), q)
        slope[j] = np.max(np.abs(D))
        hp[j] = np.max(np.abs(model.H_p(x, grid.t(k), q)))
        f = new
        if store:
            levels[j + 1] = f
    return f, levels, slope, hp


def _check_parity(v: ScalarField, k: int):
    if v.parity != v.grid.level_parity(k):
        raise InvalidArgument(f"field of parity {v.parity.name} cannot sit at level {k}")


def step_backward_scheme(v: ScalarField, k: int, c, model: HamiltonianModel) -> ScalarField:
    _check_parity(v, k)
    f, *_ = advance(v.flat, k, 1, c, model, v.grid, sign=BACKWARD)
    return ScalarField(v.grid, v.parity.other, f)


def step_forward_scheme(v: ScalarField, k: int, c, model: HamiltonianModel) -> ScalarField:
    _check_parity(v, k)
    f, *_ = advance(v.flat, k, 1, c, model, v.grid, sign=FORWARD)
    return ScalarField(v.grid, v.parity.other, f)


@dataclass
class IvpSolution:
    grid: GridSpec
    levels: list[ScalarField]
    c: np.ndarray
    k0: int = 0
    slope: np.ndarray = field(default_factory=lambda: np.zeros(0))  # max|D_x v^k|, one per level
    cfl_margin: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (d lam)^-1 - max|H_p|
    semiconcavity: np.ndarray = field(default_factory=lambda: np.zeros(0))  # M^k_delta per level
    rebound: list[dict] = field(default_factory=list)
    model_name: str = ""

    @property
    def steps(self) -> int:
        return len(self.levels) - 1

    @property
    def final(self) -> ScalarField:
        return self.levels[-1]

    def level(self, k: int) -> ScalarField:
        return self.levels[k - self.k0]

    def monitor_summary(self) -> dict:
        return {
            "grid": {"d": self.grid.d, "N": self.grid.N, "K": self.grid.K},
            "c": self.c.tolist(),
            "k0": self.k0,
            "steps": self.steps,
            "model": self.model_name,
            "max_slope": float(self.slope.max()) if self.slope.size else 0.0,
            "min_cfl_margin": float(self.cfl_margin.min()) if self.cfl_margin.size else None,
            "per_level": [
                {
                    "k": self.k0 + j,
                    "max_slope": float(self.slope[j]),
                    "M_delta": float(self.semiconcavity[j]),
                    "cfl_margin": float(self.cfl_margin[j]) if j < self.cfl_margin.size else None,
                }
                for j in range(len(self.levels))
            ],
            "rebound": self.rebound,
        }

    def export(self, out_dir, stem: str = "ivp") -> list[Path]:
        out_dir = Path(out_dir)
        rows = (row for j, v in enumerate(self.levels) for row in field_rows(v, level=self.k0 + j))
        p1 = write_csv(out_dir / f"{stem}_levels.csv", field_columns(self.levels[0], with_level=True), rows)
        p2 = write_json(out_dir / f"{stem}_monitors.json", self.monitor_summary())
        return [p1, p2]


def solve_ivp(
    v0: ScalarField,
    steps: int,
    c,
    model: HamiltonianModel,
    bounds: SchemeBounds | None = None,
    *,
    k0: int = 0,
    force: bool = False,
) -> IvpSolution:
    """Iterate the backward scheme from level k0 and record the monitors.

    With ``bounds``, a grid violating lam < lambda1 is refused unless
    ``force``; the remaining step-size conditions only affect whether the
    semiconcavity envelope is guaranteed.  At every multiple of 2K steps
    the slope is compared with beta_tilde + 1 and with r.
    """
    g = v0.grid
    _check_parity(v0, k0)
    if steps < 0:
        raise InvalidArgument("steps must be nonnegative")
    c = np.asarray(c, dtype=float).reshape(g.d)
    if bounds is not None and not force:
        report = validate_step_sizes(bounds, g)
        if not report.cfl_ok:
            raise InadmissibleStepSize(f"lam = {g.lam} is not below lambda1 = {bounds.lambda1}")
        s0 = discrete_dx(v0).sup_norm()
        if s0 > bounds.r * (1 + 1e-12):
            raise SlopeBoundExceeded(f"initial slope {s0} exceeds r = {bounds.r}")
    f, levels, slope, hp = advance(v0.flat, k0, steps, c, model, g, sign=BACKWARD, store=True)
    cap = 1.0 / (g.d * g.lam)
    margin = cap - hp
    bad = np.flatnonzero(margin < -1e-12)
    if bad.size and not force:
        j = int(bad[0])
        raise CflViolation(f"|H_p| = {hp[j]} exceeds (d lam)^-1 = {cap} at level {k0 + j}", k0 + j, float(margin[j]))
    fields = [ScalarField(g, g.level_parity(k0 + j), levels[j]) for j in range(steps + 1)]
    all_slope = np.append(slope, discrete_dx(fields[-1]).sup_norm())
    sol = IvpSolution(
        grid=g,
        levels=fields,
        c=c,
        k0=k0,
        slope=all_slope,
        cfl_margin=margin,
        semiconcavity=np.array([np.max(second_difference(v)) for v in fields]),
        model_name=model.name,
    )
    if bounds is not None:
        for j in range(g.period_steps, steps + 1, g.period_steps):
            s = float(all_slope[j])
            entry = {"k": k0 + j, "slope": s, "beta_tilde_plus_1": bounds.beta_tilde + 1, "r": bounds.r}
            entry["within_beta"] = s <= bounds.beta_tilde + 1
            entry["within_r"] = s <= bounds.r
            sol.rebound.append(entry)
            if not entry["within_r"] and not force:
                raise SlopeBoundExceeded(f"slope {s} at level {k0 + j} exceeds r = {bounds.r}")
    return sol


def time_one_map(v0: ScalarField, c, model: HamiltonianModel, bounds: SchemeBounds | None = None, *, k0: int = 0):
    """phi_delta(v0; c): the level 2K steps after v0 (same parity)."""
    g = v0.grid
    _check_parity(v0, k0)
    if bounds is not None:
        return solve_ivp(v0, g.period_steps, c, model, bounds, k0=k0).final
    f, *_ = advance(v0.flat, k0, g.period_steps, c, model, g)
    return ScalarField(g, v0.parity, f)


def minimizing_control_field(ivp: IvpSolution, model: HamiltonianModel) -> list[VectorField]:
    """xi^{k+1}_m = H_p(x_m, t_k, c + (D_x v^k)_m), one field per step of the solve.

    Entry j lives at level k0 + j + 1.
    """
    g = ivp.grid
    out = []
    for j, v in enumerate(ivp.levels[:-1]):
        k = ivp.k0 + j
        D = discrete_dx(v)
        idx = g.parity_index(D.parity)
        xi = model.H_p(g.coords(idx), g.t(k), ivp.c + D.sub)
        out.append(VectorField.from_sublattice(g, D.parity, xi))
    return out


@dataclass
class SemiconcavityReport:
    t: np.ndarray
    M_delta: np.ndarray
    envelope: np.ndarray
    M_plus: float
    guaranteed: bool  # step-size conditions held

    @property
    def violations(self) -> np.ndarray:
        """Levels (index into t) with M_delta > M(t), ignoring t = 0."""
        return np.flatnonzero(self.M_delta[1:] > self.envelope[1:] * (1 + 1e-12) + 1e-12) + 1

    @property
    def ok(self) -> bool:
        return self.violations.size == 0

    @property
    def starts_below_plus(self) -> bool:
        return bool(self.M_delta[0] <= self.M_plus)

    @property
    def stays_below_plus(self) -> bool:
        return bool(np.all(self.M_delta <= self.M_plus * (1 + 1e-12) + 1e-12))


def semiconcavity_monitor(ivp: IvpSolution, bounds: SchemeBounds) -> SemiconcavityReport:
    """Compare M^k_delta with the envelope M(t) at t = (k - k0) tau."""
    g = ivp.grid
    t = np.arange(len(ivp.levels)) * g.tau
    env = np.full(t.shape, math.inf)
    if t.size > 1:
        env[1:] = bounds.M(t[1:])
    return SemiconcavityReport(
        t=t,
        M_delta=np.asarray(ivp.semiconcavity),
        envelope=env,
        M_plus=bounds.M_plus,
        guaranteed=validate_step_sizes(bounds, g).passed,
    )


def scheme_residual(v_next: ScalarField, v: ScalarField, k: int, c, model: HamiltonianModel) -> np.ndarray:
    """(D_t v)^{k+1} + H(x, t_k, c + D_x v^k) on the nodes of level k+1."""
    from .grid import discrete_dt

    g = v.grid
    D = discrete_dx(v)
    idx = g.parity_index(D.parity)
    H = model.H(g.coords(idx), g.t(k), np.asarray(c, float) + D.sub)
    return discrete_dt(v_next, v).sub + H
