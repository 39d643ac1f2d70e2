"""Independent reference computations used to validate the solver.

None of these share code with the scheme: the step oracle minimises the
one-step dynamic-programming objective over sampled controls, the path oracle
enumerates every walk explicitly, and the 1-D cell problem is solved by
quadrature.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import InvalidArgument, NumericFailure
from .grid import ScalarField
from .models import HamiltonianModel, MechanicalModel


def _control_grid(d: int, lo, hi, n: int) -> np.ndarray:
    axes = [np.linspace(lo[j], hi[j], n) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def brute_force_step_value(
    v: ScalarField,
    node,
    k: int,
    c,
    model: HamiltonianModel,
    control_samples: int | None = None,
    refine: int = 1,
) -> float:
    """min over xi of tau L^{(c)}(x, t_k, xi) + sum_omega rho(omega; xi) v(node + omega h).

    ``node`` sits on level k+1 and ``v`` on level k.  Controls are sampled on
    a uniform grid of the box |xi|_inf <= (d lam)^-1 (2001 points in 1-D,
    201 per axis otherwise), then resampled around the best point.
    """
    g = v.grid
    d = g.d
    n = control_samples if control_samples is not None else (2001 if d == 1 else 201)
    if n < 1:
        raise InvalidArgument("control_samples must be positive")
    m = int(node) if np.ndim(node) == 0 else int(g.flat_index(np.asarray(node)))
    if int(g.node_parity[m]) == int(v.parity):
        raise InvalidArgument("node must lie on the sublattice opposite to v")
    cap = 1.0 / (d * g.lam)
    c = np.asarray(c, dtype=float).reshape(d)
    x = g.coords(m)[None, :]
    nbv = v.flat[g.neighbors[m]]  # ordered (+e1, -e1, ...)
    diff = nbv[0::2] - nbv[1::2]
    base = nbv.mean()

    def objective(xi):
        # sum_omega rho v = mean + (lam/2) * sum_j xi_j (v(-e_j) - v(+e_j))
        return g.tau * model.L_c(np.repeat(x, xi.shape[0], 0), g.t(k), xi, c) + base - 0.5 * g.lam * xi @ diff

    lo, hi = np.full(d, -cap), np.full(d, cap)
    best = None
    for _ in range(refine + 1):
        xi = _control_grid(d, lo, hi, n)
        vals = objective(xi)
        i = int(np.argmin(vals))
        best = (float(vals[i]), xi[i])
        width = (hi - lo) / max(n - 1, 1)
        lo = np.maximum(best[1] - width, -cap)
        hi = np.minimum(best[1] + width, cap)
    return best[0]


def brute_force_level(v: ScalarField, k: int, c, model: HamiltonianModel, **kw) -> np.ndarray:
    """brute_force_step_value at every node of level k+1 (sublattice order)."""
    idx = v.grid.parity_index(v.parity.other)
    return np.array([brute_force_step_value(v, m, k, c, model, **kw) for m in idx])


MAX_ENUM_LEVELS = 12
MAX_ENUM_PATHS = 2**20


def enumerate_paths_value(v0: ScalarField, policy, start, l: int, c, model: HamiltonianModel) -> float:
    """Expected action over the explicit family of all (2d)^(l+1) paths."""
    g = v0.grid
    d = g.d
    n_paths = (2 * d) ** (l + 1)
    if l > MAX_ENUM_LEVELS or n_paths > MAX_ENUM_PATHS:
        raise InvalidArgument(f"path enumeration refused: l={l}, {n_paths} paths")
    c = np.asarray(c, dtype=float).reshape(d)
    m0 = int(start) if np.ndim(start) == 0 else int(g.flat_index(np.asarray(start)))
    seqs = np.array(list(itertools.product(range(2 * d), repeat=l + 1)), dtype=np.int64).reshape(n_paths, l + 1)
    nodes = np.full(n_paths, m0)
    prob = np.ones(n_paths)
    cost = np.zeros(n_paths)
    for j in range(l + 1):
        k = l + 1 - j
        xi = policy.at(k)[nodes]
        cost += g.tau * model.L_c(g.coords(nodes), g.t(k - 1), xi, c)
        b = seqs[:, j]
        axis, sgn = b // 2, np.where(b % 2 == 0, 1.0, -1.0)
        prob *= 1.0 / (2 * d) - 0.5 * g.lam * sgn * xi[np.arange(n_paths), axis]
        nodes = g.neighbors[nodes, b]
    return float(np.sum(prob * (cost + v0.flat[nodes])))


@dataclass
class CellProblem1D:
    c: float
    Hbar: float
    c0: float
    max_V: float
    x_max: float
    shock: float | None  # switch point of the slope for |c| < c0
    V: Callable

    def slope(self, x) -> np.ndarray:
        """Oracle derivative of the periodic solution (defined off the switch point)."""
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        root = np.sqrt(np.maximum(2.0 * (self.Hbar - self.V(x)), 0.0))
        if abs(self.c) > self.c0:
            return -self.c + math.copysign(1.0, self.c) * root
        # + branch from x_max to the switch point, - branch afterwards
        y = np.mod(x - self.x_max, 1.0)
        s = np.mod(self.shock - self.x_max, 1.0)
        return -self.c + np.where(y < s, root, -root)


def _scalar_potential(model) -> Callable:
    if isinstance(model, MechanicalModel):
        if model.d != 1 or not model.autonomous:
            raise InvalidArgument("cell_problem_1d needs an autonomous 1-D mechanical model")
        return lambda x: model.potential.value(np.asarray(x, float).reshape(-1, 1), 0.0).reshape(np.shape(x))
    if callable(model):
        return model
    raise InvalidArgument("expected a mechanical model or a callable V(x)")


def _quad(f, a, b, points=None) -> float:
    # the error estimate is checked below, so scipy's round-off warning is redundant
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=500, points=points)
    if not np.isfinite(val) or err > 1e-8:
        raise NumericFailure(f"quadrature did not converge (estimate {val}, error {err})")
    return val


def cell_problem_1d(model, c: float) -> CellProblem1D:
    """Effective Hamiltonian of H = p^2/2 + V(x) on the circle.

    |c| <= c0 = int sqrt(2 (max V - V)) gives Hbar = max V; otherwise Hbar
    solves int sqrt(2 (Hbar - V)) = |c|.
    """
    V = _scalar_potential(model)
    xs = np.linspace(0.0, 1.0, 4097)[:-1]
    i = int(np.argmax(V(xs)))
    x_max = float(xs[i])
    if np.ptp(V(xs)) > 0:
        res = optimize.minimize_scalar(
            lambda x: -float(V(np.array([x]))[0]), bracket=(xs[i] - 1e-3, xs[i], xs[i] + 1e-3)
        )
        if res.success:
            x_max = float(res.x) % 1.0
    max_V = max(float(V(np.array([x_max]))[0]), float(V(xs).max()))

    def action(H):
        return _quad(lambda y: math.sqrt(max(2.0 * (H - float(V(np.array([y]))[0])), 0.0)), x_max, x_max + 1.0)

    c0 = action(max_V)
    c = float(c)
    shock = None
    if abs(c) <= c0:
        Hbar = max_V
        root = lambda y: math.sqrt(max(2.0 * (max_V - float(V(np.array([y]))[0])), 0.0))

        def balance(s):
            return _quad(root, x_max, s) - _quad(root, s, x_max + 1.0) - c

        if c0 == 0.0:
            shock = x_max
        else:
            shock = float(optimize.brentq(balance, x_max, x_max + 1.0, xtol=1e-14)) % 1.0
    else:
        lo, width = max_V, 1.0
        while action(max_V + width) < abs(c):
            lo = max_V + width
            width *= 2.0
        Hbar = float(optimize.brentq(lambda H: action(H) - abs(c), lo, max_V + width, xtol=1e-14, rtol=1e-15))
    return CellProblem1D(c, Hbar, c0, max_V, x_max, shock, V)


def fd_gradient(surface, c) -> tuple[np.ndarray, np.ndarray]:
    """Centred differences of a gridded surface at the grid point nearest c.

    ``surface`` needs ``c_axes`` (one 1-D array per dimension) and ``values``
    on their product.  Returns (gradient, one_sided flags per axis).
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    axes = surface.c_axes
    idx = tuple(int(np.argmin(np.abs(ax - c[j]))) for j, ax in enumerate(axes))
    vals = np.asarray(surface.values, dtype=float)
    grad = np.empty(len(axes))
    flags = np.zeros(len(axes), dtype=bool)
    for j, ax in enumerate(axes):
        i = idx[j]
        if ax.size < 2:
            raise InvalidArgument("need at least two c values along every axis")

        def at(ii):
            sl = list(idx)
            sl[j] = ii
            return vals[tuple(sl)]

        if 0 < i < ax.size - 1:
            grad[j] = (at(i + 1) - at(i - 1)) / (ax[i + 1] - ax[i - 1])
        elif i == 0:
            grad[j] = (at(1) - at(0)) / (ax[1] - ax[0])
            flags[j] = True
        else:
            grad[j] = (at(i) - at(i - 1)) / (ax[i] - ax[i - 1])
            flags[j] = True
    return grad, flags
