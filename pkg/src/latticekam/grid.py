"""Staggered periodic space-time lattice and fields living on it.

Nodes are integer vectors m in {0, ..., 2N-1}^d with x_m = h*m, h = 1/(2N);
time levels are t_k = k*tau, tau = 1/(2K).  A node (m, k) belongs to the
solution lattice when m_1 + ... + m_d + k is odd, so level k of a solution
lives on the spatial sublattice of parity (k + 1) mod 2.

Fields store a value for every node of the full (2N)^d cube; entries of the
other parity are kept at zero and never read.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import InvalidArgument


class Parity(enum.IntEnum):
    EVEN = 0
    ODD = 1

    @property
    def other(self) -> "Parity":
        return Parity(1 - int(self))


@dataclass(frozen=True)
class GridSpec:
    d: int
    N: int
    K: int

    def __post_init__(self):
        for name in ("d", "N", "K"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {val!r}")

    @property
    def h(self) -> float:
        return 1.0 / (2 * self.N)

    @property
    def tau(self) -> float:
        return 1.0 / (2 * self.K)

    @property
    def lam(self) -> float:
        return self.tau / self.h

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.N,) * self.d

    @property
    def n_nodes(self) -> int:
        return (2 * self.N) ** self.d

    @property
    def period_steps(self) -> int:
        return 2 * self.K

    @cached_property
    def multi_index(self) -> np.ndarray:
        """Integer coordinates of every flat node, shape (n_nodes, d)."""
        axes = [np.arange(2 * self.N)] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=1).astype(np.int64)

    @cached_property
    def node_parity(self) -> np.ndarray:
        return (self.multi_index.sum(axis=1) % 2).astype(np.int8)

    @cached_property
    def neighbors(self) -> np.ndarray:
        """Flat index of m + omega for omega in (+e1, -e1, +e2, -e2, ...)."""
        m = self.multi_index
        n2 = 2 * self.N
        cols = []
        for j in range(self.d):
            for sign in (1, -1):
                shifted = m.copy()
                shifted[:, j] = (shifted[:, j] + sign) % n2
                cols.append(self.flat_index(shifted))
        return np.stack(cols, axis=1)

    @cached_property
    def directions(self) -> np.ndarray:
        """The basis B as a (2d, d) integer array, ordered like `neighbors`."""
        out = np.zeros((2 * self.d, self.d), dtype=np.int64)
        for j in range(self.d):
            out[2 * j, j] = 1
            out[2 * j + 1, j] = -1
        return out

    def flat_index(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=np.int64) % (2 * self.N)
        return np.ravel_multi_index(tuple(np.moveaxis(m, -1, 0)), self.shape)

    def parity_index(self, parity) -> np.ndarray:
        return self._parity_index[int(parity)]

    @cached_property
    def _parity_index(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.node_parity
        return (np.flatnonzero(p == 0), np.flatnonzero(p == 1))

    def level_parity(self, k: int) -> Parity:
        """Spatial parity of time level k on the solution lattice."""
        return Parity((k + 1) % 2)

    def coords(self, flat=None) -> np.ndarray:
        m = self.multi_index if flat is None else self.multi_index[flat]
        return m * self.h

    def t(self, k) -> float:
        return k * self.tau

    def nodes(self, parity) -> np.ndarray:
        """Integer coordinates of the nodes of one parity class."""
        return self.multi_index[self.parity_index(parity)]


def build_grid(d: int, N: int, K: int) -> GridSpec:
    return GridSpec(d, N, K)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    parity: Parity
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            vals = vals.reshape(self.grid.shape)
        vals = vals.copy()
        object.__setattr__(self, "parity", Parity(self.parity))
        vals.reshape(-1)[self.grid.parity_index(self.parity.other)] = 0.0
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_sublattice(cls, grid: GridSpec, parity, sub) -> "ScalarField":
        full = np.zeros(grid.n_nodes)
        full[grid.parity_index(parity)] = sub
        return cls(grid, Parity(parity), full.reshape(grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, parity, value: float = 0.0) -> "ScalarField":
        return cls(grid, Parity(parity), np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: GridSpec, parity, f: Callable) -> "ScalarField":
        """Sample f(x) with x of shape (n, d) at the nodes of one parity."""
        idx = grid.parity_index(parity)
        return cls.from_sublattice(grid, parity, f(grid.coords(idx)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def sub(self) -> np.ndarray:
        """Values on the active sublattice, in flat-index order."""
        return self.flat[self.grid.parity_index(self.parity)]

    def at(self, m) -> float:
        m = np.asarray(m)
        if int(m.sum()) % 2 != int(self.parity):
            raise InvalidArgument(f"node {tuple(m)} is not on the {self.parity.name} sublattice")
        return float(self.flat[self.grid.flat_index(m)])

    def shift(self, a: float) -> "ScalarField":
        return ScalarField.from_sublattice(self.grid, self.parity, self.sub + a)

    def sup_distance(self, other: "ScalarField") -> float:
        if other.parity != self.parity:
            raise InvalidArgument("fields live on different sublattices")
        return float(np.max(np.abs(self.sub - other.sub)))

    def oscillation(self) -> float:
        s = self.sub
        return float(s.max() - s.min())


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: GridSpec
    parity: Parity
    values: np.ndarray  # shape grid.shape + (d,)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).reshape(self.grid.shape + (self.grid.d,)).copy()
        vals.reshape(-1, self.grid.d)[self.grid.parity_index(Parity(self.parity).other)] = 0.0
        object.__setattr__(self, "parity", Parity(self.parity))
        object.__setattr__(self, "values", _frozen(vals))

    @classmethod
    def from_sublattice(cls, grid: GridSpec, parity, sub) -> "VectorField":
        full = np.zeros((grid.n_nodes, grid.d))
        full[grid.parity_index(parity)] = np.asarray(sub).reshape(-1, grid.d)
        return cls(grid, Parity(parity), full)

    @classmethod
    def constant(cls, grid: GridSpec, parity, vec) -> "VectorField":
        full = np.broadcast_to(np.asarray(vec, dtype=float), (grid.n_nodes, grid.d))
        return cls(grid, Parity(parity), full)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.grid.d)

    @property
    def sub(self) -> np.ndarray:
        return self.flat[self.grid.parity_index(self.parity)]

    def at(self, m) -> np.ndarray:
        m = np.asarray(m)
        if int(m.sum()) % 2 != int(self.parity):
            raise InvalidArgument(f"node {tuple(m)} is not on the {self.parity.name} sublattice")
        return self.flat[self.grid.flat_index(m)].copy()

    def sup_norm(self) -> float:
        s = self.sub
        return float(np.max(np.abs(s))) if s.size else 0.0


def discrete_dx(v: ScalarField) -> VectorField:
    """Central difference (v[m+e_j] - v[m-e_j]) / 2h on the opposite sublattice."""
    g = v.grid
    idx = g.parity_index(v.parity.other)
    nb = g.neighbors[idx]
    f = v.flat
    D = (f[nb[:, 0::2]] - f[nb[:, 1::2]]) / (2 * g.h)
    return VectorField.from_sublattice(g, v.parity.other, D)


def neighbor_mean(v: ScalarField) -> np.ndarray:
    """Mean of the 2d neighbours of each opposite-parity node (sublattice order)."""
    g = v.grid
    idx = g.parity_index(v.parity.other)
    return v.flat[g.neighbors[idx]].mean(axis=1)


def discrete_dt(v_next: ScalarField, v: ScalarField) -> ScalarField:
    if v_next.grid != v.grid:
        raise InvalidArgument("fields live on different grids")
    if v_next.parity == v.parity:
        raise InvalidArgument("consecutive levels must have opposite parity")
    g = v.grid
    return ScalarField.from_sublattice(g, v_next.parity, (v_next.sub - neighbor_mean(v)) / g.tau)


def second_difference(v: ScalarField) -> np.ndarray:
    """(v[m+2e_j] + v[m-2e_j] - 2 v[m]) / 4h^2, shape (n_sub, d)."""
    g = v.grid
    idx = g.parity_index(v.parity)
    nb = g.neighbors
    f = v.flat
    out = np.empty((idx.size, g.d))
    for j in range(g.d):
        plus2 = nb[nb[idx, 2 * j], 2 * j]
        minus2 = nb[nb[idx, 2 * j + 1], 2 * j + 1]
        out[:, j] = (f[plus2] + f[minus2] - 2 * f[idx]) / (4 * g.h**2)
    return out


class LipschitzInterpolant:
    """Continuous periodic extension of a sublattice field.

    The field is read on the coarse lattice anchor + 2Z^d (anchor = e_1 for
    the odd class, 0 for the even class) and blended linearly along e_1,
    then e_2, and so on, inside each cube of side 2h.  In one dimension the
    coarse lattice is the whole sublattice.  For d >= 2 the remaining
    sublattice nodes sit at cube centres and are *not* reproduced: central
    differences never couple them to the coarse lattice, so no interpolant
    with a slope bound in terms of |D_x v| could reproduce them.
    """

    def __init__(self, v: ScalarField):
        self.field = v
        g = v.grid
        self.grid = g
        self.anchor = np.zeros(g.d, dtype=np.int64)
        if v.parity == Parity.ODD:
            self.anchor[0] = 1

    def coarse_nodes(self) -> np.ndarray:
        """Integer coordinates of the nodes that are reproduced exactly."""
        g = self.grid
        axes = [np.arange(self.anchor[j], 2 * g.N, 2) for j in range(g.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=1)

    def __call__(self, x) -> np.ndarray:
        g = self.grid
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != g.d:
            x = x.reshape(-1, g.d)
        s = (x / g.h - self.anchor) / 2.0
        base = np.floor(s).astype(np.int64)
        frac = s - base
        f = self.field.flat
        # corners[..., b] holds the value at base + bits(b); blend axis by axis
        n_corners = 2**g.d
        corners = np.empty((x.shape[0], n_corners))
        for b, bits in enumerate(itertools.product((0, 1), repeat=g.d)):
            m = self.anchor + 2 * (base + np.asarray(bits[::-1]))
            corners[:, b] = f[g.flat_index(m)]
        for j in range(g.d):
            lo, hi = corners[:, 0::2], corners[:, 1::2]
            corners = lo + (hi - lo) * frac[:, j : j + 1]
        return corners[:, 0]


def lipschitz_interpolate(v: ScalarField) -> LipschitzInterpolant:
    return LipschitzInterpolant(v)


def random_field(grid: GridSpec, parity, rng: np.random.Generator, slope: float = 1.0, modes: int = 3) -> ScalarField:
    """Random trigonometric field on one sublattice with sup |D_x v| equal to ``slope``."""
    x = grid.coords()
    f = np.zeros(grid.n_nodes)
    for _ in range(modes):
        k = rng.integers(-2, 3, size=grid.d)
        f += rng.normal() * np.cos(2 * np.pi * (x @ k) + rng.uniform(0, 2 * np.pi))
    v = ScalarField(grid, Parity(int(parity)), np.where(grid.node_parity == int(parity), f, 0.0))
    s = discrete_dx(v).sup_norm()
    if s > 0:
        v = ScalarField(grid, v.parity, v.flat * (slope / s))
    return v
