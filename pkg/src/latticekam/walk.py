"""Controlled random walks on the staggered lattice.

A backward walk moves from level k+1 to level k, jumping from m to m + omega
with probability 1/(2d) - (lam/2) omega . xi^{k+1}_m.  Forward walks move
from k to k+1 with the sign of the drift term flipped.  Either way the mean
jump is s * tau * xi with s = -1 (backward) or +1 (forward).

Positions are tracked on the universal cover: a displacement accumulates
the lattice jumps without wrapping, so drifts over many periods are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidArgument, InvalidControl
from .grid import GridSpec, Parity, ScalarField, VectorField
from .models import HamiltonianModel

BACKWARD = "backward"
FORWARD = "forward"


def _sign(direction: str) -> int:
    if direction == BACKWARD:
        return -1
    if direction == FORWARD:
        return 1
    raise InvalidArgument(f"direction must be 'backward' or 'forward', got {direction!r}")


def _check_box(xi: np.ndarray, grid: GridSpec, what: str = "control"):
    cap = 1.0 / (grid.d * grid.lam)
    worst = float(np.max(np.abs(xi))) if xi.size else 0.0
    if worst > cap * (1 + 1e-12):
        raise InvalidControl(f"{what} component {worst} outside the box |xi| <= (d lam)^-1 = {cap}")


def _rho(xi: np.ndarray, lam: float, s: int) -> np.ndarray:
    """Probabilities over B = (+e1, -e1, ...), one row per control vector."""
    xi = np.atleast_2d(xi)
    d = xi.shape[1]
    rho = np.empty((xi.shape[0], 2 * d))
    rho[:, 0::2] = 1.0 / (2 * d) + s * 0.5 * lam * xi
    rho[:, 1::2] = 1.0 / (2 * d) - s * 0.5 * lam * xi
    # saturated controls can produce -1e-17 from rounding
    np.clip(rho, 0.0, 1.0, out=rho)
    return rho


def transition_probs(xi_node, direction: str, grid: GridSpec) -> np.ndarray:
    """The 2d jump probabilities, ordered like ``grid.directions``."""
    xi = np.asarray(xi_node, dtype=float).reshape(grid.d)
    _check_box(xi, grid)
    return _rho(xi, grid.lam, _sign(direction))[0]


@dataclass
class ControlPolicy:
    """Per-level control fields on full-cube flat storage.

    ``table[j]`` is the control at level ``k_start + j`` (index taken modulo
    the table length when ``periodic``).
    """

    grid: GridSpec
    table: np.ndarray  # (n_levels, n_nodes, d)
    k_start: int = 0
    periodic: bool = False

    def __post_init__(self):
        g = self.grid
        self.table = np.asarray(self.table, dtype=float).reshape(-1, g.n_nodes, g.d)
        _check_box(self.table, g)

    @classmethod
    def from_fields(cls, fields: Sequence[VectorField], k_start: int, periodic: bool = False) -> "ControlPolicy":
        g = fields[0].grid
        return cls(g, np.stack([f.flat for f in fields]), k_start, periodic)

    @classmethod
    def constant(cls, grid: GridSpec, xi) -> "ControlPolicy":
        tab = np.broadcast_to(np.asarray(xi, dtype=float).reshape(grid.d), (1, grid.n_nodes, grid.d))
        return cls(grid, tab.copy(), 0, periodic=True)

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable, period: int | None = None) -> "ControlPolicy":
        """fn(x, t) -> (n, d) control; sampled over one period of levels."""
        L = grid.period_steps if period is None else period
        x = grid.coords()
        return cls(grid, np.stack([fn(x, grid.t(k)) for k in range(L)]), 0, periodic=True)

    @classmethod
    def random(cls, grid: GridSpec, rng: np.random.Generator, n_levels: int | None = None, scale: float = 1.0):
        """Uniform controls in scale * box, periodic over n_levels (default 2K)."""
        L = grid.period_steps if n_levels is None else n_levels
        cap = scale / (grid.d * grid.lam)
        return cls(grid, rng.uniform(-cap, cap, size=(L, grid.n_nodes, grid.d)), 0, periodic=True)

    def at(self, k: int) -> np.ndarray:
        j = k - self.k_start
        if self.periodic:
            j %= self.table.shape[0]
        elif not 0 <= j < self.table.shape[0]:
            raise InvalidArgument(f"policy has no control at level {k}")
        return self.table[j]


@dataclass
class NodeDistribution:
    grid: GridSpec
    level: int
    mass: np.ndarray  # (n_nodes,)
    mean: np.ndarray  # expected position on the universal cover, (d,)

    def support(self, threshold: float = 0.0) -> dict[int, float]:
        idx = np.flatnonzero(self.mass > threshold)
        return {int(i): float(self.mass[i]) for i in idx}

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def expect(self, values: np.ndarray) -> float:
        return float(self.mass @ values)


def _levels(k_start: int, steps: int, s: int) -> np.ndarray:
    """Levels of the control used on each step (the level being left)."""
    return k_start + s * np.arange(steps) if s > 0 else k_start - np.arange(steps)


def _start_index(grid: GridSpec, start) -> int:
    if np.ndim(start) == 0:
        return int(start)
    return int(grid.flat_index(np.asarray(start)))


def propagate_distribution(
    start, policy: ControlPolicy, steps: int, direction: str = BACKWARD, k_start: int | None = None
) -> list[NodeDistribution]:
    """Exact law of the walk at each level, starting from a point mass.

    Backward walks start at level ``k_start`` (default ``steps``) and end at
    ``k_start - steps``; forward walks go up from ``k_start`` (default 0).
    """
    g = policy.grid
    s = _sign(direction)
    if k_start is None:
        k_start = steps if s < 0 else 0
    n0 = _start_index(g, start)
    x0 = g.coords(n0)
    p = np.zeros(g.n_nodes)
    p[n0] = 1.0
    A = np.zeros((g.n_nodes, g.d))  # E[displacement ; gamma = m]
    dirs = g.directions.astype(float) * g.h
    out = [NodeDistribution(g, k_start, p.copy(), x0.copy())]
    parity = int(g.node_parity[n0])
    for j, k in enumerate(_levels(k_start, steps, s)):
        src = g.parity_index(parity)
        rho = _rho(policy.at(int(k))[src], g.lam, s)
        p_new = _kernels.propagate(p, src, g.neighbors, rho)
        A_new = np.empty_like(A)
        for i in range(g.d):
            A_new[:, i] = _kernels.propagate(A[:, i], src, g.neighbors, rho) + _kernels.propagate(
                p, src, g.neighbors, rho * dirs[:, i]
            )
        p, A = p_new, A_new
        parity = 1 - parity
        out.append(NodeDistribution(g, int(k + s), p.copy(), x0 + A.sum(axis=0)))
    return out


def averaged_path(start, policy: ControlPolicy, steps: int, direction: str = BACKWARD, k_start=None) -> np.ndarray:
    """Mean position on the universal cover at each level, shape (steps+1, d)."""
    return np.array([dist.mean for dist in propagate_distribution(start, policy, steps, direction, k_start)])


def averaged_path_recursion(
    start, policy: ControlPolicy, steps: int, direction: str = BACKWARD, k_start=None
) -> np.ndarray:
    """Same quantity via gamma_bar <- gamma_bar + s tau E[xi(gamma)]."""
    g = policy.grid
    s = _sign(direction)
    if k_start is None:
        k_start = steps if s < 0 else 0
    dists = propagate_distribution(start, policy, steps, direction, k_start)
    out = [dists[0].mean]
    for j, k in enumerate(_levels(k_start, steps, s)):
        xi_bar = dists[j].mass @ policy.at(int(k))
        out.append(out[-1] + s * g.tau * xi_bar)
    return np.array(out)


@dataclass
class PathSample:
    start: int
    steps: int
    gamma: np.ndarray  # flat node indices per level, (steps+1,)
    position: np.ndarray  # universal-cover positions, (steps+1, d)
    eta: np.ndarray  # drift path, (steps+1, d)
    stream: int


@dataclass
class PathSet:
    grid: GridSpec
    start: int
    k_start: int
    direction: str
    seed: int
    nodes: np.ndarray  # (n_paths, steps+1)
    position: np.ndarray  # (n_paths, steps+1, d)
    eta: np.ndarray  # (n_paths, steps+1, d)
    controls: np.ndarray = field(repr=False, default=None)  # control used on each step, (n_paths, steps, d)

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def __getitem__(self, i: int) -> PathSample:
        return PathSample(self.start, self.nodes.shape[1] - 1, self.nodes[i], self.position[i], self.eta[i], i)

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def sample_paths(
    start,
    policy: ControlPolicy,
    steps: int,
    n_paths: int,
    seed: int,
    direction: str = BACKWARD,
    k_start: int | None = None,
) -> PathSet:
    """Monte-Carlo paths; path i consumes row i of one seeded uniform matrix."""
    g = policy.grid
    s = _sign(direction)
    if k_start is None:
        k_start = steps if s < 0 else 0
    if n_paths < 0:
        raise InvalidArgument("n_paths must be nonnegative")
    n0 = _start_index(g, start)
    U = np.random.default_rng(seed).random((n_paths, steps))
    nodes = np.empty((n_paths, steps + 1), dtype=np.int64)
    pos = np.empty((n_paths, steps + 1, g.d))
    eta = np.empty((n_paths, steps + 1, g.d))
    ctrl = np.empty((n_paths, steps, g.d))
    nodes[:, 0] = n0
    pos[:, 0] = g.coords(n0)
    eta[:, 0] = g.coords(n0)
    dirs = g.directions.astype(float) * g.h
    for j, k in enumerate(_levels(k_start, steps, s)):
        xi = policy.at(int(k))[nodes[:, j]]
        cum = np.cumsum(_rho(xi, g.lam, s), axis=1)
        cum[:, -1] = 1.0
        b = np.minimum((U[:, j : j + 1] >= cum).sum(axis=1), 2 * g.d - 1)
        nodes[:, j + 1] = g.neighbors[nodes[:, j], b]
        pos[:, j + 1] = pos[:, j] + dirs[b]
        eta[:, j + 1] = eta[:, j] + s * g.tau * xi
        ctrl[:, j] = xi
    return PathSet(g, n0, k_start, direction, seed, nodes, pos, eta, ctrl)


def _running_cost(model, grid, policy, k, c) -> np.ndarray:
    """tau * L^{(c)}(x_m, t_{k-1}, xi^k_m) for all nodes m (full cube)."""
    xi = policy.at(k)
    return grid.tau * model.L_c(grid.coords(), grid.t(k - 1), xi, c)


def action_functional(
    v0: ScalarField,
    policy: ControlPolicy,
    start,
    l: int,
    c,
    model: HamiltonianModel,
    *,
    mode: str = "exact",
    n_paths: int = 10000,
    seed: int = 0,
):
    """Expected running cost plus terminal value for a walk from level l+1 to 0.

    ``mode="exact"`` propagates the law level by level and returns a float;
    ``mode="mc"`` returns (estimate, standard error).
    """
    g = v0.grid
    if v0.parity != g.level_parity(0):
        raise InvalidArgument("v0 must live on level 0")
    n0 = _start_index(g, start)
    if int(g.node_parity[n0]) != int(g.level_parity(l + 1)):
        raise InvalidArgument(f"start node is not on level {l + 1}")
    c = np.asarray(c, dtype=float).reshape(g.d)
    if mode == "exact":
        dists = propagate_distribution(n0, policy, l + 1, BACKWARD, k_start=l + 1)
        total = 0.0
        for dist in dists[:-1]:
            total += dist.expect(_running_cost(model, g, policy, dist.level, c))
        return total + dists[-1].expect(v0.flat)
    if mode == "mc":
        paths = sample_paths(n0, policy, l + 1, n_paths, seed, BACKWARD, k_start=l + 1)
        per_path = v0.flat[paths.nodes[:, -1]].copy()
        for j in range(l + 1):
            k = l + 1 - j
            per_path += _running_cost(model, g, policy, k, c)[paths.nodes[:, j]]
        if n_paths == 0:
            return float("nan"), float("nan")
        se = per_path.std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else float("inf")
        return float(per_path.mean()), float(se)
    raise InvalidArgument(f"unknown mode {mode!r}")


@dataclass
class VarianceDiagnostic:
    steps_remaining: np.ndarray  # j = l+1-k, level index counted from the start
    sigma_tilde: np.ndarray  # (levels, d): E|(eta - gamma)_i|^2
    sigma_hat: np.ndarray  # (levels, d): E|(eta - gamma)_i|
    bound: np.ndarray  # (t_{l+1} - t_k) h / lam

    @property
    def ok(self) -> bool:
        tol = 1e-13
        lower = np.all(self.sigma_hat**2 <= self.sigma_tilde * (1 + 1e-12) + tol)
        upper = np.all(self.sigma_tilde <= self.bound[:, None] * (1 + 1e-12) + tol)
        return bool(lower and upper)


def variance_diagnostic(
    start, policy: ControlPolicy, steps: int, direction: str = BACKWARD, k_start=None, max_states: int = 2_000_000
) -> VarianceDiagnostic:
    """Exact moments of eta - gamma at every level.

    The second moment comes from a per-node moment recursion.  The first
    absolute moment needs the full law of (gamma, eta - gamma), which is
    propagated as a merged list of states.
    """
    g = policy.grid
    s = _sign(direction)
    if k_start is None:
        k_start = steps if s < 0 else 0
    n0 = _start_index(g, start)
    d = g.d
    dirs = g.directions.astype(float) * g.h
    # moment recursion
    p = np.zeros(g.n_nodes)
    p[n0] = 1.0
    A = np.zeros((g.n_nodes, d))
    S = np.zeros((g.n_nodes, d))
    # joint law: arrays of (node, D, mass)
    nodes = np.array([n0])
    D = np.zeros((1, d))
    w = np.ones(1)
    st = [np.zeros(d)]
    sh = [np.zeros(d)]
    parity = int(g.node_parity[n0])
    for k in _levels(k_start, steps, s):
        xi_all = policy.at(int(k))
        src = g.parity_index(parity)
        rho = _rho(xi_all[src], g.lam, s)
        drift = s * g.tau * xi_all[src]  # (n_src, d)
        p_new = np.zeros_like(p)
        A_new = np.zeros_like(A)
        S_new = np.zeros_like(S)
        for b in range(2 * d):
            delta = drift - dirs[b]  # increment of eta - gamma
            tgt = g.neighbors[src, b]
            wb = rho[:, b]
            np.add.at(p_new, tgt, wb * p[src])
            np.add.at(A_new, tgt, wb[:, None] * (A[src] + p[src, None] * delta))
            np.add.at(S_new, tgt, wb[:, None] * (S[src] + 2 * A[src] * delta + p[src, None] * delta**2))
        p, A, S = p_new, A_new, S_new
        st.append(S.sum(axis=0))

        # joint law
        r = _rho(xi_all[nodes], g.lam, s)
        nn = g.neighbors[nodes][:, :, None]  # (n, 2d, 1)
        newD = D[:, None, :] + (s * g.tau * xi_all[nodes])[:, None, :] - dirs[None, :, :]
        nw = w[:, None] * r
        keep = nw.ravel() > 0
        nodes_f = nn.reshape(-1)[keep]
        D_f = newD.reshape(-1, d)[keep]
        w_f = nw.ravel()[keep]
        key = np.concatenate([nodes_f[:, None].astype(float), np.round(D_f / 1e-12)], axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        w = np.bincount(inv, weights=w_f)
        nodes = uniq[:, 0].astype(np.int64)
        Dsum = np.zeros((uniq.shape[0], d))
        np.add.at(Dsum, inv, D_f * w_f[:, None])
        D = Dsum / w[:, None]
        if nodes.size > max_states:
            raise InvalidArgument(f"joint state count {nodes.size} exceeds {max_states}")
        sh.append(np.abs(D).T @ w)
        parity = 1 - parity
    j = np.arange(steps + 1)
    return VarianceDiagnostic(j, np.array(st), np.array(sh), j * g.tau * g.h / g.lam)
