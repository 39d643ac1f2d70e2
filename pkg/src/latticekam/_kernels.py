"""Hot lattice loops with a numba path and a pure-numpy fallback.

Set LATTICEKAM_DISABLE_NUMBA=1 to force the numpy implementations (they are
also used when numba cannot be imported).  Both paths perform the same
floating-point operations in the same order per node, so results agree to
rounding.
"""

from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("LATTICEKAM_DISABLE_NUMBA", "").strip() not in ("", "0"):
        raise ImportError("disabled by LATTICEKAM_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# numpy implementations
# --------------------------------------------------------------------------


def _advance_quadratic_np(f, targets, tpar, nb, Vtab, c, tau, h, sign, store):
    """Run len(tpar) steps of v' = mean(v[nb]) + sign*tau*(|c + D v|^2/2 + V).

    ``f`` holds a full-cube level; ``targets[p]`` are the nodes of parity p;
    ``Vtab[j]`` is V at ``targets[tpar[j]]`` for step j.
    """
    steps = tpar.shape[0]
    n, two_d = nb.shape
    d = two_d // 2
    f = f.copy()
    levels = np.empty((steps + 1 if store else 1, n))
    levels[0] = f
    slope = np.empty(steps)
    hp = np.empty(steps)
    inv2h = 1.0 / (2.0 * h)
    for j in range(steps):
        idx = targets[tpar[j]]
        vals = f[nb[idx]]
        D = (vals[:, 0::2] - vals[:, 1::2]) * inv2h
        q = c + D
        H = 0.5 * np.sum(q * q, axis=1) + Vtab[j]
        new = np.zeros(n)
        new[idx] = vals.sum(axis=1) / two_d + sign * tau * H
        slope[j] = np.max(np.abs(D)) if d else 0.0
        hp[j] = np.max(np.abs(q))
        f = new
        if store:
            levels[j + 1] = f
    return f, levels, slope, hp


def _propagate_np(p, src, nb, rho):
    """One walk step: mass at src[i] moves to nb[src[i], j] with prob rho[i, j]."""
    out = np.bincount(nb[src].ravel(), weights=(p[src][:, None] * rho).ravel(), minlength=p.shape[0])
    return out


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _advance_quadratic_nb(f, targets, tpar, nb, Vtab, c, tau, h, sign, store):
        steps = tpar.shape[0]
        n, two_d = nb.shape
        d = two_d // 2
        f = f.copy()
        levels = np.empty((steps + 1 if store else 1, n))
        levels[0] = f
        slope = np.zeros(steps)
        hp = np.zeros(steps)
        inv2h = 1.0 / (2.0 * h)
        for j in range(steps):
            idx = targets[tpar[j]]
            new = np.zeros(n)
            smax = 0.0
            qmax = 0.0
            for a in range(idx.shape[0]):
                m = idx[a]
                tot = 0.0
                for b in range(two_d):
                    tot += f[nb[m, b]]
                sq = 0.0
                for i in range(d):
                    D = (f[nb[m, 2 * i]] - f[nb[m, 2 * i + 1]]) * inv2h
                    q = c[i] + D
                    sq += q * q
                    if abs(D) > smax:
                        smax = abs(D)
                    if abs(q) > qmax:
                        qmax = abs(q)
                new[m] = tot / two_d + sign * tau * (0.5 * sq + Vtab[j, a])
            slope[j] = smax
            hp[j] = qmax
            f = new
            if store:
                levels[j + 1] = f
        return f, levels, slope, hp

    @njit(cache=True)
    def _propagate_nb(p, src, nb, rho):
        out = np.zeros(p.shape[0])
        two_d = nb.shape[1]
        for a in range(src.shape[0]):
            m = src[a]
            pm = p[m]
            if pm == 0.0:
                continue
            for b in range(two_d):
                out[nb[m, b]] += pm * rho[a, b]
        return out

    advance_quadratic = _advance_quadratic_nb
    propagate = _propagate_nb
else:
    advance_quadratic = _advance_quadratic_np
    propagate = _propagate_np


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
