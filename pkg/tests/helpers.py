import numpy as np

from latticekam import ScalarField, build_grid


def random_level_field(grid, k, rng, scale=1.0):
    """Smooth-ish random field on the sublattice of level k."""
    par = grid.level_parity(k)
    x = grid.coords(grid.parity_index(par))
    vals = np.zeros(len(x))
    for _ in range(3):
        w = rng.integers(-2, 3, size=grid.d)
        vals += rng.normal() * np.cos(2 * np.pi * (x @ w) + rng.uniform(0, 2 * np.pi))
    return ScalarField.from_sublattice(grid, par, scale * vals / max(np.abs(vals).max(), 1e-12))


def small_grid(d):
    return build_grid(1, 4, 8) if d == 1 else build_grid(2, 2, 4)
