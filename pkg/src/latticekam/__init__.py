"""Discrete weak KAM theory on staggered space-time lattices."""

from ._kernels import backend
from .errors import *  # noqa: F401,F403
from .grid import (
    GridSpec,
    LipschitzInterpolant,
    Parity,
    ScalarField,
    VectorField,
    build_grid,
    discrete_dt,
    discrete_dx,
    lipschitz_interpolate,
    neighbor_mean,
    random_field,
    second_difference,
)
from .hj import (
    IvpSolution,
    minimizing_control_field,
    scheme_residual,
    semiconcavity_monitor,
    solve_ivp,
    step_backward_scheme,
    step_forward_scheme,
    time_one_map,
)
from .mather import (
    AubrySet,
    MatherApproximation,
    OccupationMeasure,
    aubry_set,
    holonomic_check,
    mather_measure,
    occupation_measure,
    rotation_vector,
    uniqueness_on_mather_set,
)
from .models import (
    CallableModel,
    HamiltonianModel,
    MechanicalModel,
    SchemeBounds,
    builtin_model,
    compute_bounds,
    validate_step_sizes,
)
from .oracle import brute_force_step_value, cell_problem_1d, enumerate_paths_value, fd_gradient
from .walk import (
    ControlPolicy,
    NodeDistribution,
    action_functional,
    averaged_path,
    propagate_distribution,
    sample_paths,
    transition_probs,
    variance_diagnostic,
)
from .weakkam import (
    EffectiveSurface,
    PeriodicSolution,
    effective_surface,
    estimate_effective_hamiltonian,
    find_periodic_solution,
    long_time_convergence,
    scaling_study,
)

__version__ = "0.1.0"
