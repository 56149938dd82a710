"""Averaged large deviations for random walks in i.i.d. random environments.

The estimators work on regeneration cycles harvested from simulated walks;
the oracle module supplies exact reference values.
"""

from .environment import (
    EnvironmentLaw,
    NestlingLabel,
    TransitionKernel,
    annealed_site_moment,
    classify_nestling,
    deterministic_law,
    kernel_d1,
    local_drift,
    make_kernel,
    make_law,
)
from .errors import *  # noqa: F401,F403
from .lmgf import (
    LmgfEstimate,
    PsiEstimate,
    Region,
    RegionLabel,
    classify_theta,
    estimate_lmgf,
    grad_lambda,
    hessian_lambda,
    lambda_hat,
    psi_hat,
)
from .oracle import (
    cramer_closed_form,
    exact_annealed_expectation,
    finite_n_lambda,
    independent_steps_expectation,
    path_weight,
    solomon_velocity,
)
from .rate import (
    RatePoint,
    VelocityEstimate,
    invert_velocity,
    lln_velocity,
    nestling_boundary_probe,
    rate_at,
    rate_curve,
)
from .tilted import (
    CylinderFunction,
    TiltedEstimate,
    annealed_kernel_q,
    empirical_process,
    empirical_process_se,
    indicator_first_step,
    k_consistency_check,
    mean_drift_tilted,
    tilted_cylinder,
)
from .walk_sim import (
    CycleEnsemble,
    Path,
    RegenerationCycle,
    find_regenerations,
    harvest_cycles,
    load_ensemble,
    sample_walk,
    save_ensemble,
)

__version__ = "0.1.0"
