"""Simulation and estimation toolkit for overdamped Langevin dynamics.

The package simulates dX = -grad(Psi)(X) dt + sigma dW, turns trajectory
panels into shuffled population snapshots, estimates (Psi, sigma^2) jointly
from either data setting, and quantifies when the two ingredients are
identifiable at all (stationary initializations are not).
"""

from .potentials import (
    PolynomialPotential,
    NamedPotential,
    multi_indices,
    gradient_basis,
    potential_from_dict,
)
from .sim import (
    LangevinModel,
    TrajectorySet,
    SnapshotSeries,
    SimulationDivergedError,
    UniformBox,
    GaussianInit,
    RademacherInit,
    DiracInit,
    GibbsInit,
    sample_initial,
    euler_maruyama_step,
    simulate,
    simulate_piecewise,
    shuffle_to_snapshots,
)
from .stationary import (
    GridDensity,
    gibbs_log_density,
    gibbs_grid_density,
    metropolis_sample,
    langevin_burn_in,
    rescaled_model,
    fp_residual,
    fp_operator_grid,
    energy_distance,
    two_sample_energy_test,
    stationarity_test,
    MixingWarning,
)
from .estimate import (
    Coupling,
    EstimationResult,
    RegimeSpec,
    AppexConfig,
    EstimationWarning,
    mle_from_trajectories,
    sinkhorn_coupling,
    appex_estimate,
    estimate_piecewise,
    result_to_model,
)
from .fisher import (
    FisherReport,
    drift_fisher_theoretical,
    diffusion_fisher_theoretical,
    empirical_score_variance,
    information_gap_estimate,
)
from .metrics import (
    grid_points,
    drift_mae,
    diffusivity_mae,
    cosine_similarity,
    cosine_similarity_detail,
    gibbs_eval_points,
    trend_flags,
)

__version__ = "0.1.0"
