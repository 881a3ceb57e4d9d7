"""Integrators for separable Hamiltonian systems with additive noise.

The expected energy of such a system drifts linearly in time at rate
tr(Sigma^T Sigma)/2; the drift-preserving scheme implemented here reproduces
that law exactly at every grid time.  The package also provides comparator
schemes, Monte Carlo / multilevel Monte Carlo estimators with level-coupled
paths, and deterministic verification oracles (conditional-expectation
quadrature, exact affine moment recursions, convergence-order fits).
"""

from ._version import __version__
from .model import (
    BrownianPath,
    HamiltonianProblem,
    PhaseState,
    RandomSource,
    TimeGrid,
    coarsen,
    energy,
    energy_batch,
    refine,
    sample_path,
    stream_generator,
)
from .integrators import (
    SchemeId,
    SolverConfig,
    SolverDiverged,
    StepRecord,
    avf_integral,
    bem_step,
    dp_step,
    em_step,
    evolve,
    integrate,
    split_step,
    step_batch,
    stm_step,
    symp_step,
    trajectory_energies,
)
from .problems import (
    OscillatorMoments,
    PROBLEM_NAMES,
    make_problem,
    moments_energy,
    oscillator_exact_moments,
)
from .estimators import (
    EstimatorReport,
    LevelStats,
    McConfig,
    MlmcConfig,
    mc_estimate,
    mlmc_estimate,
    mlmc_sample_sizes,
)
from .verification import (
    AffineSchemeMatrices,
    SlopeFit,
    affine_moment_history,
    affine_moment_recursion,
    conditional_energy_drift,
    extract_affine,
    fit_order,
)
from .experiments import (
    ExperimentConfig,
    config_from_csv_header,
    run_experiment,
)

__all__ = [
    "__version__",
    "BrownianPath",
    "HamiltonianProblem",
    "PhaseState",
    "RandomSource",
    "TimeGrid",
    "coarsen",
    "energy",
    "energy_batch",
    "refine",
    "sample_path",
    "stream_generator",
    "SchemeId",
    "SolverConfig",
    "SolverDiverged",
    "StepRecord",
    "avf_integral",
    "bem_step",
    "dp_step",
    "em_step",
    "evolve",
    "integrate",
    "split_step",
    "step_batch",
    "stm_step",
    "symp_step",
    "trajectory_energies",
    "OscillatorMoments",
    "PROBLEM_NAMES",
    "make_problem",
    "moments_energy",
    "oscillator_exact_moments",
    "EstimatorReport",
    "LevelStats",
    "McConfig",
    "MlmcConfig",
    "mc_estimate",
    "mlmc_estimate",
    "mlmc_sample_sizes",
    "AffineSchemeMatrices",
    "SlopeFit",
    "affine_moment_history",
    "affine_moment_recursion",
    "conditional_energy_drift",
    "extract_affine",
    "fit_order",
    "ExperimentConfig",
    "config_from_csv_header",
    "run_experiment",
]
