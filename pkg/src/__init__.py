"""
Boosted Decay Lab - decay of a moving unstable particle in the Lee model
"""

__version__ = "1.0.0"

from .errors import (
    LabError,
    ConfigurationError,
    DomainError,
    NumericError,
    ConstructionError,
    IllConditionedError,
    FitError,
)

from .kinematics import (
    BoostParams,
    MomentumGrid,
    SectorBasis,
    StateLabel,
    build_grid,
    compose_velocities,
    dispersion,
    enumerate_basis,
    gamma_factor,
    rapidity_from_velocity,
    velocity_from_momentum,
)

from .schemas import (
    ModelParams,
    RunConfig,
    AlgebraResiduals,
    DecayFit,
    CheckResult,
    ExperimentReport,
    load_config,
    parse_config,
)

from .operators import (
    HermitianOperator,
    StateVector,
    SpectralDecomposition,
    LeeModel,
    ParticleBoost,
    build_free_hamiltonian,
    build_interaction,
    build_momentum,
    build_free_boost,
    commutator,
    spectral,
    evolve,
    conjugate_by_boost,
    interaction_kernel,
)

from .boost import (
    BoostGenerator,
    build_boost_generator,
    build_interaction_boost_stencil,
    refine_boost_least_squares,
    algebra_residuals,
    verify_boost_identity,
    free_algebra_convergence,
    bch_series,
    span_decomposition,
    solve_coefficient_ode,
)

from .evolution import (
    AmplitudeSeries,
    make_psi_p,
    make_phi0,
    make_packet_phi0,
    amplitude_V,
    boosted_survival,
    survival_A,
    fit_decay,
    golden_rule_width,
    check_dilation,
    boosted_moments,
    mixture_amplitudes,
    mixture_experiment,
)

from .laboratory import DecayLab
from .reporting import write_report

__all__ = [
    "__version__",
    # Errors
    "LabError",
    "ConfigurationError",
    "DomainError",
    "NumericError",
    "ConstructionError",
    "IllConditionedError",
    "FitError",
    # Kinematics
    "BoostParams",
    "MomentumGrid",
    "SectorBasis",
    "StateLabel",
    "build_grid",
    "compose_velocities",
    "dispersion",
    "enumerate_basis",
    "gamma_factor",
    "rapidity_from_velocity",
    "velocity_from_momentum",
    # Schemas
    "ModelParams",
    "RunConfig",
    "AlgebraResiduals",
    "DecayFit",
    "CheckResult",
    "ExperimentReport",
    "load_config",
    "parse_config",
    # Operators
    "HermitianOperator",
    "StateVector",
    "SpectralDecomposition",
    "LeeModel",
    "ParticleBoost",
    "build_free_hamiltonian",
    "build_interaction",
    "build_momentum",
    "build_free_boost",
    "commutator",
    "spectral",
    "evolve",
    "conjugate_by_boost",
    "interaction_kernel",
    # Boost solver
    "BoostGenerator",
    "build_boost_generator",
    "build_interaction_boost_stencil",
    "refine_boost_least_squares",
    "algebra_residuals",
    "verify_boost_identity",
    "free_algebra_convergence",
    "bch_series",
    "span_decomposition",
    "solve_coefficient_ode",
    # Evolution
    "AmplitudeSeries",
    "make_psi_p",
    "make_phi0",
    "make_packet_phi0",
    "amplitude_V",
    "boosted_survival",
    "survival_A",
    "fit_decay",
    "golden_rule_width",
    "check_dilation",
    "boosted_moments",
    "mixture_amplitudes",
    "mixture_experiment",
    # Laboratory
    "DecayLab",
    "write_report",
]
