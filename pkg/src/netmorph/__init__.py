"""Transport network formation: discrete adaptation, mesoscopic fields,
and Fisher-Rao minimizing movements, with a scenario-driven CLI."""

__version__ = "0.1.0"

from .adaptation import AdaptationParams, AdaptationRun, energy_discrete, simulate_adaptation
from .errors import (
    ConfigError,
    NetmorphError,
    NetmorphWarning,
    NumericalError,
)
from .fluxopt import FluxProblem, FluxResult, minimize_F, verify_tree_theorem
from .graph import Network, cycle_basis, random_connected_network, validate_network
from .grids import Grid, theta_quadrature
from .kirchhoff import kirchhoff_residual, pressures_from_tree_flux, solve_kirchhoff
from .meso import (
    ParticleEnsemble,
    simulate_monokinetic,
    simulate_particles,
    solve_poisson,
    stationary_1d,
    stationary_gamma_eq1,
    stationary_gamma_gt1,
)
from .mms import (
    MmsParams,
    beckmann_check,
    energy_pressureless,
    fisher_rao_distance,
    minimize_Q_given_C,
    mms_run,
)
from .scenarios import Scenario, load_scenario, run_scenario

__all__ = [
    "__version__",
    "AdaptationParams",
    "AdaptationRun",
    "ConfigError",
    "FluxProblem",
    "FluxResult",
    "Grid",
    "MmsParams",
    "NetmorphError",
    "NetmorphWarning",
    "Network",
    "NumericalError",
    "ParticleEnsemble",
    "Scenario",
    "beckmann_check",
    "cycle_basis",
    "energy_discrete",
    "energy_pressureless",
    "fisher_rao_distance",
    "kirchhoff_residual",
    "load_scenario",
    "minimize_F",
    "minimize_Q_given_C",
    "mms_run",
    "pressures_from_tree_flux",
    "random_connected_network",
    "run_scenario",
    "simulate_adaptation",
    "simulate_monokinetic",
    "simulate_particles",
    "solve_kirchhoff",
    "solve_poisson",
    "stationary_1d",
    "stationary_gamma_eq1",
    "stationary_gamma_gt1",
    "theta_quadrature",
    "validate_network",
    "verify_tree_theorem",
]
