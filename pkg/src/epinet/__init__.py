"""Simulation, analysis and control of epidemics on directed networks."""

__version__ = "0.1.0"

from .allocation import (AllocationProblem, AllocationResult, allocate, brute_force_allocation,
                         check_threshold, decay_rate)
from .graph import Graph, SpectralResult, generate, lambda_max, load_edge_list, save_edge_list
from .meanfield import RateModel, Trajectory, endemic_equilibrium, integrate
from .optctrl import (PolicySchedule, PopulationControlProblem, SIRPatchingProblem, SISNetworkControlProblem,
                      fbs_population_sis, fbs_sir_network, fbs_sis_network)
from .stochastic import estimate_extinction_time, estimate_marginals, exact_master_equation, ssa_network

__all__ = [
    "AllocationProblem", "AllocationResult", "Graph", "PolicySchedule", "PopulationControlProblem",
    "RateModel", "SIRPatchingProblem", "SISNetworkControlProblem", "SpectralResult", "Trajectory",
    "allocate", "brute_force_allocation", "check_threshold", "decay_rate", "endemic_equilibrium",
    "estimate_extinction_time", "estimate_marginals", "exact_master_equation", "fbs_population_sis",
    "fbs_sir_network", "fbs_sis_network", "generate", "integrate", "lambda_max", "load_edge_list",
    "save_edge_list", "ssa_network",
]
