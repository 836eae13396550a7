"""Routing a controllable vehicle fleet among selfish drivers.

Static traffic assignment with two classes: selfish drivers reach a Wardrop
user equilibrium while a centrally routed fleet minimises its own total time
or energy cost. The two are coupled by a leader/follower fixed point.
"""

from .costs import CostModel, CostParams, load_params
from .experiments import SweepSpec, emit_csv, price_of_anarchy, read_csv, run_sweep
from .network import (Link, Network, NetworkError, ODPair, RouteProbabilityMatrix, RouteSet,
                      braess_fixture, build_network, enumerate_routes, grid_network,
                      k_shortest_paths, parse_network_files)
from .plotting import emit_plot
from .so import SoConfig, SoObjective, solve_cd_cs_split, solve_so, system_optimum_oracle
from .stackelberg import EquilibriumConfig, solve_mixed
from .ue import UeConfig, solve_ue_msa, wardrop_gap

__all__ = [
    "CostModel", "CostParams", "load_params",
    "SweepSpec", "emit_csv", "price_of_anarchy", "read_csv", "run_sweep",
    "Link", "Network", "NetworkError", "ODPair", "RouteProbabilityMatrix", "RouteSet",
    "braess_fixture", "build_network", "enumerate_routes", "grid_network",
    "k_shortest_paths", "parse_network_files",
    "emit_plot",
    "SoConfig", "SoObjective", "solve_cd_cs_split", "solve_so", "system_optimum_oracle",
    "EquilibriumConfig", "solve_mixed",
    "UeConfig", "solve_ue_msa", "wardrop_gap",
]
