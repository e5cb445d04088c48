"""Weighted Wasserstein distances and gradient flows for variable-mobility diffusion."""

from .embedding import EmbeddingMap, MobilityField, build_embedding, verify_embedding
from .energy import EnergySpec, free_energy
from .errors import WassmobError
from .fpref import assemble_operator, run_reference
from .grid import Density, Grid
from .jko import JKOConfig, apriori_report, jko_step_entropic, run_jko
from .maps import map_1d_monotone, map_from_coupling
from .metric import cost_matrix, solve_kantorovich_exact, wa_distance_1d, wa_squared

__all__ = [
    "Density",
    "EmbeddingMap",
    "EnergySpec",
    "Grid",
    "JKOConfig",
    "MobilityField",
    "WassmobError",
    "apriori_report",
    "assemble_operator",
    "build_embedding",
    "cost_matrix",
    "free_energy",
    "jko_step_entropic",
    "map_1d_monotone",
    "map_from_coupling",
    "run_jko",
    "run_reference",
    "solve_kantorovich_exact",
    "verify_embedding",
    "wa_distance_1d",
    "wa_squared",
]
