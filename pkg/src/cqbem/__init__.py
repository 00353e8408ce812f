"""Time-domain acoustic scattering in 2D by boundary elements and convolution quadrature.

The pieces fit together as::

    geometry  ->  assembly (V(s) per frequency)  ->  cq (all frequencies at once)
              ->  solver (density, field)  ->  estimator  ->  adaptive

``experiments`` drives convergence studies and writes CSV tables.
"""

from .adaptive import AdaptiveConfig, AdaptiveTrace, adaptive_loop, doerfler_mark, mark
from .assembly import SingleLayer, assemble_single_layer, evaluate_potential
from .cq import ButcherTableau, CQError, CQScheme, StageSeries, radau_iia, solve_cq
from .estimator import compute_residual, energy_error, energy_norm, global_estimate, indicators
from .experiments import ExperimentConfig, load_config
from .geometry import GeometrySpec, Mesh, build_mesh, graded_mesh, refine
from .kernels import bessel_k0, green2d
from .solver import IncidentWave, ScatteringProblem, evaluate_field, solve_density

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig",
    "AdaptiveTrace",
    "ButcherTableau",
    "CQError",
    "CQScheme",
    "ExperimentConfig",
    "GeometrySpec",
    "IncidentWave",
    "Mesh",
    "ScatteringProblem",
    "SingleLayer",
    "StageSeries",
    "adaptive_loop",
    "assemble_single_layer",
    "bessel_k0",
    "build_mesh",
    "compute_residual",
    "doerfler_mark",
    "energy_error",
    "energy_norm",
    "evaluate_field",
    "evaluate_potential",
    "global_estimate",
    "graded_mesh",
    "green2d",
    "indicators",
    "load_config",
    "mark",
    "radau_iia",
    "refine",
    "solve_cq",
    "solve_density",
]
