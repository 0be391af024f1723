"""sortflow: a sorting-based Lagrangian scheme for 1D isothermal viscous flow.

The state of the fluid is carried by a monotone staircase map X = identity + xi
on the unit circle together with a slaved momentum-like profile Z.  Each time
step drifts the parcels (predictor), adds a fixed mean-zero noise pattern in
place of a Brownian increment, and restores monotonicity by a periodic
rearrangement, i.e. a sort (corrector).  Everything else in the package exists
to feed, observe, or cross-check that loop.

Modules
-------
core       profiles, grids, norms, noise/forcing specs, initial data
kernels    the hot predictor/sort step, compiled + numpy twins
rearrange  periodic monotone rearrangement, inverses, pushforwards
scheme     time stepping, trajectories, Eulerian reconstruction
reference  independent oracles (spectral heat solution, parabolic solver)
analysis   convergence ladders, stability/consistency probes
cli        command-line front end with CSV/JSON output
"""

from .core import (
    ConfigurationError,
    ForcingSpec,
    InvalidInitialDataError,
    LagrangianState,
    MonotoneMap,
    NoiseSpec,
    NumericalAbortError,
    PeriodicProfile,
    SchemeConfig,
    SortflowError,
    lq_norm,
    modulus_of_continuity,
    sample_initial_data,
)
from .rearrange import (
    pseudo_inverse,
    pushforward_flux,
    pushforward_histogram,
    residue_multiset_equal,
    sort_periodic,
)
from .scheme import Trajectory, reconstruct_eulerian, run, step, theta_entropy

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ForcingSpec",
    "InvalidInitialDataError",
    "LagrangianState",
    "MonotoneMap",
    "NoiseSpec",
    "NumericalAbortError",
    "PeriodicProfile",
    "SchemeConfig",
    "SortflowError",
    "Trajectory",
    "lq_norm",
    "modulus_of_continuity",
    "pseudo_inverse",
    "pushforward_flux",
    "pushforward_histogram",
    "reconstruct_eulerian",
    "residue_multiset_equal",
    "run",
    "sample_initial_data",
    "sort_periodic",
    "step",
    "theta_entropy",
    "__version__",
]
