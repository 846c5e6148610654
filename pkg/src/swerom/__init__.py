"""Structure-preserving reduced-order models of the rotating shallow water equations.

Full-order models use centered differences on a periodic grid and the
energy-preserving AVF or the linearly implicit Kahan integrator. Reduced
models are POD-Galerkin, POD-DEIM (AVF) and tensorial POD (Kahan).
"""

from .deim_rom import PodDeimAVF
from .fom import Physics, SolverOptions, TimeSpec, avf_step, integrate, kahan_step
from .grid_ops import GridSpec, build_diff_ops, paper_initial_condition
from .pod import POD, compute_pod_basis
from .tensor_rom import TpodKahan

__version__ = "0.1.0"

__all__ = [
    "GridSpec",
    "Physics",
    "POD",
    "PodDeimAVF",
    "SolverOptions",
    "TimeSpec",
    "TpodKahan",
    "avf_step",
    "build_diff_ops",
    "compute_pod_basis",
    "integrate",
    "kahan_step",
    "paper_initial_condition",
]
