"""Self-similar interacting particle systems: transport of nonlocal PDE surrogates to fractals."""

from .experiments import ErrorReport, SweepSpec, fit_rate, galerkin_sweep, random_vs_deterministic, run_two_scale
from .ips import IpsSystem, Trajectory, integrate, sample_random_graph
from .kernels import KernelFamily, WeightMatrix, averaged_weights, make_kernel
from .reference import ReferenceProblem, TrigPoly
from .symbolic import IfsSpec, Partition, RateModel, sg_preset
from .transport import StepFunction, StepKernel, cell_averages, l2_error

__all__ = [
    "ErrorReport", "IfsSpec", "IpsSystem", "KernelFamily", "Partition", "RateModel", "ReferenceProblem",
    "StepFunction", "StepKernel", "SweepSpec", "Trajectory", "TrigPoly", "WeightMatrix", "averaged_weights",
    "cell_averages", "fit_rate", "galerkin_sweep", "integrate", "l2_error", "make_kernel",
    "random_vs_deterministic", "run_two_scale", "sample_random_graph", "sg_preset",
]
