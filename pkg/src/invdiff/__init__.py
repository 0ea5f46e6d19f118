"""Regularized inverse diffusion with non-negative group sparsity.

Kernel-bank diffusion operators, proximal operators, an accelerated proximal
gradient solver, a synthetic data generator and the detection / earth mover's
distance evaluation used to score recoveries.
"""

__version__ = "0.1.0"

from .tensorio import ImageGrid, PsdrStack, SigmaGrid, WeightMaps, tensor_read, tensor_write  # noqa: E402
from .diffop import KernelBank, adjoint, build_kernel_bank, forward, op_norm_sq  # noqa: E402
from .apg import SolveConfig, SolveLog, solve  # noqa: E402

__all__ = [
    "ImageGrid",
    "PsdrStack",
    "SigmaGrid",
    "WeightMaps",
    "tensor_read",
    "tensor_write",
    "KernelBank",
    "build_kernel_bank",
    "forward",
    "adjoint",
    "op_norm_sq",
    "SolveConfig",
    "SolveLog",
    "solve",
]
