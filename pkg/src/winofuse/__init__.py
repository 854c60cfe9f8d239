"""winofuse: cache-fused Winograd convolution engines for CPUs.

The package provides three interchangeable convolution engines (a direct
oracle, a staged pipeline, and a cache-fused task pipeline), the exact
transform-basis generator behind them, a roofline planner for the fusion
parameter R, and a benchmarking CLI.
"""

from .basis import WinogradBasis, default_points, make_basis
from .bench import (BUILTIN_SUITES, BenchResult, builtin_suite, emit_report,
                    max_rel_error, run_suite)
from .engines import (ENGINE_KINDS, BufferLayout, ConvStats, EngineConfig,
                      SharedBuffer, buffer_layout, conv_direct, conv_fused,
                      conv_three_stage, run_engine)
from .errors import (BasisConstructionError, IntermediateAllocationError,
                     InvalidDimensionError, InvalidParameterError,
                     MachineModelError, ShapeMismatchError, WinofuseError)
from .roofline import (MachineModel, PlanReport, ai_l3, ai_mem,
                       ai_mem_lower_bound, l2_element_budget, l3_fit, plan,
                       r_lower_bound, r_upper_bound, sample_model_path)
from .tensor import (LayerSpec, Tensor4D, new_tensor, output_dims,
                     output_tensor_dims)
from .tiling import TileCoord, TilePlan, gather_input_tile, plan as tile_plan
from .tiling import scatter_output_tile
from .transforms import (KernelPack, LeftHandBlock, forward_transform_tiles,
                         inverse_transform_tiles, multiply_block,
                         multiply_flops, transform_kernels)

__version__ = "0.1.0"

__all__ = [
    "WinogradBasis", "default_points", "make_basis",
    "BUILTIN_SUITES", "BenchResult", "builtin_suite", "emit_report",
    "max_rel_error", "run_suite",
    "ENGINE_KINDS", "BufferLayout", "ConvStats", "EngineConfig",
    "SharedBuffer", "buffer_layout", "conv_direct", "conv_fused",
    "conv_three_stage", "run_engine",
    "BasisConstructionError", "IntermediateAllocationError",
    "InvalidDimensionError", "InvalidParameterError", "MachineModelError",
    "ShapeMismatchError", "WinofuseError",
    "MachineModel", "PlanReport", "ai_l3", "ai_mem", "ai_mem_lower_bound",
    "l2_element_budget", "l3_fit", "plan", "r_lower_bound", "r_upper_bound",
    "sample_model_path",
    "LayerSpec", "Tensor4D", "new_tensor", "output_dims",
    "output_tensor_dims",
    "TileCoord", "TilePlan", "gather_input_tile", "scatter_output_tile",
    "tile_plan",
    "KernelPack", "LeftHandBlock", "forward_transform_tiles",
    "inverse_transform_tiles", "multiply_block", "multiply_flops",
    "transform_kernels",
    "__version__",
]
