"""Deterministic compute engine for the cloth pipeline.

The engine targets the storage-buffer/compute-pass execution model; the
in-process software device (device.SoftwareDevice) executes the kernels with
the same float32 arithmetic and integer-atomic accumulation the shader sources
under shaders/ describe, so results are bit-reproducible run to run and
independent of accumulation order.
"""

from .device import ADAPTER_ENV, AdapterUnavailable, DispatchGrid, SoftwareDevice, get_adapter
from .engine import Engine, StepResult, build_pipeline, step_gpu
from .fixedpoint import FIXED_SATURATION, FixedPointVec3, decode_values, encode_values
from .layout import (
    BINDINGS,
    CapacityError,
    DeviceLimits,
    GpuBufferLayout,
    ProbeReport,
    grid_layout,
    max_nodes_probe,
)

__all__ = [
    "ADAPTER_ENV",
    "AdapterUnavailable",
    "DispatchGrid",
    "SoftwareDevice",
    "get_adapter",
    "Engine",
    "StepResult",
    "build_pipeline",
    "step_gpu",
    "FIXED_SATURATION",
    "FixedPointVec3",
    "decode_values",
    "encode_values",
    "BINDINGS",
    "CapacityError",
    "DeviceLimits",
    "GpuBufferLayout",
    "ProbeReport",
    "grid_layout",
    "max_nodes_probe",
]
