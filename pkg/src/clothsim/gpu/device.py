"""Software compute device exposing the storage-buffer/compute-pass model.

This is the execution model the engine is written against: typed storage
buffers validated against device limits, sequentially ordered compute passes,
workgroup-grid dispatch arithmetic (with the per-dimension cap and automatic
2D folding), and integer atomics with order-independent semantics (see
fixedpoint.wrap_add_i32). Kernels themselves are vectorized numpy acting on
the buffer views; because every cross-thread reduction goes through integer
atomics, results are bit-identical regardless of how the work would have been
scheduled, which is the property the fixed-point design buys.

Adapter selection honors the CLOTHSIM_ADAPTER environment variable:
"software" (default) yields this device; "none" simulates a host without a
usable adapter and raises AdapterUnavailable (exit code 3 in the CLI).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .fixedpoint import wrap_add_i32
from .layout import BINDINGS, CapacityError, DeviceLimits

__all__ = [
    "ADAPTER_ENV",
    "AdapterUnavailable",
    "StorageBuffer",
    "DispatchGrid",
    "SoftwareDevice",
    "get_adapter",
]

ADAPTER_ENV = "CLOTHSIM_ADAPTER"


class AdapterUnavailable(RuntimeError):
    """No usable compute adapter for the requested backend."""


@dataclass
class StorageBuffer:
    """One bound buffer: a typed ndarray plus its binding metadata."""

    role: str
    binding: int
    array: np.ndarray

    @property
    def nbytes(self) -> int:
        return self.array.nbytes


class DispatchGrid:
    """Workgroup-grid arithmetic for one dispatch.

    invocations are laid out linearly; the grid is ceil(n / workgroup_size)
    workgroups, folded into (x, y) when x alone would exceed the per-dimension
    cap. padded_invocations is the count actually launched; the excess lanes
    are the ones a kernel's range guard must drop.
    """

    def __init__(self, invocations: int, workgroup_size: int, limits: DeviceLimits):
        if invocations < 0:
            raise ValueError("invocations must be >= 0")
        if not (1 <= workgroup_size <= limits.max_compute_invocations_per_workgroup):
            raise ValueError(
                f"workgroup size {workgroup_size} outside [1, "
                f"{limits.max_compute_invocations_per_workgroup}]"
            )
        self.invocations = invocations
        self.workgroup_size = workgroup_size
        groups = max(1, math.ceil(invocations / workgroup_size))
        cap = limits.max_compute_workgroups_per_dimension
        if groups <= cap:
            self.groups_x, self.groups_y = groups, 1
        else:
            self.groups_y = math.ceil(groups / cap)
            self.groups_x = cap
            if self.groups_y > cap:
                raise CapacityError(
                    f"dispatch of {groups} workgroups does not fit a 2D grid with "
                    f"per-dimension cap {cap}"
                )
        self.total_groups = self.groups_x * self.groups_y

    @property
    def padded_invocations(self) -> int:
        return self.total_groups * self.workgroup_size


class SoftwareDevice:
    """Deterministic in-process device honoring the buffer/dispatch limits."""

    def __init__(self, limits: DeviceLimits = None):
        self.limits = limits or DeviceLimits()
        self.buffers = {}
        self.pass_log = []

    # -- buffers ------------------------------------------------------------

    def create_buffer(self, role: str, dtype, count: int) -> StorageBuffer:
        """Allocate a zeroed buffer for a known role, enforcing the binding
        ceiling. Zero-count buffers are allocated with one element (zero-size
        bindings are invalid in the model) but keep logical length 0 via a view."""
        if role not in BINDINGS:
            raise KeyError(f"unknown buffer role '{role}'")
        binding, _stride = BINDINGS[role]
        alloc = max(count, 1)
        array = np.zeros(alloc, dtype=dtype)
        ceiling = min(
            self.limits.max_storage_buffer_binding_size, self.limits.max_buffer_size
        )
        if array.nbytes > ceiling:
            raise CapacityError(
                f"buffer '{role}' needs {array.nbytes} bytes, device ceiling is {ceiling}"
            )
        buf = StorageBuffer(role=role, binding=binding, array=array[:count])
        self.buffers[role] = buf
        return buf

    def upload(self, role: str, values: np.ndarray) -> None:
        buf = self.buffers[role]
        buf.array[...] = values

    def readback(self, role: str) -> np.ndarray:
        """Copy a buffer's contents back to the host."""
        return self.buffers[role].array.copy()

    # -- dispatch -----------------------------------------------------------

    def dispatch(self, name: str, invocations: int, workgroup_size: int, kernel, *args):
        """Run one compute pass: validate the dispatch grid, log it, execute.

        Passes submitted through here are ordered; each sees the writes of all
        previous passes (the model's pass-boundary guarantee).
        """
        grid = DispatchGrid(invocations, workgroup_size, self.limits)
        self.pass_log.append((name, grid.groups_x, grid.groups_y, invocations))
        return kernel(*args)

    # -- atomics ------------------------------------------------------------

    @staticmethod
    def atomic_add_i32(buffer_array: np.ndarray, flat_indices, values) -> None:
        wrap_add_i32(buffer_array, flat_indices, values)

    @staticmethod
    def atomic_store_zero(buffer_array: np.ndarray) -> None:
        buffer_array[...] = 0


def get_adapter(name: str = None, limits: DeviceLimits = None) -> SoftwareDevice:
    """Resolve the compute adapter, honoring CLOTHSIM_ADAPTER.

    "software" returns the in-process device; "none" raises
    AdapterUnavailable, which callers surface as a distinct exit code.
    """
    requested = (name or os.environ.get(ADAPTER_ENV, "software")).strip().lower()
    if requested == "software":
        return SoftwareDevice(limits)
    if requested == "none":
        raise AdapterUnavailable(
            "no compute adapter available (CLOTHSIM_ADAPTER=none); "
            "the cpu backend still works"
        )
    raise AdapterUnavailable(
        f"unknown adapter '{requested}'; supported values: software, none"
    )
