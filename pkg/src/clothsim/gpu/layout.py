"""Buffer layout, binding table, and capacity arithmetic for the compute engine.

The engine speaks the WebGPU storage-buffer model: every logical buffer has a
fixed binding index, an element stride in bytes, and a byte size that must fit
under the device's per-binding ceiling (128 MiB by default, the classic
maxStorageBufferBindingSize). Real-valued per-node data is stored as flat f32
triplets (stride 12, no padding), which sidesteps the 16-byte alignment rule
that applies to vec3 *struct members*; the spring table is an interleaved
32-byte struct (power-of-two stride, per-spring coefficients baked in so the
kernel never branches on spring family).

Binding table (group 0):

    binding  role                    stride  count
    -------  ----------------------  ------  --------------------------
       0     paramsUniform              80   1 (uniform struct)
       1     positions                  12   nodes (f32 x,y,z)
       2     previousPositions          12   nodes
       3     velocities                 12   nodes
       4     forcesFixedPoint           12   nodes (atomic i32 x,y,z)
       5     inverseMasses               4   nodes (f32; 0 marks pinned)
       6     externalAccel              12   nodes (f32 x,y,z)
       7     springTable                32   springs (see SPRING_DTYPE)
       8     triangleTable              12   cloth triangles (u32 x3)
       9     clothEdgeTable              8   unique cloth edges (u32 x2)
      10     obstacleVertices           48   obstacle triangles (v0,v1,v2,n)
      11     hitCounter                  4   1 (atomic i32)
      12     responseAccumulator        12   nodes (atomic i32 x,y,z)
      13     responseCount               4   nodes (atomic i32)
      14     vertexNormals              12   nodes (f32 x,y,z)
      15     normalIncidenceOffsets      4   nodes + 1 (u32, CSR)
      16     normalIncidenceTris         4   3 * cloth triangles (u32, CSR)

The WGSL sources under gpu/shaders/ declare subsets of this table with the
same indices; a test parses them to keep the two in sync.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import spring_count_formula

__all__ = [
    "DeviceLimits",
    "CapacityError",
    "BufferSpec",
    "GpuBufferLayout",
    "ProbeReport",
    "BINDINGS",
    "PARAMS_UNIFORM_SIZE",
    "SPRING_DTYPE",
    "grid_layout",
    "cloth_edge_count",
    "cloth_triangle_count",
    "max_nodes_probe",
]

PARAMS_UNIFORM_SIZE = 80

SPRING_DTYPE = np.dtype(
    [
        ("index_a", "<u4"),
        ("index_b", "<u4"),
        ("rest_length", "<f4"),
        ("stiffness", "<f4"),
        ("damping", "<f4"),
        ("kind", "<u4"),
        ("pad0", "<u4"),
        ("pad1", "<u4"),
    ]
)
assert SPRING_DTYPE.itemsize == 32

# role -> (binding index, stride in bytes)
BINDINGS = {
    "paramsUniform": (0, PARAMS_UNIFORM_SIZE),
    "positions": (1, 12),
    "previousPositions": (2, 12),
    "velocities": (3, 12),
    "forcesFixedPoint": (4, 12),
    "inverseMasses": (5, 4),
    "externalAccel": (6, 12),
    "springTable": (7, SPRING_DTYPE.itemsize),
    "triangleTable": (8, 12),
    "clothEdgeTable": (9, 8),
    "obstacleVertices": (10, 48),
    "hitCounter": (11, 4),
    "responseAccumulator": (12, 12),
    "responseCount": (13, 4),
    "vertexNormals": (14, 12),
    "normalIncidenceOffsets": (15, 4),
    "normalIncidenceTris": (16, 4),
}


class CapacityError(RuntimeError):
    """A buffer would exceed a device limit; message carries the diagnosis."""


@dataclass(frozen=True)
class DeviceLimits:
    """The subset of device limits the engine cares about.

    Defaults follow the WebGPU base limits: 128 MiB per storage binding,
    256 MiB per buffer, 65535 workgroups per dispatch dimension.
    """

    max_storage_buffer_binding_size: int = 128 * 1024 * 1024
    max_buffer_size: int = 256 * 1024 * 1024
    max_compute_workgroups_per_dimension: int = 65535
    max_compute_invocations_per_workgroup: int = 256


@dataclass(frozen=True)
class BufferSpec:
    role: str
    binding: int
    stride: int
    count: int

    @property
    def nbytes(self) -> int:
        return self.stride * self.count


def cloth_triangle_count(nx: int, ny: int) -> int:
    return 2 * (nx - 1) * (ny - 1)


def cloth_edge_count(nx: int, ny: int) -> int:
    """Unique undirected edges of the grid triangulation: axis-aligned grid
    edges plus one diagonal per cell."""
    return nx * (ny - 1) + ny * (nx - 1) + (nx - 1) * (ny - 1)


@dataclass(frozen=True)
class GpuBufferLayout:
    """Byte-exact buffer plan for one cloth/obstacle configuration."""

    num_nodes: int
    num_springs: int
    num_cloth_tris: int
    num_cloth_edges: int
    num_obstacle_tris: int
    specs: tuple = field(default=None)

    def __post_init__(self):
        counts = {
            "paramsUniform": 1,
            "positions": self.num_nodes,
            "previousPositions": self.num_nodes,
            "velocities": self.num_nodes,
            "forcesFixedPoint": self.num_nodes,
            "inverseMasses": self.num_nodes,
            "externalAccel": self.num_nodes,
            "springTable": self.num_springs,
            "triangleTable": self.num_cloth_tris,
            "clothEdgeTable": self.num_cloth_edges,
            "obstacleVertices": self.num_obstacle_tris,
            "hitCounter": 1,
            "responseAccumulator": self.num_nodes,
            "responseCount": self.num_nodes,
            "vertexNormals": self.num_nodes,
            "normalIncidenceOffsets": self.num_nodes + 1,
            "normalIncidenceTris": 3 * self.num_cloth_tris,
        }
        specs = tuple(
            BufferSpec(role=role, binding=BINDINGS[role][0], stride=BINDINGS[role][1], count=counts[role])
            for role in BINDINGS
        )
        object.__setattr__(self, "specs", specs)

    def spec(self, role: str) -> BufferSpec:
        for s in self.specs:
            if s.role == role:
                return s
        raise KeyError(role)

    def binding_bytes(self) -> dict:
        return {s.role: s.nbytes for s in self.specs}

    @property
    def total_bytes(self) -> int:
        return sum(s.nbytes for s in self.specs)

    def largest_binding(self) -> BufferSpec:
        return max(self.specs, key=lambda s: s.nbytes)

    def validate(self, limits: DeviceLimits) -> None:
        """Raise CapacityError if any single binding exceeds the device
        ceiling (the tighter of binding and buffer size limits)."""
        ceiling = min(limits.max_storage_buffer_binding_size, limits.max_buffer_size)
        for s in self.specs:
            if s.nbytes > ceiling:
                raise CapacityError(
                    f"buffer '{s.role}' needs {s.nbytes} bytes "
                    f"({s.count} x {s.stride} B) but the device ceiling is {ceiling} bytes; "
                    f"largest grid that fits: {max_nodes_probe(limits, self.num_obstacle_tris).max_nodes} nodes"
                )


def grid_layout(nx: int, ny: int, num_obstacle_tris: int = 0) -> GpuBufferLayout:
    """Layout for an nx x ny cloth grid via the closed-form census (no mesh
    is built, so this is cheap enough to binary-search with)."""
    structural, shear, bend = spring_count_formula(nx, ny)
    return GpuBufferLayout(
        num_nodes=nx * ny,
        num_springs=structural + shear + bend,
        num_cloth_tris=cloth_triangle_count(nx, ny),
        num_cloth_edges=cloth_edge_count(nx, ny),
        num_obstacle_tris=num_obstacle_tris,
    )


@dataclass(frozen=True)
class ProbeReport:
    """Result of the capacity probe: the largest square grid that fits."""

    max_nodes: int
    max_side: int
    limiting_role: str
    limiting_bytes: int
    per_binding_bytes: dict
    total_bytes: int
    binding_ceiling: int
    max_buffer_size: int
    note: str = ""


def _grid_fits(n: int, limits: DeviceLimits, num_obstacle_tris: int) -> bool:
    ceiling = min(limits.max_storage_buffer_binding_size, limits.max_buffer_size)
    layout = grid_layout(n, n, num_obstacle_tris)
    return all(s.nbytes <= ceiling for s in layout.specs)


def max_nodes_probe(limits: DeviceLimits = None, num_obstacle_tris: int = 0) -> ProbeReport:
    """Binary-search the largest square cloth grid whose layout fits the
    device limits, and report which binding is the bottleneck.

    The answer is pure layout arithmetic; nothing is allocated. A ceiling too
    small for even a 2x2 cloth reports zero nodes with a diagnostic note.
    """
    if limits is None:
        limits = DeviceLimits()
    ceiling = min(limits.max_storage_buffer_binding_size, limits.max_buffer_size)

    if not _grid_fits(2, limits, num_obstacle_tris):
        layout = grid_layout(2, 2, num_obstacle_tris)
        worst = layout.largest_binding()
        return ProbeReport(
            max_nodes=0,
            max_side=0,
            limiting_role=worst.role,
            limiting_bytes=worst.nbytes,
            per_binding_bytes=layout.binding_bytes(),
            total_bytes=layout.total_bytes,
            binding_ceiling=ceiling,
            max_buffer_size=limits.max_buffer_size,
            note=(
                f"ceiling {ceiling} B cannot hold even a 2x2 cloth "
                f"(needs {worst.nbytes} B for '{worst.role}')"
            ),
        )

    lo = 2  # known to fit
    hi = 4
    while _grid_fits(hi, limits, num_obstacle_tris):
        lo = hi
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _grid_fits(mid, limits, num_obstacle_tris):
            lo = mid
        else:
            hi = mid

    layout = grid_layout(lo, lo, num_obstacle_tris)
    worst = layout.largest_binding()
    over = [
        s.role
        for s in grid_layout(lo + 1, lo + 1, num_obstacle_tris).specs
        if s.nbytes > ceiling
    ]
    return ProbeReport(
        max_nodes=lo * lo,
        max_side=lo,
        limiting_role=worst.role,
        limiting_bytes=worst.nbytes,
        per_binding_bytes=layout.binding_bytes(),
        total_bytes=layout.total_bytes,
        binding_ceiling=ceiling,
        max_buffer_size=limits.max_buffer_size,
        note=(
            f"side {lo} fits; side {lo + 1} exceeds the ceiling via {', '.join(over)}"
        ),
    )
