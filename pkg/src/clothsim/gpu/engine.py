"""Compute-pipeline engine: buffer construction, pass sequencing, readback.

build_pipeline validates the buffer layout against device limits before
allocating anything, bakes the cloth and obstacle into storage buffers, and
returns an Engine whose step() submits the frame's passes in order:

    (zero_forces -> spring_force -> integrate) x substeps
    -> detect_cloth_edges -> detect_obstacle_edges -> respond   (with obstacle)
    -> normal_update

Verification-style callers pass readback=True to get positions back every
frame; benchmark callers leave it off and read nothing per frame (hit counts
come from pass results, not buffer readbacks). debug=True additionally
captures mid-frame buffer snapshots for the ordering checks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..collision import DEFAULT_PAIR_BUDGET, CollisionBudgetError
from ..mesh import ClothMesh, SimParams, TriangleMesh, unique_edges
from .device import SoftwareDevice, get_adapter
from .fixedpoint import encode_values
from .kernels import (
    kernel_detect_cloth_edges,
    kernel_detect_obstacle_edges,
    kernel_integrate,
    kernel_normal_update,
    kernel_respond,
    kernel_spring_force,
    kernel_zero_forces,
    segment_boxes,
    triangle_boxes,
)
from .layout import PARAMS_UNIFORM_SIZE, SPRING_DTYPE, GpuBufferLayout, max_nodes_probe

__all__ = ["Engine", "StepResult", "build_pipeline", "step_gpu", "max_nodes_probe"]

_F32 = np.float32

FLAG_EXPLICIT_EULER = 1
FLAG_AVERAGE_RESPONSE = 2


@dataclass
class KernelParams:
    """Float32 view of SimParams plus baked counts, handed to every kernel."""

    dt: np.float32
    gravity: np.ndarray
    damping: np.float32
    epsilon_mt: np.float32
    response_margin: np.float32
    fixed_point_scale: int
    explicit_euler: bool
    average_response: bool


class PipelineBuffers:
    """Typed views over the device buffers plus cached index arrays."""

    def __init__(self):
        self.pos = None
        self.prev = None
        self.vel = None
        self.forces = None
        self.inv_mass = None
        self.ext_accel = None
        self.springs = None
        self.spring_a = None
        self.spring_b = None
        self.spring_a3 = None
        self.spring_b3 = None
        self.tris = None
        self.edges = None
        self.obstacle_corners = None
        self.obstacle_normals = None
        self.num_obstacle_tris = 0
        # Static filter-box caches for the detect kernels (host-side, derived
        # from obstacleVertices; the obstacle never moves).
        self.obstacle_tri_lo = None
        self.obstacle_tri_hi = None
        self.obstacle_edge_start = None
        self.obstacle_edge_end = None
        self.obstacle_edge_lo = None
        self.obstacle_edge_hi = None
        self.hit_counter = None
        self.resp_acc = None
        self.resp_count = None
        self.normals = None
        self.inc_offsets = None
        self.inc_tris = None
        self.inc_degrees = None


@dataclass
class StepResult:
    hits: int = 0
    responded: int = 0
    positions: np.ndarray = None
    debug: dict = field(default_factory=dict)


class Engine:
    """A built pipeline bound to one cloth/obstacle/params configuration."""

    def __init__(
        self,
        mesh: ClothMesh,
        obstacle: TriangleMesh = None,
        params: SimParams = None,
        device: SoftwareDevice = None,
        pair_budget: int = DEFAULT_PAIR_BUDGET,
    ):
        self.mesh = mesh
        self.obstacle = obstacle
        self.params = params or SimParams()
        self.device = device or get_adapter()
        self.pair_budget = pair_budget

        n = mesh.num_nodes
        edges = unique_edges(mesh.triangles)
        n_obs = obstacle.num_triangles if obstacle is not None else 0
        self.layout = GpuBufferLayout(
            num_nodes=n,
            num_springs=mesh.num_springs,
            num_cloth_tris=len(mesh.triangles),
            num_cloth_edges=len(edges),
            num_obstacle_tris=n_obs,
        )
        self.layout.validate(self.device.limits)

        self.pairs_per_frame = len(edges) * n_obs + 3 * n_obs * len(mesh.triangles)
        if self.pairs_per_frame > pair_budget:
            raise CollisionBudgetError(
                f"frame needs {self.pairs_per_frame} edge-triangle tests, "
                f"budget is {pair_budget}; raise the budget or reduce resolution"
            )

        self._allocate(edges)
        self._upload_static()
        self.kparams = self._make_kernel_params()
        self.frame_count = 0

    # -- construction --------------------------------------------------------

    def _allocate(self, edges: np.ndarray) -> None:
        dev = self.device
        lay = self.layout
        n = lay.num_nodes
        b = PipelineBuffers()

        dev.create_buffer("paramsUniform", np.uint8, PARAMS_UNIFORM_SIZE)
        b.pos = dev.create_buffer("positions", _F32, 3 * n).array.reshape(n, 3)
        b.prev = dev.create_buffer("previousPositions", _F32, 3 * n).array.reshape(n, 3)
        b.vel = dev.create_buffer("velocities", _F32, 3 * n).array.reshape(n, 3)
        b.forces = dev.create_buffer("forcesFixedPoint", np.int32, 3 * n).array.reshape(n, 3)
        b.inv_mass = dev.create_buffer("inverseMasses", _F32, n).array
        b.ext_accel = dev.create_buffer("externalAccel", _F32, 3 * n).array.reshape(n, 3)
        b.springs = dev.create_buffer("springTable", SPRING_DTYPE, lay.num_springs).array
        b.tris = dev.create_buffer(
            "triangleTable", np.uint32, 3 * lay.num_cloth_tris
        ).array.reshape(lay.num_cloth_tris, 3)
        b.edges = dev.create_buffer(
            "clothEdgeTable", np.uint32, 2 * lay.num_cloth_edges
        ).array.reshape(lay.num_cloth_edges, 2)
        obs = dev.create_buffer("obstacleVertices", _F32, 12 * lay.num_obstacle_tris).array
        baked = obs.reshape(lay.num_obstacle_tris, 4, 3) if lay.num_obstacle_tris else obs.reshape(0, 4, 3)
        b.obstacle_corners = baked[:, :3, :]
        b.obstacle_normals = baked[:, 3, :]
        b.num_obstacle_tris = lay.num_obstacle_tris
        b.hit_counter = dev.create_buffer("hitCounter", np.int32, 1).array
        b.resp_acc = dev.create_buffer("responseAccumulator", np.int32, 3 * n).array.reshape(n, 3)
        b.resp_count = dev.create_buffer("responseCount", np.int32, n).array
        b.normals = dev.create_buffer("vertexNormals", _F32, 3 * n).array.reshape(n, 3)
        b.inc_offsets = dev.create_buffer("normalIncidenceOffsets", np.uint32, n + 1).array
        b.inc_tris = dev.create_buffer(
            "normalIncidenceTris", np.uint32, 3 * lay.num_cloth_tris
        ).array

        b.spring_a = self.mesh.spring_indices[:, 0].astype(np.int64)
        b.spring_b = self.mesh.spring_indices[:, 1].astype(np.int64)
        lanes = np.arange(3, dtype=np.int64)[None, :]
        b.spring_a3 = (b.spring_a[:, None] * 3 + lanes).ravel()
        b.spring_b3 = (b.spring_b[:, None] * 3 + lanes).ravel()
        self._edge_array = edges
        self.buffers = b

    def _upload_static(self) -> None:
        mesh = self.mesh
        params = self.params
        b = self.buffers
        n = mesh.num_nodes

        b.pos[...] = mesh.positions.astype(_F32)
        b.prev[...] = b.pos
        inv = np.where(mesh.pinned, 0.0, 1.0 / mesh.masses)
        b.inv_mass[...] = inv.astype(_F32)

        table = b.springs
        table["index_a"] = mesh.spring_indices[:, 0].astype(np.uint32)
        table["index_b"] = mesh.spring_indices[:, 1].astype(np.uint32)
        table["rest_length"] = mesh.spring_rest_lengths.astype(_F32)
        stiffness = np.asarray(params.stiffness, dtype=np.float64)[mesh.spring_kinds]
        table["stiffness"] = stiffness.astype(_F32)
        table["damping"] = np.full(mesh.num_springs, params.damping, dtype=_F32)
        table["kind"] = mesh.spring_kinds.astype(np.uint32)
        table["pad0"] = 0
        table["pad1"] = 0

        b.tris[...] = mesh.triangles.astype(np.uint32)
        b.edges[...] = self._edge_array.astype(np.uint32)

        if self.obstacle is not None and self.obstacle.num_triangles:
            tri = self.obstacle.triangles
            corners = self.obstacle.vertices[tri]          # (T, 3, 3)
            b.obstacle_corners[...] = corners.astype(_F32)
            b.obstacle_normals[...] = self.obstacle.face_normals.astype(_F32)
            c = b.obstacle_corners
            b.obstacle_tri_lo, b.obstacle_tri_hi = triangle_boxes(c[:, 0], c[:, 1], c[:, 2])
            # Directed edge e = 3*t + slot runs corner[slot] -> corner[(slot+1)%3].
            b.obstacle_edge_start = c.reshape(-1, 3).copy()
            b.obstacle_edge_end = c[:, (1, 2, 0), :].reshape(-1, 3).copy()
            b.obstacle_edge_lo, b.obstacle_edge_hi = segment_boxes(
                b.obstacle_edge_start, b.obstacle_edge_end
            )

        # CSR incidence: for node i, inc_tris[offsets[i]:offsets[i+1]] are the
        # triangles touching i, in ascending triangle order.
        flat_nodes = mesh.triangles.ravel().astype(np.int64)
        tri_ids = np.repeat(np.arange(len(mesh.triangles), dtype=np.int64), 3)
        order = np.argsort(flat_nodes, kind="stable")
        degrees = np.bincount(flat_nodes, minlength=n)
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(degrees, out=offsets[1:])
        b.inc_offsets[...] = offsets.astype(np.uint32)
        b.inc_tris[...] = tri_ids[order].astype(np.uint32)
        b.inc_degrees = degrees

        self._upload_params_uniform()

    def _upload_params_uniform(self) -> None:
        p = self.params
        flags = (FLAG_EXPLICIT_EULER if p.explicit_euler else 0) | (
            FLAG_AVERAGE_RESPONSE if p.average_response else 0
        )
        lay = self.layout
        blob = struct.pack(
            "<3f f 3f f 2f 2f 5I I 2I",
            *(float(g) for g in p.gravity),
            p.dt / p.substeps,
            *(float(s) for s in p.stiffness),
            p.damping,
            p.epsilon_mt,
            p.response_margin,
            float(p.fixed_point_scale),
            1.0 / p.fixed_point_scale,
            lay.num_nodes,
            lay.num_springs,
            lay.num_cloth_tris,
            lay.num_cloth_edges,
            lay.num_obstacle_tris,
            flags,
            0,
            0,
        )
        assert len(blob) == PARAMS_UNIFORM_SIZE
        self.device.upload("paramsUniform", np.frombuffer(blob, dtype=np.uint8))

    def _make_kernel_params(self) -> KernelParams:
        p = self.params
        return KernelParams(
            dt=_F32(p.dt / p.substeps),
            gravity=np.asarray(p.gravity, dtype=_F32),
            damping=_F32(p.damping),
            epsilon_mt=_F32(p.epsilon_mt),
            response_margin=_F32(p.response_margin),
            fixed_point_scale=p.fixed_point_scale,
            explicit_euler=p.explicit_euler,
            average_response=p.average_response,
        )

    # -- runtime --------------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return self.layout.num_nodes

    @property
    def has_obstacle(self) -> bool:
        return self.layout.num_obstacle_tris > 0

    def set_external_accel(self, accel: np.ndarray = None) -> None:
        """Constant per-node acceleration (N, 3), or None to clear."""
        if accel is None:
            self.buffers.ext_accel[...] = 0.0
        else:
            self.buffers.ext_accel[...] = np.asarray(accel, dtype=_F32)

    def step(self, readback: bool = False, debug: bool = False) -> StepResult:
        """Submit one frame's passes. See module docstring for ordering."""
        dev = self.device
        b = self.buffers
        p = self.kparams
        wg = self.params.workgroup_size
        n = self.num_nodes
        result = StepResult()

        for sub in range(self.params.substeps):
            dev.dispatch("zero_forces", n, wg, kernel_zero_forces, dev, b, p)
            if debug and sub == 0:
                result.debug["forces_after_zero"] = dev.readback("forcesFixedPoint")
            dev.dispatch(
                "spring_force", self.layout.num_springs, wg, kernel_spring_force, dev, b, p
            )
            dev.dispatch("integrate", n, wg, kernel_integrate, dev, b, p)

        if self.has_obstacle:
            pairs_a = self.layout.num_cloth_edges * self.layout.num_obstacle_tris
            pairs_b = 3 * self.layout.num_obstacle_tris * self.layout.num_cloth_tris
            result.hits += dev.dispatch(
                "detect_cloth_edges", pairs_a, wg, kernel_detect_cloth_edges, dev, b, p
            )
            result.hits += dev.dispatch(
                "detect_obstacle_edges", pairs_b, wg, kernel_detect_obstacle_edges, dev, b, p
            )
            if debug:
                result.debug["accumulator_before_respond"] = dev.readback("responseAccumulator")
                result.debug["counts_before_respond"] = dev.readback("responseCount")
            result.responded = self.run_respond_pass()
            if debug:
                result.debug["accumulator_after_respond"] = dev.readback("responseAccumulator")
                result.debug["counts_after_respond"] = dev.readback("responseCount")

        dev.dispatch("normal_update", n, wg, kernel_normal_update, dev, b, p)

        self.frame_count += 1
        if readback:
            result.positions = self.read_positions()
        return result

    def run_respond_pass(self) -> int:
        """Dispatch only the respond kernel (used by step and by the trace
        tests, which inject accumulator contents first)."""
        return self.device.dispatch(
            "respond", self.num_nodes, self.params.workgroup_size,
            kernel_respond, self.device, self.buffers, self.kparams,
        )

    def inject_response(self, node: int, offset, count: int = 1) -> None:
        """Write one node's accumulator cells directly (test/trace hook)."""
        encoded = encode_values(np.asarray(offset, dtype=_F32), self.params.fixed_point_scale)
        self.buffers.resp_acc[node] = encoded
        self.buffers.resp_count[node] = count

    # -- readback --------------------------------------------------------------

    def read_positions(self) -> np.ndarray:
        return self.device.readback("positions").reshape(self.num_nodes, 3)

    def read_velocities(self) -> np.ndarray:
        return self.device.readback("velocities").reshape(self.num_nodes, 3)

    def read_forces_raw(self) -> np.ndarray:
        return self.device.readback("forcesFixedPoint").reshape(self.num_nodes, 3)

    def read_normals(self) -> np.ndarray:
        return self.device.readback("vertexNormals").reshape(self.num_nodes, 3)

    def read_accumulator_raw(self) -> np.ndarray:
        return self.device.readback("responseAccumulator").reshape(self.num_nodes, 3)

    def read_counts(self) -> np.ndarray:
        return self.device.readback("responseCount")


def build_pipeline(
    mesh: ClothMesh,
    obstacle: TriangleMesh = None,
    params: SimParams = None,
    device: SoftwareDevice = None,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
) -> Engine:
    """Validate the layout against device limits and build a ready Engine."""
    return Engine(mesh, obstacle, params, device, pair_budget)


def step_gpu(engine: Engine, readback: bool = False, debug: bool = False) -> StepResult:
    """Advance one frame on the engine (function-style alias of Engine.step)."""
    return engine.step(readback=readback, debug=debug)
