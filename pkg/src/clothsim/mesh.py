"""Cloth and obstacle geometry: grid generation, spring topology, icospheres.

A cloth is a regular nx x ny grid of point masses connected by three spring
families (Provot-style):

* structural: 4-neighborhood along grid axes, resists stretch
* shear: both cell diagonals, resists in-plane shearing
* bend: skips one node along grid axes, resists folding

Obstacles are static triangle meshes with precomputed outward face normals.
All positions are float64 ndarrays of shape (N, 3); model units are arbitrary
but consistent (meters read naturally).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "SpringKind",
    "Node",
    "Spring",
    "ClothMesh",
    "TriangleMesh",
    "SimParams",
    "generate_cloth_grid",
    "generate_icosphere",
    "compute_vertex_normals",
    "compute_face_normals",
    "spring_count_formula",
    "unique_edges",
]


class SpringKind(IntEnum):
    STRUCTURAL = 0
    SHEAR = 1
    BEND = 2


@dataclass
class Node:
    """Single cloth point mass (a convenience view; storage is array-based)."""

    position: np.ndarray
    velocity: np.ndarray
    mass: float
    pinned: bool

    def __post_init__(self) -> None:
        if self.mass <= 0.0:
            raise ValueError(f"node mass must be positive, got {self.mass}")


@dataclass(frozen=True)
class Spring:
    """Distance constraint between two nodes, classified by family."""

    index_a: int
    index_b: int
    rest_length: float
    kind: SpringKind

    def __post_init__(self) -> None:
        if self.index_a == self.index_b:
            raise ValueError("spring endpoints must differ")
        if self.rest_length <= 0.0:
            raise ValueError("rest length must be positive")


@dataclass
class ClothMesh:
    """Cloth grid with spring topology and a render triangulation.

    Array-of-struct views (`node(i)`, `spring(s)`) are provided for tests and
    inspection; the solver and engine consume the struct-of-array fields
    directly. `positions` holds the construction pose; simulation state lives
    in solver/engine buffers, never here.
    """

    nx: int
    ny: int
    positions: np.ndarray          # (N, 3) float64, construction pose
    masses: np.ndarray             # (N,) float64, all > 0
    pinned: np.ndarray             # (N,) bool
    spring_indices: np.ndarray     # (S, 2) int32
    spring_rest_lengths: np.ndarray  # (S,) float64
    spring_kinds: np.ndarray       # (S,) int32 of SpringKind values
    triangles: np.ndarray          # (M, 3) int32, CCW seen from +y at build

    @property
    def num_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def num_springs(self) -> int:
        return len(self.spring_indices)

    def node(self, i: int) -> Node:
        return Node(
            position=self.positions[i].copy(),
            velocity=np.zeros(3),
            mass=float(self.masses[i]),
            pinned=bool(self.pinned[i]),
        )

    def spring(self, s: int) -> Spring:
        a, b = self.spring_indices[s]
        return Spring(
            index_a=int(a),
            index_b=int(b),
            rest_length=float(self.spring_rest_lengths[s]),
            kind=SpringKind(int(self.spring_kinds[s])),
        )

    def node_index(self, i: int, j: int) -> int:
        """Flat index of grid node (i, j); i runs along x, j along the other axis."""
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise IndexError(f"grid coordinate ({i}, {j}) outside {self.nx}x{self.ny}")
        return j * self.nx + i


@dataclass
class TriangleMesh:
    """Static obstacle mesh: vertices, triangles, unit face normals."""

    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int32
    face_normals: np.ndarray = field(default=None)  # (T, 3) float64, unit

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int32)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise ValueError("triangle references a vertex that does not exist")
        if self.face_normals is None:
            self.face_normals = compute_face_normals(self.vertices, self.triangles)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)


@dataclass
class SimParams:
    """Static simulation coefficients shared by both backends.

    `stiffness` accepts a single float (applied to every spring family) or a
    3-sequence ordered (structural, shear, bend). Forces follow Hooke plus a
    velocity-projection damping term; see solver.spring_force.
    """

    dt: float = 0.016
    gravity: tuple = (0.0, -9.8, 0.0)
    stiffness: object = 50.0
    damping: float = 0.5
    epsilon_mt: float = 1e-6
    response_margin: float = 1e-3
    fixed_point_scale: int = 1 << 16
    workgroup_size: int = 256
    substeps: int = 1
    explicit_euler: bool = False
    average_response: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if np.shape(self.gravity) != (3,):
            raise ValueError("gravity must be a 3-vector")
        self.gravity = tuple(float(g) for g in self.gravity)
        if np.isscalar(self.stiffness):
            self.stiffness = (float(self.stiffness),) * 3
        else:
            self.stiffness = tuple(float(s) for s in self.stiffness)
        if len(self.stiffness) != 3:
            raise ValueError("stiffness needs one value or (structural, shear, bend)")
        if any(s < 0.0 for s in self.stiffness):
            raise ValueError("stiffness must be non-negative")
        if self.damping < 0.0:
            raise ValueError("damping must be non-negative")
        if self.epsilon_mt <= 0.0:
            raise ValueError("epsilon_mt must be positive")
        if self.response_margin < 0.0:
            raise ValueError("response_margin must be non-negative")
        if int(self.fixed_point_scale) < 1:
            raise ValueError("fixed_point_scale must be >= 1")
        self.fixed_point_scale = int(self.fixed_point_scale)
        if int(self.workgroup_size) < 1:
            raise ValueError("workgroup_size must be >= 1")
        self.workgroup_size = int(self.workgroup_size)
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")
        self.substeps = int(self.substeps)

    def stiffness_for(self, kind: int) -> float:
        return self.stiffness[int(kind)]


def spring_count_formula(nx: int, ny: int) -> tuple:
    """Closed-form spring census for an nx x ny grid.

    Returns (structural, shear, bend):
      structural = nx*(ny-1) + ny*(nx-1)
      shear      = 2*(nx-1)*(ny-1)
      bend       = nx*max(ny-2, 0) + ny*max(nx-2, 0)
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 nodes per side")
    structural = nx * (ny - 1) + ny * (nx - 1)
    shear = 2 * (nx - 1) * (ny - 1)
    bend = nx * max(ny - 2, 0) + ny * max(nx - 2, 0)
    return structural, shear, bend


def generate_cloth_grid(
    nx: int,
    ny: int,
    width: float = 1.0,
    height: float = 1.0,
    total_mass: float = None,
    pinned_rows=None,
) -> ClothMesh:
    """Build a regular cloth grid in the xz-plane at y=0.

    Node (i, j) sits at (i*width/(nx-1), 0, j*height/(ny-1)); flat index is
    j*nx + i. Mass is uniform, total_mass / (nx*ny) per node (total_mass
    defaults to 0.05 per node). `pinned_rows` selects whole j-rows at
    construction: None, "first" (j=0), "last" (j=ny-1), or an iterable of row
    indices. Scenes reorient the grid rigidly afterwards, which preserves every
    rest length.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid needs at least 2 nodes per side")
    if width <= 0.0 or height <= 0.0:
        raise ValueError("cloth dimensions must be positive")
    n = nx * ny
    if total_mass is None:
        total_mass = 0.05 * n
    if total_mass <= 0.0:
        raise ValueError("total_mass must be positive")

    xs = np.linspace(0.0, width, nx)
    zs = np.linspace(0.0, height, ny)
    positions = np.zeros((n, 3), dtype=np.float64)
    gi, gj = np.meshgrid(np.arange(nx), np.arange(ny))
    flat = (gj * nx + gi).ravel()
    positions[flat, 0] = xs[gi.ravel()]
    positions[flat, 2] = zs[gj.ravel()]

    masses = np.full(n, total_mass / n, dtype=np.float64)

    pinned = np.zeros(n, dtype=bool)
    rows = _resolve_pinned_rows(pinned_rows, ny)
    for j in rows:
        pinned[j * nx : j * nx + nx] = True

    idx = lambda i, j: j * nx + i  # noqa: E731

    pairs = []
    kinds = []

    def add(a, b, kind):
        pairs.append((a, b))
        kinds.append(int(kind))

    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                add(idx(i, j), idx(i + 1, j), SpringKind.STRUCTURAL)
            if j + 1 < ny:
                add(idx(i, j), idx(i, j + 1), SpringKind.STRUCTURAL)
    for j in range(ny - 1):
        for i in range(nx - 1):
            add(idx(i, j), idx(i + 1, j + 1), SpringKind.SHEAR)
            add(idx(i + 1, j), idx(i, j + 1), SpringKind.SHEAR)
    for j in range(ny):
        for i in range(nx):
            if i + 2 < nx:
                add(idx(i, j), idx(i + 2, j), SpringKind.BEND)
            if j + 2 < ny:
                add(idx(i, j), idx(i, j + 2), SpringKind.BEND)

    spring_indices = np.array(pairs, dtype=np.int32)
    spring_kinds = np.array(kinds, dtype=np.int32)
    delta = positions[spring_indices[:, 1]] - positions[spring_indices[:, 0]]
    rest = np.linalg.norm(delta, axis=1)

    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            v00 = idx(i, j)
            v10 = idx(i + 1, j)
            v01 = idx(i, j + 1)
            v11 = idx(i + 1, j + 1)
            tris.append((v00, v01, v10))
            tris.append((v10, v01, v11))
    triangles = np.array(tris, dtype=np.int32)

    return ClothMesh(
        nx=nx,
        ny=ny,
        positions=positions,
        masses=masses,
        pinned=pinned,
        spring_indices=spring_indices,
        spring_rest_lengths=rest,
        spring_kinds=spring_kinds,
        triangles=triangles,
    )


def _resolve_pinned_rows(pinned_rows, ny: int):
    if pinned_rows is None or pinned_rows == "none":
        return []
    if pinned_rows == "first":
        return [0]
    if pinned_rows == "last":
        return [ny - 1]
    rows = [int(j) for j in pinned_rows]
    for j in rows:
        if not (0 <= j < ny):
            raise ValueError(f"pinned row {j} outside grid with ny={ny}")
    return rows


# Icosahedron seed: 12 vertices from three orthogonal golden rectangles,
# 20 faces wound counterclockwise seen from outside.
_ICO_T = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_VERTS = [
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
]
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def generate_icosphere(subdivisions: int, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere.

    Each subdivision splits every face into 4, so triangle count is 20 * 4^k
    and vertex count 2 + 10 * 4^k. The mesh is watertight: every edge is
    shared by exactly two faces.
    """
    if subdivisions < 0:
        raise ValueError("subdivisions must be >= 0")
    if radius <= 0.0:
        raise ValueError("radius must be positive")

    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = list(_ICO_FACES)

    for _ in range(subdivisions):
        midpoint_cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoint_cache:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                verts.append(m)
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        next_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            next_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = next_faces

    center = np.asarray(center, dtype=np.float64)
    vertices = np.array(verts) * radius + center
    return TriangleMesh(vertices=vertices, triangles=np.array(faces, dtype=np.int32))


def compute_face_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Unit normals per triangle; zero-area faces fall back to +y."""
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    n = np.cross(e1, e2)
    length = np.linalg.norm(n, axis=1)
    out = np.zeros_like(n)
    ok = length > 1e-30
    out[ok] = n[ok] / length[ok, None]
    out[~ok] = (0.0, 1.0, 0.0)
    return out


def compute_vertex_normals(mesh, positions: np.ndarray = None) -> np.ndarray:
    """Per-vertex normals: normalized sum of incident unit face normals.

    Works for both ClothMesh and TriangleMesh. `positions` overrides the mesh's
    stored pose, which lets callers feed in a simulation state. Zero-area faces
    contribute nothing; vertices with no contribution get the +y fallback.
    """
    if positions is None:
        positions = getattr(mesh, "positions", None)
        if positions is None:
            positions = mesh.vertices
    positions = np.asarray(positions, dtype=np.float64)
    triangles = mesh.triangles

    face_n = compute_face_normals(positions, triangles)
    v0 = positions[triangles[:, 0]]
    area2 = np.linalg.norm(
        np.cross(positions[triangles[:, 1]] - v0, positions[triangles[:, 2]] - v0), axis=1
    )
    face_n = np.where(area2[:, None] > 1e-30, face_n, 0.0)

    accum = np.zeros_like(positions)
    for corner in range(3):
        np.add.at(accum, triangles[:, corner], face_n)

    length = np.linalg.norm(accum, axis=1)
    out = np.zeros_like(accum)
    ok = length > 1e-30
    out[ok] = accum[ok] / length[ok, None]
    out[~ok] = (0.0, 1.0, 0.0)
    return out


def unique_edges(triangles: np.ndarray) -> np.ndarray:
    """Deduplicated undirected edge list of a triangulation, sorted (a < b)."""
    tri = np.asarray(triangles)
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0)
    edges = np.sort(edges, axis=1)
    return np.unique(edges, axis=0).astype(np.int32)
