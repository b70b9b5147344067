"""Edge-triangle collision detection and positional response.

Detection extends the classic ray-triangle barycentric test to finite
segments: the segment direction is normalized, so the hit parameter t is a
distance, and a hit requires epsilon < t < segment length. Cloth-obstacle
narrow phase tests every deduplicated cloth edge against every obstacle
triangle, and every obstacle triangle edge against every cloth triangle
(obstacle edges keep one test per owning face so each face contributes its own
normal). There is deliberately no broad phase.

Response is accumulated per node as a vector sum plus a hit count; applying it
inverts and halves the node velocity and offsets the position by the
accumulated direction (averaged by count unless configured raw), after which
the accumulator is reset. Offsets point from the obstacle surface toward the
non-penetrating side, scaled by an estimated penetration depth plus a safety
margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import ClothMesh, SimParams, TriangleMesh, unique_edges

__all__ = [
    "EdgeTriangleHit",
    "Contact",
    "ContactAccumulator",
    "CollisionBudgetError",
    "DEFAULT_PAIR_BUDGET",
    "edge_triangle_intersect",
    "triangle_triangle_contacts",
    "detect_all",
    "apply_collision_response",
]

DEFAULT_PAIR_BUDGET = 20_000_000


class CollisionBudgetError(RuntimeError):
    """Raised when a frame would exceed the configured pair-test budget."""


@dataclass(frozen=True)
class EdgeTriangleHit:
    """Segment-triangle intersection record.

    t is the distance from the segment start along its normalized direction
    (strictly inside (epsilon, segment length)); u and v are the triangle
    barycentric coordinates of the hit; point is the hit position.
    """

    t: float
    u: float
    v: float
    point: tuple


@dataclass(frozen=True)
class Contact:
    """Response contribution of one edge-triangle hit.

    nodes are cloth node indices; offsets[i] is the positional push for
    nodes[i]. kind is "cloth_edge" or "obstacle_edge".
    """

    kind: str
    nodes: tuple
    offsets: tuple
    hit: EdgeTriangleHit


class ContactAccumulator:
    """Per-node response sum and hit count, mirroring the atomic buffers."""

    def __init__(self, num_nodes: int):
        self.response_sum = np.zeros((num_nodes, 3), dtype=np.float64)
        self.counts = np.zeros(num_nodes, dtype=np.int64)

    def add(self, node: int, offset) -> None:
        self.response_sum[node] += offset
        self.counts[node] += 1

    def reset(self) -> None:
        self.response_sum[:] = 0.0
        self.counts[:] = 0

    @property
    def total_hits(self) -> int:
        return int(self.counts.sum())


def edge_triangle_intersect(start, end, v0, v1, v2, epsilon: float = 1e-6):
    """Intersect segment [start, end] with triangle (v0, v1, v2).

    Returns an EdgeTriangleHit or None. The segment direction is normalized
    before the barycentric algebra, so all rejection thresholds are in
    distance/model units:

      * |a| < epsilon rejects near-parallel configurations,
      * u outside [0, 1] or v < 0 or u + v > 1 rejects misses in the plane,
      * t must lie strictly inside (epsilon, |end - start|).
    """
    sx, sy, sz = float(start[0]), float(start[1]), float(start[2])
    ex, ey, ez = float(end[0]), float(end[1]), float(end[2])
    dx, dy, dz = ex - sx, ey - sy, ez - sz
    d_len = math.sqrt(dx * dx + dy * dy + dz * dz)
    if d_len <= epsilon:
        return None
    rx, ry, rz = dx / d_len, dy / d_len, dz / d_len

    ax0, ay0, az0 = float(v0[0]), float(v0[1]), float(v0[2])
    e1x, e1y, e1z = float(v1[0]) - ax0, float(v1[1]) - ay0, float(v1[2]) - az0
    e2x, e2y, e2z = float(v2[0]) - ax0, float(v2[1]) - ay0, float(v2[2]) - az0

    # h = r x e2
    hx = ry * e2z - rz * e2y
    hy = rz * e2x - rx * e2z
    hz = rx * e2y - ry * e2x
    a = e1x * hx + e1y * hy + e1z * hz
    if -epsilon < a < epsilon:
        return None

    f = 1.0 / a
    px, py, pz = sx - ax0, sy - ay0, sz - az0
    u = f * (px * hx + py * hy + pz * hz)
    if u < 0.0 or u > 1.0:
        return None

    # q = s x e1
    qx = py * e1z - pz * e1y
    qy = pz * e1x - px * e1z
    qz = px * e1y - py * e1x
    v = f * (rx * qx + ry * qy + rz * qz)
    if v < 0.0 or u + v > 1.0:
        return None

    t = f * (e2x * qx + e2y * qy + e2z * qz)
    if t <= epsilon or t >= d_len:
        return None

    point = (sx + t * rx, sy + t * ry, sz + t * rz)
    return EdgeTriangleHit(t=t, u=u, v=v, point=point)


def _offsets_for_hit(node_positions, hit_point, face_normal, orient_sign, margin):
    """Per-node push vectors for one hit.

    The oriented normal is face_normal * orient_sign (pointing at the
    non-penetrating side); each node's push is that direction scaled by its
    plane penetration depth (distance behind the hit plane, clamped at zero)
    plus the margin.
    """
    nx = face_normal[0] * orient_sign
    ny = face_normal[1] * orient_sign
    nz = face_normal[2] * orient_sign
    out = []
    for p in node_positions:
        depth = -(
            (p[0] - hit_point[0]) * nx
            + (p[1] - hit_point[1]) * ny
            + (p[2] - hit_point[2]) * nz
        )
        if depth < 0.0:
            depth = 0.0
        scale = depth + margin
        out.append((nx * scale, ny * scale, nz * scale))
    return tuple(out)


def triangle_triangle_contacts(
    cloth_points,
    cloth_nodes,
    obstacle_points,
    obstacle_normal,
    epsilon: float = 1e-6,
    margin: float = 1e-3,
):
    """All edge-vs-triangle contacts between one cloth triangle and one
    obstacle triangle: the cloth triangle's three edges against the obstacle
    triangle, and the obstacle triangle's three edges against the cloth
    triangle (six combinations).

    cloth_points is a (3, 3) position array for cloth node indices
    cloth_nodes; obstacle_points is (3, 3) with unit obstacle_normal.
    Returns a list of Contact records (possibly empty).
    """
    contacts = []
    cp = [tuple(map(float, p)) for p in cloth_points]
    op = [tuple(map(float, p)) for p in obstacle_points]
    n = tuple(map(float, obstacle_normal))

    for ia, ib in ((0, 1), (1, 2), (2, 0)):
        hit = edge_triangle_intersect(cp[ia], cp[ib], op[0], op[1], op[2], epsilon)
        if hit is None:
            continue
        contacts.append(
            _cloth_edge_contact(
                cp[ia], cp[ib], int(cloth_nodes[ia]), int(cloth_nodes[ib]), hit, n, margin
            )
        )

    for ia, ib in ((0, 1), (1, 2), (2, 0)):
        hit = edge_triangle_intersect(op[ia], op[ib], cp[0], cp[1], cp[2], epsilon)
        if hit is None:
            continue
        contacts.append(
            _obstacle_edge_contact(cp, tuple(int(k) for k in cloth_nodes), hit, n, margin)
        )

    return contacts


def _plane_side(point, origin, normal):
    return (
        (point[0] - origin[0]) * normal[0]
        + (point[1] - origin[1]) * normal[1]
        + (point[2] - origin[2]) * normal[2]
    )


def _cloth_edge_contact(pa, pb, node_a, node_b, hit, face_normal, margin):
    # The two endpoints straddle the obstacle plane; orient the push toward
    # the endpoint on the positive side (the non-penetrating one).
    side_a = _plane_side(pa, hit.point, face_normal)
    side_b = _plane_side(pb, hit.point, face_normal)
    sign = 1.0 if max(side_a, side_b) >= 0.0 else -1.0
    offsets = _offsets_for_hit((pa, pb), hit.point, face_normal, sign, margin)
    return Contact(kind="cloth_edge", nodes=(node_a, node_b), offsets=offsets, hit=hit)


def _obstacle_edge_contact(cloth_points, cloth_nodes, hit, face_normal, margin):
    # Orient toward the side holding the bulk of the pierced cloth triangle.
    total = sum(_plane_side(p, hit.point, face_normal) for p in cloth_points)
    sign = 1.0 if total >= 0.0 else -1.0
    offsets = _offsets_for_hit(cloth_points, hit.point, face_normal, sign, margin)
    return Contact(kind="obstacle_edge", nodes=cloth_nodes, offsets=offsets, hit=hit)


def detect_all(
    positions: np.ndarray,
    cloth: ClothMesh,
    obstacle: TriangleMesh,
    params: SimParams,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
):
    """Narrow-phase pass over the whole cloth against a static obstacle.

    Tests each deduplicated cloth edge against every obstacle triangle, then
    each obstacle triangle's three edges against every cloth triangle.
    Returns (ContactAccumulator, hit_count) where hit_count is the number of
    edge-triangle intersections found. Raises CollisionBudgetError when the
    pair count for one frame would exceed pair_budget.
    """
    cloth_edges = unique_edges(cloth.triangles)
    n_obs = obstacle.num_triangles
    n_cloth_tris = len(cloth.triangles)
    pair_count = len(cloth_edges) * n_obs + 3 * n_obs * n_cloth_tris
    if pair_count > pair_budget:
        raise CollisionBudgetError(
            f"frame needs {pair_count} edge-triangle tests, budget is {pair_budget}; "
            "raise the budget or reduce resolution"
        )

    accumulator = ContactAccumulator(cloth.num_nodes)
    hits = 0
    eps = params.epsilon_mt
    margin = params.response_margin

    obs_pts = obstacle.vertices
    obs_tris = obstacle.triangles
    obs_normals = obstacle.face_normals

    pos_list = [tuple(map(float, p)) for p in positions]

    for edge_a, edge_b in cloth_edges:
        pa = pos_list[edge_a]
        pb = pos_list[edge_b]
        for ti in range(n_obs):
            tri = obs_tris[ti]
            hit = edge_triangle_intersect(
                pa, pb, obs_pts[tri[0]], obs_pts[tri[1]], obs_pts[tri[2]], eps
            )
            if hit is None:
                continue
            contact = _cloth_edge_contact(
                pa, pb, int(edge_a), int(edge_b), hit, tuple(obs_normals[ti]), margin
            )
            hits += 1
            for node, offset in zip(contact.nodes, contact.offsets):
                accumulator.add(node, offset)

    cloth_tri_nodes = [tuple(int(k) for k in tri) for tri in cloth.triangles]
    cloth_tri_pts = [
        (pos_list[a], pos_list[b], pos_list[c]) for a, b, c in cloth_tri_nodes
    ]
    for ti in range(n_obs):
        tri = obs_tris[ti]
        n = tuple(obs_normals[ti])
        corners = [tuple(map(float, obs_pts[k])) for k in tri]
        for ia, ib in ((0, 1), (1, 2), (2, 0)):
            ea, eb = corners[ia], corners[ib]
            for cp, nodes in zip(cloth_tri_pts, cloth_tri_nodes):
                hit = edge_triangle_intersect(ea, eb, cp[0], cp[1], cp[2], eps)
                if hit is None:
                    continue
                contact = _obstacle_edge_contact(cp, nodes, hit, n, margin)
                hits += 1
                for node, offset in zip(contact.nodes, contact.offsets):
                    accumulator.add(node, offset)

    return accumulator, hits


def apply_collision_response(
    positions: np.ndarray,
    velocities: np.ndarray,
    accumulator: ContactAccumulator,
    pinned: np.ndarray = None,
    average: bool = True,
) -> int:
    """Apply accumulated contacts: flip-and-halve velocity, offset position.

    For every node with a positive hit count: velocity *= -0.5 and position +=
    response (sum divided by count when average is True, raw sum otherwise).
    Pinned nodes are left untouched. The accumulator is reset afterwards,
    mirroring the engine's end-of-pass buffer clears. Returns the number of
    nodes that responded.
    """
    counts = accumulator.counts
    mask = counts > 0
    if pinned is not None:
        mask = mask & ~np.asarray(pinned, dtype=bool)
    idx = np.nonzero(mask)[0]
    if idx.size:
        velocities[idx] *= -0.5
        offset = accumulator.response_sum[idx]
        if average:
            offset = offset / counts[idx, None]
        positions[idx] += offset
    responded = int(idx.size)
    accumulator.reset()
    return responded
