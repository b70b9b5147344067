"""Vectorized float32 kernels executed by the software device.

Each function is the executable twin of one WGSL source under shaders/: same
arithmetic (f32 throughout), same guards, same atomic traffic. Work that a
shader would do per invocation is done here over index ranges; large pair
domains are processed in chunks purely to bound host memory, which cannot
change results because all cross-invocation accumulation is integer-atomic.

The detect kernels reject most pairs with a padded axis-aligned box overlap
test before running the full intersection algebra. Any segment-triangle
intersection point lies inside both primitives' boxes, and the padding
(BOX_PAD on every face) dwarfs f32 rounding at contact scale, so the filter
never removes a pair the full test would accept; it exists because gathering
five corner positions per pair is the dominant cost in this vectorized
emulation. A real shader touches memory per invocation anyway, so the WGSL
twins run the plain per-pair test.

Pipeline order per frame (substeps repeat the first three):

    zero_forces -> spring_force -> integrate
    -> detect_cloth_edges -> detect_obstacle_edges -> respond
    -> normal_update
"""

from __future__ import annotations

import numpy as np

from .fixedpoint import decode_values, encode_values

__all__ = [
    "CHUNK_PAIRS",
    "kernel_zero_forces",
    "kernel_spring_force",
    "kernel_integrate",
    "kernel_detect_cloth_edges",
    "kernel_detect_obstacle_edges",
    "kernel_respond",
    "kernel_normal_update",
]

CHUNK_PAIRS = 1 << 20

_F32 = np.float32

# Padding applied to every face of the filter boxes, in model units. Contact
# coordinates are O(1) in the standard scenes, where f32 rounding is O(1e-7).
BOX_PAD = _F32(1e-5)


def _dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def segment_boxes(start, end, pad=BOX_PAD):
    """Per-segment padded bounding boxes: (min - pad, max + pad)."""
    lo = np.minimum(start, end) - pad
    hi = np.maximum(start, end) + pad
    return lo, hi


def triangle_boxes(v0, v1, v2):
    """Per-triangle unpadded bounding boxes (one padded side suffices)."""
    lo = np.minimum(np.minimum(v0, v1), v2)
    hi = np.maximum(np.maximum(v0, v1), v2)
    return lo, hi


def _overlap_matrix(lo_a, hi_a, lo_b, hi_b):
    """(A, B) bool matrix of box overlaps between two box sets.

    Built from broadcast compares of the small per-item box arrays, so no
    per-pair geometry is ever gathered for rejected pairs.
    """
    ok = (lo_a[:, None, 0] <= hi_b[None, :, 0]) & (lo_b[None, :, 0] <= hi_a[:, None, 0])
    ok &= (lo_a[:, None, 1] <= hi_b[None, :, 1]) & (lo_b[None, :, 1] <= hi_a[:, None, 1])
    ok &= (lo_a[:, None, 2] <= hi_b[None, :, 2]) & (lo_b[None, :, 2] <= hi_a[:, None, 2])
    return ok


def kernel_zero_forces(dev, b, p):
    """atomicStore(0) over the fixed-point force buffer."""
    dev.atomic_store_zero(b.forces)


def kernel_spring_force(dev, b, p):
    """Per-spring Hooke + axial damping force, fixed-point accumulated to both
    endpoints with opposite signs (action-reaction as two atomic adds)."""
    springs = b.springs
    if len(springs) == 0:
        return
    a_idx = b.spring_a
    b_idx = b.spring_b
    pa = b.pos[a_idx]
    pb = b.pos[b_idx]
    delta = pb - pa
    length = np.sqrt(_dot(delta, delta))
    ok = length > _F32(1e-12)
    safe_len = np.where(ok, length, _F32(1.0))
    axis = delta / safe_len[:, None]
    rel = _dot(b.vel[b_idx] - b.vel[a_idx], axis)
    magnitude = springs["stiffness"] * (length - springs["rest_length"]) + springs["damping"] * rel
    magnitude = np.where(ok, magnitude, _F32(0.0))
    force = magnitude[:, None] * axis

    encoded = encode_values(force, p.fixed_point_scale)
    dev.atomic_add_i32(b.forces, b.spring_a3, encoded.ravel())
    # The reaction is the negated integer, not a re-encoded negated float,
    # so both endpoints see the exact same quantised magnitude.
    dev.atomic_add_i32(b.forces, b.spring_b3, (-encoded).ravel())


def kernel_integrate(dev, b, p):
    """Decode forces, add gravitational/external acceleration, Euler update.

    Semi-implicit by default (position sees the fresh velocity); explicit
    behind the params flag. Pinned nodes (inverse mass zero) are skipped
    entirely, so their state is bit-unchanged. Previous positions are recorded
    for every node before the update.
    """
    b.prev[...] = b.pos
    free = b.inv_mass > 0
    if not free.any():
        return
    dt = p.dt
    force = decode_values(b.forces, p.fixed_point_scale)
    accel = force * b.inv_mass[:, None] + p.gravity[None, :] + b.ext_accel
    if p.explicit_euler:
        b.pos[free] += b.vel[free] * dt
        b.vel[free] += accel[free] * dt
    else:
        b.vel[free] += accel[free] * dt
        b.pos[free] += b.vel[free] * dt


def _segment_triangle_f32(start, end, v0, v1, v2, epsilon):
    """Vectorized segment/triangle predicate in f32.

    Returns (valid, t, hit_point). Mirrors the scalar routine: normalized
    direction, |a| >= eps, u in [0,1], v >= 0, u+v <= 1, eps < t < length.
    """
    d = end - start
    d_len = np.sqrt(_dot(d, d))
    valid = d_len > epsilon
    safe = np.where(valid, d_len, _F32(1.0))
    r = d / safe[:, None]

    e1 = v1 - v0
    e2 = v2 - v0
    h = np.cross(r, e2)
    a = _dot(e1, h)
    valid &= np.abs(a) >= epsilon
    safe_a = np.where(valid, a, _F32(1.0))
    f = _F32(1.0) / safe_a

    s = start - v0
    u = f * _dot(s, h)
    valid &= (u >= 0) & (u <= 1)

    q = np.cross(s, e1)
    v = f * _dot(r, q)
    valid &= (v >= 0) & (u + v <= 1)

    t = f * _dot(e2, q)
    valid &= (t > epsilon) & (t < d_len)

    point = start + t[:, None] * r
    return valid, t, point


def _accumulate_hits(dev, b, p, node_idx, node_pos, hit_point, oriented_normal):
    """Encode and atomically add one response contribution per node.

    node_idx: (H,) int; node_pos: (H,3); hit_point/oriented_normal: (H,3).
    Push = oriented_normal * (plane depth clamped at zero + margin).
    """
    depth = -_dot(node_pos - hit_point, oriented_normal)
    depth = np.maximum(depth, _F32(0.0))
    offsets = oriented_normal * (depth + p.response_margin)[:, None]
    encoded = encode_values(offsets, p.fixed_point_scale)
    flat = (node_idx[:, None] * 3 + np.arange(3, dtype=np.int64)[None, :]).ravel()
    dev.atomic_add_i32(b.resp_acc, flat, encoded.ravel())
    dev.atomic_add_i32(b.resp_count, node_idx, np.ones(len(node_idx), dtype=np.int32))


def kernel_detect_cloth_edges(dev, b, p):
    """One logical invocation per (unique cloth edge, obstacle triangle) pair.

    A hit pushes both edge endpoints toward the non-penetrating side of the
    obstacle face (the side of the endpoint that is above the face plane).
    Returns the number of hits found.
    """
    n_edges = len(b.edges)
    n_tris = b.num_obstacle_tris
    total = n_edges * n_tris
    if total == 0:
        return 0
    hits = 0
    eps = p.epsilon_mt
    a_all = b.edges[:, 0].astype(np.int64)
    b_all = b.edges[:, 1].astype(np.int64)
    start_all = b.pos[a_all]
    end_all = b.pos[b_all]
    edge_lo, edge_hi = segment_boxes(start_all, end_all)
    rows = max(1, CHUNK_PAIRS // n_tris)
    for lo in range(0, n_edges, rows):
        hi = min(lo + rows, n_edges)
        near = _overlap_matrix(
            edge_lo[lo:hi], edge_hi[lo:hi], b.obstacle_tri_lo, b.obstacle_tri_hi
        )
        e_c, t_c = np.nonzero(near)
        if e_c.size == 0:
            continue
        e_c = e_c + lo
        start = start_all[e_c]
        end = end_all[e_c]
        v0 = b.obstacle_corners[t_c, 0]
        v1 = b.obstacle_corners[t_c, 1]
        v2 = b.obstacle_corners[t_c, 2]
        valid, _t, point = _segment_triangle_f32(start, end, v0, v1, v2, eps)
        sel = np.nonzero(valid)[0]
        if sel.size == 0:
            continue
        hits += int(sel.size)
        normal = b.obstacle_normals[t_c[sel]]
        start_s = start[sel]
        end_s = end[sel]
        point_s = point[sel]
        side_a = _dot(start_s - point_s, normal)
        side_b = _dot(end_s - point_s, normal)
        sign = np.where(np.maximum(side_a, side_b) >= 0, _F32(1.0), _F32(-1.0))
        oriented = normal * sign[:, None]
        _accumulate_hits(dev, b, p, a_all[e_c[sel]], start_s, point_s, oriented)
        _accumulate_hits(dev, b, p, b_all[e_c[sel]], end_s, point_s, oriented)
    if hits:
        dev.atomic_add_i32(b.hit_counter, np.zeros(1, dtype=np.int64), np.array([hits], dtype=np.int32))
    return hits


def kernel_detect_obstacle_edges(dev, b, p):
    """One logical invocation per (obstacle triangle edge, cloth triangle)
    pair; obstacle edges are tested once per owning face (3 per triangle).

    A hit pushes all three cloth-triangle nodes toward the side holding the
    bulk of the cloth triangle. Returns the number of hits found.
    """
    n_edges = 3 * b.num_obstacle_tris
    n_cloth = len(b.tris)
    total = n_edges * n_cloth
    if total == 0:
        return 0
    hits = 0
    eps = p.epsilon_mt
    nodes_all = b.tris.astype(np.int64)
    v0_all = b.pos[nodes_all[:, 0]]
    v1_all = b.pos[nodes_all[:, 1]]
    v2_all = b.pos[nodes_all[:, 2]]
    ctri_lo, ctri_hi = triangle_boxes(v0_all, v1_all, v2_all)
    rows = max(1, CHUNK_PAIRS // n_cloth)
    for lo in range(0, n_edges, rows):
        hi = min(lo + rows, n_edges)
        near = _overlap_matrix(
            b.obstacle_edge_lo[lo:hi], b.obstacle_edge_hi[lo:hi], ctri_lo, ctri_hi
        )
        e_c, c_c = np.nonzero(near)
        if e_c.size == 0:
            continue
        e_c = e_c + lo
        start = b.obstacle_edge_start[e_c]
        end = b.obstacle_edge_end[e_c]
        v0 = v0_all[c_c]
        v1 = v1_all[c_c]
        v2 = v2_all[c_c]
        valid, _t, point = _segment_triangle_f32(start, end, v0, v1, v2, eps)
        sel = np.nonzero(valid)[0]
        if sel.size == 0:
            continue
        hits += int(sel.size)
        normal = b.obstacle_normals[e_c[sel] // 3]
        point_s = point[sel]
        corners = (v0[sel], v1[sel], v2[sel])
        total_side = sum(_dot(c - point_s, normal) for c in corners)
        sign = np.where(total_side >= 0, _F32(1.0), _F32(-1.0))
        oriented = normal * sign[:, None]
        nodes_sel = nodes_all[c_c[sel]]
        for corner_pos, corner_nodes in zip(corners, (nodes_sel[:, 0], nodes_sel[:, 1], nodes_sel[:, 2])):
            _accumulate_hits(dev, b, p, corner_nodes, corner_pos, point_s, oriented)
    if hits:
        dev.atomic_add_i32(b.hit_counter, np.zeros(1, dtype=np.int64), np.array([hits], dtype=np.int32))
    return hits


def kernel_respond(dev, b, p):
    """Per-node response: flip-and-halve velocity, offset position by the
    accumulated direction (averaged unless the raw-sum flag is set), then
    atomicStore zeros to both accumulator buffers. Pinned nodes are skipped.

    Returns the number of nodes that responded.
    """
    counts = b.resp_count
    mask = (counts > 0) & (b.inv_mass > 0)
    responded = int(np.count_nonzero(mask))
    if responded:
        decoded = decode_values(b.resp_acc[mask], p.fixed_point_scale)
        if p.average_response:
            decoded = decoded / counts[mask][:, None].astype(_F32)
        b.vel[mask] *= _F32(-0.5)
        b.pos[mask] += decoded
    dev.atomic_store_zero(b.resp_acc)
    dev.atomic_store_zero(b.resp_count)
    return responded


def kernel_normal_update(dev, b, p):
    """Per-node normal: each invocation walks its own incidence list (CSR)
    and sums unit face normals in order, so no floating-point atomics exist
    anywhere in the pipeline."""
    tris = b.tris.astype(np.int64)
    v0 = b.pos[tris[:, 0]]
    face = np.cross(b.pos[tris[:, 1]] - v0, b.pos[tris[:, 2]] - v0)
    norm = np.sqrt(_dot(face, face))
    ok = norm > _F32(1e-20)
    face = np.where(ok[:, None], face / np.where(ok, norm, _F32(1.0))[:, None], _F32(0.0))

    gathered = face[b.inc_tris]
    if len(gathered) == 0:
        b.normals[...] = np.array([0.0, 1.0, 0.0], dtype=_F32)
        return
    starts = np.minimum(b.inc_offsets[:-1].astype(np.int64), len(gathered) - 1)
    sums = np.add.reduceat(gathered, starts, axis=0)
    if b.inc_degrees is not None:
        sums[b.inc_degrees == 0] = _F32(0.0)  # reduceat misreads empty segments
    length = np.sqrt(_dot(sums, sums))
    good = length > _F32(1e-20)
    out = np.where(
        good[:, None], sums / np.where(good, length, _F32(1.0))[:, None], _F32(0.0)
    )
    out[~good] = np.array([0.0, 1.0, 0.0], dtype=_F32)
    b.normals[...] = out
