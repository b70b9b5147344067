"""Serial reference solver for the cloth mass-spring system.

This is the single-threaded float64 baseline: forces are accumulated spring by
spring in a plain Python loop (the per-spring arithmetic is the whole point of
the comparison against the vectorized engine), then integrated with
semi-implicit Euler:

    v += (f / m) * dt        (velocity first, from the freshly summed force)
    x += v * dt              (position from the *new* velocity)

Explicit Euler (position from the old velocity) is available behind
SimParams.explicit_euler for comparison. Pinned nodes keep exactly zero
velocity and never move. Spring force on node a, with unit axis u from a to b:

    f_a = (stiffness * (length - rest) + damping * ((v_b - v_a) . u)) * u

and node b receives the exact negation, so internal forces cancel node for
node (action-reaction).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .collision import DEFAULT_PAIR_BUDGET, apply_collision_response, detect_all
from .mesh import ClothMesh, SimParams, TriangleMesh, compute_vertex_normals

__all__ = [
    "SolverState",
    "DivergenceError",
    "make_state",
    "spring_force",
    "accumulate_forces",
    "integrate",
    "step",
    "kinetic_energy",
    "spring_potential_energy",
]


class DivergenceError(RuntimeError):
    """Raised when a node's state stops being finite."""


@dataclass
class SolverState:
    """Mutable simulation buffers; the mesh itself is never written."""

    positions: np.ndarray           # (N, 3) float64
    previous_positions: np.ndarray  # (N, 3) float64, pre-step positions
    velocities: np.ndarray          # (N, 3) float64
    forces: np.ndarray              # (N, 3) float64
    normals: np.ndarray             # (N, 3) float64, unit (or +y fallback)
    step_count: int = 0
    degenerate_springs: int = 0     # cumulative skipped zero-length springs


def make_state(mesh: ClothMesh) -> SolverState:
    n = mesh.num_nodes
    return SolverState(
        positions=mesh.positions.astype(np.float64).copy(),
        previous_positions=mesh.positions.astype(np.float64).copy(),
        velocities=np.zeros((n, 3), dtype=np.float64),
        forces=np.zeros((n, 3), dtype=np.float64),
        normals=compute_vertex_normals(mesh),
    )


def spring_force(pos_a, pos_b, vel_a, vel_b, rest_length, stiffness, damping):
    """Force on the first endpoint of a single spring (second gets -force)."""
    pos_a = np.asarray(pos_a, dtype=np.float64)
    pos_b = np.asarray(pos_b, dtype=np.float64)
    delta = pos_b - pos_a
    length = float(np.linalg.norm(delta))
    if length < 1e-12:
        return np.zeros(3)
    axis = delta / length
    rel_vel = float((np.asarray(vel_b, dtype=np.float64) - np.asarray(vel_a, dtype=np.float64)) @ axis)
    magnitude = stiffness * (length - rest_length) + damping * rel_vel
    return magnitude * axis


def accumulate_forces(
    state: SolverState,
    mesh: ClothMesh,
    params: SimParams,
    external_accel: np.ndarray = None,
) -> None:
    """Rebuild state.forces: springs, then gravity and any external
    acceleration, then zero out pinned nodes last."""
    n = mesh.num_nodes
    pos = state.positions.tolist()
    vel = state.velocities.tolist()
    fx = [0.0] * n
    fy = [0.0] * n
    fz = [0.0] * n
    k_kind = params.stiffness
    c = params.damping
    degenerate = 0

    for a, b, rest, kind in _spring_rows(mesh):
        pa = pos[a]
        pb = pos[b]
        dx = pb[0] - pa[0]
        dy = pb[1] - pa[1]
        dz = pb[2] - pa[2]
        length = sqrt(dx * dx + dy * dy + dz * dz)
        if length < 1e-12:
            degenerate += 1
            continue
        ux = dx / length
        uy = dy / length
        uz = dz / length
        va = vel[a]
        vb = vel[b]
        rel = (vb[0] - va[0]) * ux + (vb[1] - va[1]) * uy + (vb[2] - va[2]) * uz
        mag = k_kind[kind] * (length - rest) + c * rel
        gx = mag * ux
        gy = mag * uy
        gz = mag * uz
        fx[a] += gx
        fy[a] += gy
        fz[a] += gz
        fx[b] -= gx
        fy[b] -= gy
        fz[b] -= gz

    state.degenerate_springs += degenerate
    forces = state.forces
    forces[:, 0] = fx
    forces[:, 1] = fy
    forces[:, 2] = fz
    forces += mesh.masses[:, None] * np.asarray(params.gravity)
    if external_accel is not None:
        forces += mesh.masses[:, None] * external_accel
    forces[mesh.pinned] = 0.0


def _spring_rows(mesh: ClothMesh):
    rows = getattr(mesh, "_solver_spring_rows", None)
    if rows is None:
        rows = list(
            zip(
                mesh.spring_indices[:, 0].tolist(),
                mesh.spring_indices[:, 1].tolist(),
                mesh.spring_rest_lengths.tolist(),
                mesh.spring_kinds.tolist(),
            )
        )
        mesh._solver_spring_rows = rows
    return rows


def integrate(state: SolverState, mesh: ClothMesh, params: SimParams, dt: float = None) -> None:
    """One Euler update from state.forces; records pre-step positions."""
    if dt is None:
        dt = params.dt
    state.previous_positions[:] = state.positions
    free = ~mesh.pinned
    masses = mesh.masses[free, None]
    if params.explicit_euler:
        state.positions[free] += state.velocities[free] * dt
        state.velocities[free] += state.forces[free] / masses * dt
    else:
        state.velocities[free] += state.forces[free] / masses * dt
        state.positions[free] += state.velocities[free] * dt
    state.velocities[mesh.pinned] = 0.0
    state.step_count += 1
    _check_finite(state)


def _check_finite(state: SolverState) -> None:
    bad = ~np.isfinite(state.positions).all(axis=1) | ~np.isfinite(state.velocities).all(axis=1)
    if bad.any():
        node = int(np.nonzero(bad)[0][0])
        raise DivergenceError(
            f"node {node} became non-finite at step {state.step_count}; "
            "reduce dt or stiffness"
        )


def step(
    state: SolverState,
    mesh: ClothMesh,
    params: SimParams,
    obstacle: TriangleMesh = None,
    external_accel: np.ndarray = None,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
) -> int:
    """One frame: forces and integration (optionally substepped), collision
    detect + respond against a static obstacle, then a normal refresh.

    Returns the number of edge-triangle hits this frame.
    """
    sub = params.substeps
    sub_dt = params.dt / sub
    for _ in range(sub):
        accumulate_forces(state, mesh, params, external_accel)
        integrate(state, mesh, params, dt=sub_dt)

    hits = 0
    if obstacle is not None:
        accumulator, hits = detect_all(state.positions, mesh, obstacle, params, pair_budget)
        apply_collision_response(
            state.positions,
            state.velocities,
            accumulator,
            pinned=mesh.pinned,
            average=params.average_response,
        )

    state.normals = compute_vertex_normals(mesh, state.positions)
    return hits


def kinetic_energy(state: SolverState, mesh: ClothMesh) -> float:
    speeds_sq = np.einsum("ij,ij->i", state.velocities, state.velocities)
    return float(0.5 * (mesh.masses * speeds_sq).sum())


def spring_potential_energy(state: SolverState, mesh: ClothMesh, params: SimParams) -> float:
    delta = state.positions[mesh.spring_indices[:, 1]] - state.positions[mesh.spring_indices[:, 0]]
    lengths = np.linalg.norm(delta, axis=1)
    k = np.asarray(params.stiffness)[mesh.spring_kinds]
    stretch = lengths - mesh.spring_rest_lengths
    return float(0.5 * (k * stretch * stretch).sum())
