"""Scene construction for the benchmark harness.

Three scenarios are supported:

``hanging``
    A vertical cloth pinned along its top row, influenced only by gravity.
    No obstacle is allowed; this is the pure pipeline benchmark.

``drop``
    A horizontal cloth released just above an obstacle (an icosphere or an
    OBJ mesh) and left to drape over it.

``pull``
    The drop geometry plus a constant lateral acceleration applied to the
    nodes of one cloth edge, dragging the fabric across the obstacle.

Default coefficients are derived from the step size rather than hard-coded:
with node mass m and step dt the structural stiffness is chosen so that
dt^2 * k / m = 0.15, and damping is 20% of critical for a single spring
(damping = 0.2 * sqrt(k * m)). The worst-case node touches 16 springs, so the
effective dt^2 * k_eff / m stays at 2.4, well inside the semi-implicit Euler
stability bound of 4. A 64x64 hanging cloth at dt=0.016 settles without
visible jitter under these values, which is how they were tuned.

The hanging scene defaults to dt=0.016 (one step per 60 Hz frame). Contact
scenes (drop, pull) default to dt=0.004 instead. The stability rule above
caps stiffness at 0.15 * m / dt^2, so at dt=0.016 a spring stretches by
g * dt^2 / 0.15 = 1.7 cm under one node's weight, about 40% of a 24x24
grid's rest length; the unsupported skirt of a draping cloth then drags the
contact region through the obstacle faster than the once-per-step collision
pass can push it back. Quartering dt raises the stiffness cap sixteenfold
(static sag ~2.4% of rest) and runs collision handling four times as often
in simulated time, which is what lets the cloth settle on the obstacle
instead of tunnelling. Both defaults yield the same wall-clock cost per
step; --dt overrides either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import load_obj
from .mesh import (
    ClothMesh,
    SimParams,
    TriangleMesh,
    generate_cloth_grid,
    generate_icosphere,
)

__all__ = [
    "CLOTH_SIZE",
    "NODE_MASS",
    "SPHERE_RADIUS",
    "ScenarioConfig",
    "Scene",
    "stable_coefficients",
    "parse_grid_spec",
    "parse_obstacle_spec",
    "grid_for_nodes",
    "build_scene",
]

SCENE_NAMES = ("hanging", "drop", "pull")
BACKEND_NAMES = ("cpu", "gpu", "both")

CLOTH_SIZE = 1.0
NODE_MASS = 0.05
SPHERE_RADIUS = 0.3
# Drop clearance and response margin, both as fractions of the sphere radius.
# Collision response pushes nodes to the face plane plus the margin, but an
# icosphere face plane sits below the analytic sphere by the face sagitta:
# at subdivision 2 the face circumradius is about 0.159 * radius, giving a
# sagitta near 0.013 * radius. The margin must exceed that for a node
# resting on a face centre to clear radius - margin; 0.02 leaves headroom
# for contact chatter on top of the plane offset.
CLEARANCE_FACTOR = 0.05
MARGIN_FACTOR = 0.02
MAX_ICOSPHERE_SUBDIV = 7

# Default step size for scenes with an obstacle; see the module docstring.
CONTACT_DT = 0.004
HANGING_DT = 0.016


def stable_coefficients(node_mass: float, dt: float) -> tuple:
    """Stiffness and damping that keep the integrator stable at this dt."""
    stiffness = 0.15 * node_mass / (dt * dt)
    damping = 0.2 * math.sqrt(stiffness * node_mass)
    return stiffness, damping


@dataclass
class ScenarioConfig:
    """Validated description of one benchmark run.

    ``dt``, ``stiffness`` and ``damping`` are optional overrides; None means
    "use the derived default". ``pull_accel`` only matters for the pull
    scene.
    """

    scene: str = "hanging"
    grid: tuple = (32, 32)
    obstacle: str | None = None
    backend: str = "cpu"
    frames: int = 120
    dt: float | None = None
    stiffness: float | None = None
    damping: float | None = None
    snapshot_every: int | None = None
    output: str | None = None
    pull_accel: float = 4.0

    def __post_init__(self):
        if self.scene not in SCENE_NAMES:
            raise ValueError(f"scene must be one of {SCENE_NAMES}, got {self.scene!r}")
        if self.backend not in BACKEND_NAMES:
            raise ValueError(f"backend must be one of {BACKEND_NAMES}, got {self.backend!r}")
        nx, ny = self.grid
        if nx < 2 or ny < 2:
            raise ValueError(f"grid must be at least 2x2, got {nx}x{ny}")
        if self.frames < 1:
            raise ValueError(f"frames must be positive, got {self.frames}")
        if self.scene == "hanging" and self.obstacle is not None:
            raise ValueError("the hanging scene excludes collision processing; drop --obstacle")
        if self.scene in ("drop", "pull") and self.obstacle is None:
            raise ValueError(f"the {self.scene} scene requires --obstacle (a path or icosphere:K)")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.stiffness is not None and not self.stiffness > 0:
            raise ValueError(f"stiffness must be positive, got {self.stiffness}")
        if self.damping is not None and self.damping < 0:
            raise ValueError(f"damping must be non-negative, got {self.damping}")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise ValueError(f"snapshot-every must be >= 1, got {self.snapshot_every}")


@dataclass
class Scene:
    """A fully built scene: mesh, parameters, optional obstacle and forcing.

    ``sphere_center``/``sphere_radius`` are set only when the obstacle is a
    generated icosphere, enabling analytic containment checks downstream.
    """

    name: str
    mesh: ClothMesh
    params: SimParams
    obstacle: TriangleMesh | None = None
    external_accel: np.ndarray | None = None
    sphere_center: np.ndarray | None = None
    sphere_radius: float | None = None
    snapshot_axis: str = "y"


def parse_grid_spec(text: str) -> tuple:
    """Parse ``NXxNY`` (e.g. ``32x32``) into an (nx, ny) pair."""
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"grid spec must look like 32x32, got {text!r}")
    try:
        nx, ny = int(parts[0]), int(parts[1])
    except ValueError:
        raise ValueError(f"grid spec must look like 32x32, got {text!r}") from None
    if nx < 2 or ny < 2:
        raise ValueError(f"grid must be at least 2x2, got {text!r}")
    return nx, ny


def grid_for_nodes(nodes: int) -> tuple:
    """Square grid whose node count is closest to the requested total."""
    if nodes < 4:
        raise ValueError(f"need at least 4 nodes for a 2x2 grid, got {nodes}")
    side = max(2, round(math.sqrt(nodes)))
    return side, side


def parse_obstacle_spec(spec: str):
    """Split an obstacle argument into ("icosphere", k) or ("obj", path)."""
    if spec.startswith("icosphere:"):
        tail = spec.split(":", 1)[1]
        try:
            k = int(tail)
        except ValueError:
            raise ValueError(f"icosphere subdivision must be an integer, got {spec!r}") from None
        if not 0 <= k <= MAX_ICOSPHERE_SUBDIV:
            raise ValueError(f"icosphere subdivision must be in [0, {MAX_ICOSPHERE_SUBDIV}], got {k}")
        return ("icosphere", k)
    return ("obj", spec)


def _build_params(
    config: ScenarioConfig,
    response_margin: float | None = None,
    default_dt: float = HANGING_DT,
) -> SimParams:
    dt = config.dt if config.dt is not None else default_dt
    k_default, c_default = stable_coefficients(NODE_MASS, dt)
    stiffness = config.stiffness if config.stiffness is not None else k_default
    damping = config.damping if config.damping is not None else c_default
    kwargs = dict(dt=dt, stiffness=stiffness, damping=damping)
    if response_margin is not None:
        kwargs["response_margin"] = response_margin
    return SimParams(**kwargs)


def _load_obstacle(config: ScenarioConfig):
    """Returns (TriangleMesh, sphere_center, sphere_radius, response_margin)."""
    kind, value = parse_obstacle_spec(config.obstacle)
    if kind == "icosphere":
        radius = SPHERE_RADIUS * CLOTH_SIZE
        center = np.zeros(3)
        sphere = generate_icosphere(value, radius=radius, center=tuple(center))
        return sphere, center, radius, MARGIN_FACTOR * radius
    path = Path(value)
    if not path.exists():
        raise FileNotFoundError(f"obstacle mesh not found: {path}")
    vertices, triangles = load_obj(path)
    return TriangleMesh(vertices=vertices, triangles=triangles), None, None, None


def _rotate_xz_to_xy(positions: np.ndarray) -> np.ndarray:
    """Rigid rotation taking the generation plane (x, 0, z) to (x, -z, 0)."""
    rotated = np.zeros_like(positions)
    rotated[:, 0] = positions[:, 0]
    rotated[:, 1] = -positions[:, 2]
    return rotated


def _build_hanging(config: ScenarioConfig) -> Scene:
    nx, ny = config.grid
    mesh = generate_cloth_grid(
        nx, ny, width=CLOTH_SIZE, height=CLOTH_SIZE,
        total_mass=NODE_MASS * nx * ny, pinned_rows="first",
    )
    mesh.positions = _rotate_xz_to_xy(mesh.positions)
    params = _build_params(config)
    return Scene(name="hanging", mesh=mesh, params=params, snapshot_axis="z")


def _cloth_over_obstacle(config: ScenarioConfig):
    nx, ny = config.grid
    obstacle, center, radius, margin = _load_obstacle(config)
    if radius is not None:
        cloth_size = CLOTH_SIZE
        top = center[1] + radius
        clearance = CLEARANCE_FACTOR * radius
        cx, cz = center[0], center[2]
    else:
        lo = obstacle.vertices.min(axis=0)
        hi = obstacle.vertices.max(axis=0)
        cloth_size = 1.25 * max(hi[0] - lo[0], hi[2] - lo[2])
        top = hi[1]
        clearance = 0.05 * max(hi[1] - lo[1], 1e-6)
        cx, cz = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[2] + hi[2])
    mesh = generate_cloth_grid(
        nx, ny, width=cloth_size, height=cloth_size,
        total_mass=NODE_MASS * nx * ny, pinned_rows=None,
    )
    mesh.positions[:, 0] += cx - 0.5 * cloth_size
    mesh.positions[:, 2] += cz - 0.5 * cloth_size
    mesh.positions[:, 1] = top + clearance
    params = _build_params(config, response_margin=margin, default_dt=CONTACT_DT)
    return mesh, params, obstacle, center, radius


def _build_drop(config: ScenarioConfig) -> Scene:
    mesh, params, obstacle, center, radius = _cloth_over_obstacle(config)
    return Scene(
        name="drop", mesh=mesh, params=params, obstacle=obstacle,
        sphere_center=center, sphere_radius=radius, snapshot_axis="x",
    )


def _build_pull(config: ScenarioConfig) -> Scene:
    mesh, params, obstacle, center, radius = _cloth_over_obstacle(config)
    nx, ny = config.grid
    accel = np.zeros((mesh.num_nodes, 3))
    edge_nodes = [mesh.node_index(nx - 1, j) for j in range(ny)]
    accel[edge_nodes, 0] = config.pull_accel
    return Scene(
        name="pull", mesh=mesh, params=params, obstacle=obstacle,
        external_accel=accel, sphere_center=center, sphere_radius=radius,
        snapshot_axis="x",
    )


def build_scene(config: ScenarioConfig) -> Scene:
    """Build the mesh, parameters, obstacle and forcing for one scenario."""
    if config.scene == "hanging":
        return _build_hanging(config)
    if config.scene == "drop":
        return _build_drop(config)
    return _build_pull(config)
