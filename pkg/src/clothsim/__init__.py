"""Headless real-time cloth simulation.

A mass-spring cloth solver with edge-triangle collision handling, available
as a float64 reference implementation (clothsim.solver) and as a
deterministic fixed-point compute pipeline (clothsim.gpu) that mirrors how
the solver maps onto GPU compute passes. clothsim.bench and the
clothsim-bench console script time both backends over standard scenarios.
"""

from .collision import (
    CollisionBudgetError,
    Contact,
    ContactAccumulator,
    EdgeTriangleHit,
    apply_collision_response,
    detect_all,
    edge_triangle_intersect,
)
from .mesh import (
    ClothMesh,
    SimParams,
    SpringKind,
    TriangleMesh,
    compute_face_normals,
    compute_vertex_normals,
    generate_cloth_grid,
    generate_icosphere,
    spring_count_formula,
    unique_edges,
)
from .scenes import ScenarioConfig, Scene, build_scene
from .solver import (
    DivergenceError,
    SolverState,
    accumulate_forces,
    integrate,
    kinetic_energy,
    make_state,
    spring_force,
    spring_potential_energy,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ClothMesh",
    "SimParams",
    "SpringKind",
    "TriangleMesh",
    "compute_face_normals",
    "compute_vertex_normals",
    "generate_cloth_grid",
    "generate_icosphere",
    "spring_count_formula",
    "unique_edges",
    "CollisionBudgetError",
    "Contact",
    "ContactAccumulator",
    "EdgeTriangleHit",
    "apply_collision_response",
    "detect_all",
    "edge_triangle_intersect",
    "DivergenceError",
    "SolverState",
    "accumulate_forces",
    "integrate",
    "kinetic_energy",
    "make_state",
    "spring_force",
    "spring_potential_energy",
    "step",
    "ScenarioConfig",
    "Scene",
    "build_scene",
]
