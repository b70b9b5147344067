"""Benchmark orchestration: timed scenario runs, resolution sweeps, probes.

Timing policy: only the step call is inside the timer; snapshot and
verification readbacks happen outside it. Mean figures use the steady-state
window (frames after the first 10, or all frames for very short runs) since
early frames carry warm-up noise. One backend runs at a time so timings never
contend.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .collision import DEFAULT_PAIR_BUDGET, CollisionBudgetError
from .gpu import CapacityError, build_pipeline, get_adapter, max_nodes_probe
from .io import FrameStats, snapshot_png, write_stats_csv
from .mesh import spring_count_formula
from .scenes import Scene, ScenarioConfig, build_scene, grid_for_nodes
from .solver import make_state, step

__all__ = [
    "STEADY_STATE_SKIP",
    "REALTIME_FPS",
    "PARITY_BASE_TOL",
    "PARITY_BASE_FRAMES",
    "VerificationError",
    "BackendRun",
    "ParityReport",
    "ScenarioResult",
    "SweepRow",
    "SWEEP_FIELDS",
    "run_backend",
    "run_scenario",
    "run_resolution_sweep",
    "write_sweep_csv",
    "probe_limits",
    "steady_state_mean",
]

STEADY_STATE_SKIP = 10
REALTIME_FPS = 30.0
PARITY_BASE_TOL = 1e-3
PARITY_BASE_FRAMES = 120


class VerificationError(RuntimeError):
    """A readback check failed during a verified run."""


@dataclass
class BackendRun:
    backend: str
    stats: list
    final_positions: np.ndarray
    mean_wall_ms: float
    mean_fps: float
    total_hits: int
    snapshot_paths: list


@dataclass
class ParityReport:
    max_deviation: float
    tolerance: float
    frames: int

    @property
    def passed(self) -> bool:
        return bool(self.max_deviation <= self.tolerance)

    def describe(self) -> str:
        state = "within" if self.passed else "EXCEEDS"
        return (
            f"parity over {self.frames} frames: max |cpu - gpu| = "
            f"{self.max_deviation:.3e}, {state} tolerance {self.tolerance:.3e}"
        )


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    scene: Scene
    runs: dict
    parity: ParityReport | None
    csv_path: Path | None


def steady_state_mean(stats) -> tuple:
    """Mean (wall_ms, fps) over the steady-state window."""
    window = stats[STEADY_STATE_SKIP:] if len(stats) > STEADY_STATE_SKIP else stats
    wall = float(np.mean([r.wall_ms for r in window]))
    fps = float(np.mean([r.fps for r in window]))
    return wall, fps


def parity_tolerance(frames: int, base_tol: float = PARITY_BASE_TOL) -> float:
    """Deviation budget grows with trajectory length, never below base."""
    return base_tol * max(1.0, frames / PARITY_BASE_FRAMES)


def _snapshot_path(output: Path, backend: str, frame: int) -> Path:
    stem = output.with_suffix("")
    return Path(f"{stem}_{backend}_{frame:04d}.png")


def _verify_frame(positions, scene: Scene, frame: int, backend: str) -> None:
    if not np.isfinite(positions).all():
        bad = int(np.argwhere(~np.isfinite(positions))[0][0])
        raise VerificationError(f"{backend} frame {frame}: node {bad} is not finite")
    pinned = scene.mesh.pinned
    if pinned.any():
        reference = scene.mesh.positions[pinned]
        if backend == "gpu":
            # the engine holds positions in f32; pinned nodes are bit-frozen
            # in that representation, not in float64
            reference = reference.astype(np.float32).astype(np.float64)
        drift = np.abs(positions[pinned] - reference).max()
        if drift != 0.0:
            raise VerificationError(f"{backend} frame {frame}: pinned nodes moved by {drift:.3e}")


def run_backend(
    scene: Scene,
    config: ScenarioConfig,
    backend: str,
    *,
    verify: bool = False,
    device=None,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
) -> BackendRun:
    """Step one backend for config.frames frames, timing each step."""
    n_obs = scene.obstacle.num_triangles if scene.obstacle is not None else 0
    nodes = scene.mesh.num_nodes
    springs = scene.mesh.num_springs
    output = Path(config.output) if config.output is not None else None
    snapshots = []
    rows = []

    if backend == "cpu":
        state = make_state(scene.mesh)
        stepper = None
    elif backend == "gpu":
        dev = device if device is not None else get_adapter()
        stepper = build_pipeline(scene.mesh, scene.obstacle, scene.params, dev, pair_budget)
        if scene.external_accel is not None:
            stepper.set_external_accel(scene.external_accel)
        state = None
    else:
        raise ValueError(f"unknown backend {backend!r}")

    for frame in range(config.frames):
        t0 = time.perf_counter()
        if backend == "cpu":
            hits = step(
                state, scene.mesh, scene.params,
                obstacle=scene.obstacle,
                external_accel=scene.external_accel,
                pair_budget=pair_budget,
            )
        else:
            hits = stepper.step().hits
        wall_ms = (time.perf_counter() - t0) * 1000.0
        rows.append(
            FrameStats(
                frame=frame,
                wall_ms=wall_ms,
                fps=1000.0 / max(wall_ms, 1e-9),
                nodes=nodes,
                springs=springs,
                obstacle_triangles=n_obs,
                collision_hits=hits,
                backend=backend,
            )
        )

        need_positions = verify or (
            config.snapshot_every is not None and (frame + 1) % config.snapshot_every == 0
        )
        if need_positions:
            positions = state.positions if backend == "cpu" else stepper.read_positions().astype(np.float64)
            if verify:
                _verify_frame(positions, scene, frame, backend)
            if config.snapshot_every is not None and (frame + 1) % config.snapshot_every == 0:
                path = _snapshot_path(output, backend, frame)
                obstacle = scene.obstacle
                snapshot_png(
                    path, positions, scene.mesh.triangles,
                    obstacle_vertices=None if obstacle is None else obstacle.vertices,
                    obstacle_triangles=None if obstacle is None else obstacle.triangles,
                    axis=scene.snapshot_axis,
                )
                snapshots.append(path)

    final = state.positions.copy() if backend == "cpu" else stepper.read_positions().astype(np.float64)
    mean_wall, mean_fps = steady_state_mean(rows)
    return BackendRun(
        backend=backend,
        stats=rows,
        final_positions=final,
        mean_wall_ms=mean_wall,
        mean_fps=mean_fps,
        total_hits=sum(r.collision_hits for r in rows),
        snapshot_paths=snapshots,
    )


def run_scenario(
    config: ScenarioConfig,
    *,
    verify: bool = False,
    parity_tol: float | None = None,
    device=None,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
) -> ScenarioResult:
    """Build the scene and run the configured backend(s).

    In ``both`` mode the cpu run goes first, then the gpu run starts from the
    identical initial mesh, and the final positions are compared against a
    frame-count-scaled tolerance. The stats CSV (when config.output is set)
    holds the rows of every backend that ran, tagged by the backend column.
    """
    if config.snapshot_every is not None and config.output is None:
        raise ValueError("snapshots need an output path; pass --out")

    scene = build_scene(config)
    backends = ("cpu", "gpu") if config.backend == "both" else (config.backend,)
    runs = {}
    for backend in backends:
        runs[backend] = run_backend(
            scene, config, backend, verify=verify, device=device, pair_budget=pair_budget,
        )

    parity = None
    if config.backend == "both":
        deviation = float(
            np.abs(runs["cpu"].final_positions - runs["gpu"].final_positions).max()
        )
        tol = parity_tol if parity_tol is not None else parity_tolerance(config.frames)
        parity = ParityReport(max_deviation=deviation, tolerance=tol, frames=config.frames)

    csv_path = None
    if config.output is not None:
        csv_path = Path(config.output)
        all_rows = [row for backend in backends for row in runs[backend].stats]
        write_stats_csv(csv_path, all_rows)

    return ScenarioResult(config=config, scene=scene, runs=runs, parity=parity, csv_path=csv_path)


SWEEP_FIELDS = (
    "nodes_requested",
    "nx",
    "ny",
    "nodes",
    "springs",
    "cpu_mean_wall_ms",
    "cpu_mean_fps",
    "cpu_below_30fps",
    "gpu_mean_wall_ms",
    "gpu_mean_fps",
    "gpu_below_30fps",
    "cpu_over_gpu_ratio",
    "status",
    "reason",
)


@dataclass
class SweepRow:
    nodes_requested: int
    nx: int
    ny: int
    nodes: int
    springs: int
    cpu_mean_wall_ms: float | None = None
    cpu_mean_fps: float | None = None
    cpu_below_30fps: bool | None = None
    gpu_mean_wall_ms: float | None = None
    gpu_mean_fps: float | None = None
    gpu_below_30fps: bool | None = None
    cpu_over_gpu_ratio: float | None = None
    status: str = "ok"
    reason: str = ""

    def as_row(self) -> list:
        def num(x, places):
            return "" if x is None else f"{x:.{places}f}"

        def flag(x):
            return "" if x is None else ("yes" if x else "no")

        return [
            str(self.nodes_requested),
            str(self.nx),
            str(self.ny),
            str(self.nodes),
            str(self.springs),
            num(self.cpu_mean_wall_ms, 3),
            num(self.cpu_mean_fps, 2),
            flag(self.cpu_below_30fps),
            num(self.gpu_mean_wall_ms, 3),
            num(self.gpu_mean_fps, 2),
            flag(self.gpu_below_30fps),
            num(self.cpu_over_gpu_ratio, 3),
            self.status,
            self.reason,
        ]


def write_sweep_csv(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_FIELDS)
        for row in rows:
            writer.writerow(row.as_row())


def run_resolution_sweep(
    base_config: ScenarioConfig,
    resolutions,
    *,
    verify: bool = False,
    device=None,
    pair_budget: int = DEFAULT_PAIR_BUDGET,
) -> list:
    """One summary row per requested node count, ascending.

    Per-resolution failures (capacity, collision budget, divergence) are
    recorded in the row's status/reason and the sweep moves on, so a sweep
    always yields exactly one row per requested resolution.
    """
    resolutions = list(resolutions)
    if not resolutions:
        raise ValueError("sweep needs at least one resolution")
    if any(b <= a for a, b in zip(resolutions, resolutions[1:])):
        raise ValueError(f"sweep resolutions must be strictly ascending, got {resolutions}")

    rows = []
    for requested in resolutions:
        nx, ny = grid_for_nodes(requested)
        counts = spring_count_formula(nx, ny)
        row = SweepRow(
            nodes_requested=requested,
            nx=nx,
            ny=ny,
            nodes=nx * ny,
            springs=sum(counts),
        )
        config = dataclasses.replace(base_config, grid=(nx, ny), output=None, snapshot_every=None)
        try:
            result = run_scenario(
                config, verify=verify, device=device, pair_budget=pair_budget,
            )
        except (CapacityError, CollisionBudgetError, RuntimeError) as exc:
            row.status = type(exc).__name__
            row.reason = str(exc).splitlines()[0]
            rows.append(row)
            continue
        cpu = result.runs.get("cpu")
        gpu = result.runs.get("gpu")
        if cpu is not None:
            row.cpu_mean_wall_ms = cpu.mean_wall_ms
            row.cpu_mean_fps = cpu.mean_fps
            row.cpu_below_30fps = cpu.mean_fps < REALTIME_FPS
        if gpu is not None:
            row.gpu_mean_wall_ms = gpu.mean_wall_ms
            row.gpu_mean_fps = gpu.mean_fps
            row.gpu_below_30fps = gpu.mean_fps < REALTIME_FPS
        if cpu is not None and gpu is not None and gpu.mean_wall_ms > 0:
            row.cpu_over_gpu_ratio = cpu.mean_wall_ms / gpu.mean_wall_ms
        rows.append(row)
    return rows


def first_below_realtime(rows, backend: str):
    """Node count of the first sweep row whose mean fps dropped below 30."""
    key = f"{backend}_below_30fps"
    for row in rows:
        if getattr(row, key):
            return row.nodes
    return None


def probe_limits(device=None) -> tuple:
    """Probe the adapter's allocation ceiling for square cloth grids.

    Returns (ProbeReport, printable text). Raises AdapterUnavailable when no
    adapter can be created.
    """
    dev = device if device is not None else get_adapter()
    report = max_nodes_probe(dev.limits)
    lines = [
        "device limits:",
        f"  max storage binding size: {dev.limits.max_storage_buffer_binding_size} bytes",
        f"  max buffer size:          {dev.limits.max_buffer_size} bytes",
        f"  max workgroups per dim:   {dev.limits.max_compute_workgroups_per_dimension}",
        f"  max invocations per wg:   {dev.limits.max_compute_invocations_per_workgroup}",
        f"largest square cloth that fits: {report.max_side} x {report.max_side} "
        f"({report.max_nodes} nodes)",
        f"limiting binding: {report.limiting_role} at {report.limiting_bytes} bytes "
        f"(ceiling {report.binding_ceiling})",
        f"total buffer bytes at that size: {report.total_bytes}",
        "layout arithmetic: nodes = side^2; "
        "springs = 2*side*(side-1) + 2*(side-1)^2 + 2*side*(side-2); "
        "bytes(role) = stride(role) * count(role)",
    ]
    if report.note:
        lines.append(f"note: {report.note}")
    return report, "\n".join(lines)
