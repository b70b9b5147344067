"""File formats used by the benchmark harness.

Three concerns live here: per-frame timing statistics as CSV, triangle mesh
exchange as Wavefront OBJ (the only geometry format the CLI accepts), and
deterministic PNG snapshots rendered with a tiny orthographic z-buffer
rasterizer. Everything is pure numpy plus Pillow for the PNG encode, so
identical inputs always produce identical bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

__all__ = [
    "STATS_FIELDS",
    "FrameStats",
    "write_stats_csv",
    "parse_stats_csv",
    "load_obj",
    "write_obj",
    "snapshot_png",
]


STATS_FIELDS = (
    "frame",
    "wall_ms",
    "fps",
    "nodes",
    "springs",
    "obstacle_triangles",
    "collision_hits",
    "backend",
)


@dataclass(frozen=True)
class FrameStats:
    """One benchmark row: timing and scene census for a single frame."""

    frame: int
    wall_ms: float
    fps: float
    nodes: int
    springs: int
    obstacle_triangles: int
    collision_hits: int
    backend: str

    def as_row(self) -> list:
        return [
            str(self.frame),
            f"{self.wall_ms:.3f}",
            f"{self.fps:.2f}",
            str(self.nodes),
            str(self.springs),
            str(self.obstacle_triangles),
            str(self.collision_hits),
            self.backend,
        ]


def write_stats_csv(path, rows) -> None:
    """Write per-frame stats with a fixed header and fixed decimal places."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_FIELDS)
        for row in rows:
            writer.writerow(row.as_row())


def parse_stats_csv(path) -> list:
    """Read a stats CSV back into FrameStats rows, checking the header."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(STATS_FIELDS):
            raise ValueError(f"unexpected stats header {header!r} in {path}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(STATS_FIELDS):
                raise ValueError(f"{path}:{lineno}: expected {len(STATS_FIELDS)} columns, got {len(row)}")
            out.append(
                FrameStats(
                    frame=int(row[0]),
                    wall_ms=float(row[1]),
                    fps=float(row[2]),
                    nodes=int(row[3]),
                    springs=int(row[4]),
                    obstacle_triangles=int(row[5]),
                    collision_hits=int(row[6]),
                    backend=row[7],
                )
            )
    return out


def _parse_face_token(token: str, num_vertices: int, path, lineno: int) -> int:
    """Resolve one face corner reference to a 0-based vertex index.

    OBJ corners may carry texture/normal slots (``v/vt/vn``); only the vertex
    slot matters here. Indices are 1-based, and negative values count back
    from the end of the vertex list so far.
    """
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ValueError(f"{path}:{lineno}: bad face index {token!r}") from None
    if idx > 0:
        resolved = idx - 1
    elif idx < 0:
        resolved = num_vertices + idx
    else:
        raise ValueError(f"{path}:{lineno}: face index 0 is not valid")
    if not 0 <= resolved < num_vertices:
        raise ValueError(f"{path}:{lineno}: face index {idx} out of range (have {num_vertices} vertices)")
    return resolved


def load_obj(path):
    """Load vertices and triangles from a Wavefront OBJ file.

    Only ``v`` and ``f`` records are consumed; comments and other record
    types are skipped. Polygonal faces are fan-triangulated around the first
    corner. Malformed records raise ValueError naming the offending line.

    Returns (vertices, triangles) as float64 (V, 3) and int32 (F, 3) arrays.
    """
    path = Path(path)
    vertices = []
    triangles = []
    with path.open("r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates, got {len(parts) - 1}")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad vertex coordinate in {line!r}") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: face needs at least 3 corners, got {len(parts) - 1}")
                corners = [_parse_face_token(tok, len(vertices), path, lineno) for tok in parts[1:]]
                for k in range(1, len(corners) - 1):
                    triangles.append([corners[0], corners[k], corners[k + 1]])
    if not vertices:
        raise ValueError(f"{path}: no vertices found")
    if not triangles:
        raise ValueError(f"{path}: no faces found")
    verts = np.asarray(vertices, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int32)
    return verts, tris


def write_obj(path, vertices, triangles) -> None:
    """Write a triangle mesh as OBJ with 1-based face indices."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles)
    path = Path(path)
    with path.open("w") as fh:
        for v in vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in triangles:
            fh.write(f"f {int(t[0]) + 1} {int(t[1]) + 1} {int(t[2]) + 1}\n")


_VIEW_AXES = {"x": (1, 2, 0), "y": (0, 2, 1), "z": (0, 1, 2)}

# RGB tints applied on top of the depth shade.
_CLOTH_TINT = np.array([0.92, 0.92, 0.98])
_OBSTACLE_TINT = np.array([0.45, 0.62, 0.85])


def _rasterize(depth_buf, material_buf, points2d, depths, triangles, material: int) -> None:
    """Paint triangles into the shared z-buffer, nearest depth wins.

    Pixel centers sit at half-integer coordinates. Ties keep the earlier
    triangle (strict greater-than test) so the result is order-deterministic.
    """
    height, width = depth_buf.shape
    for tri in triangles:
        p = points2d[tri]
        z = depths[tri]
        xmin = max(int(np.floor(p[:, 0].min())), 0)
        xmax = min(int(np.ceil(p[:, 0].max())), width - 1)
        ymin = max(int(np.floor(p[:, 1].min())), 0)
        ymax = min(int(np.ceil(p[:, 1].max())), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        xs = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        ys = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        x0, y0 = p[0]
        x1, y1 = p[1]
        x2, y2 = p[2]
        denom = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(denom) < 1e-12:
            continue
        w0 = ((y1 - y2) * (gx - x2) + (x2 - x1) * (gy - y2)) / denom
        w1 = ((y2 - y0) * (gx - x2) + (x0 - x2) * (gy - y2)) / denom
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue
        zpix = w0 * z[0] + w1 * z[1] + w2 * z[2]
        depth_tile = depth_buf[ymin : ymax + 1, xmin : xmax + 1]
        update = inside & (zpix > depth_tile)
        depth_tile[update] = zpix[update]
        material_buf[ymin : ymax + 1, xmin : xmax + 1][update] = material


def snapshot_png(path, positions, triangles, *, obstacle_vertices=None,
                 obstacle_triangles=None, size=(320, 240), axis: str = "y") -> None:
    """Render an orthographic depth-shaded snapshot of the scene to PNG.

    The camera looks along the negative ``axis`` direction (so larger
    coordinates are nearer and brighter). Cloth and obstacle share one
    z-buffer; the cloth renders in an off-white tint and the obstacle in
    blue. All arithmetic is plain float64 numpy with a fixed triangle
    order, so byte output is deterministic for identical inputs.
    """
    if axis not in _VIEW_AXES:
        raise ValueError(f"axis must be one of {sorted(_VIEW_AXES)}, got {axis!r}")
    from PIL import Image

    ax_u, ax_v, ax_depth = _VIEW_AXES[axis]
    width, height = int(size[0]), int(size[1])
    if width < 8 or height < 8:
        raise ValueError(f"snapshot size too small: {size!r}")

    positions = np.asarray(positions, dtype=np.float64)
    all_points = [positions]
    if obstacle_vertices is not None:
        all_points.append(np.asarray(obstacle_vertices, dtype=np.float64))
    stacked = np.vstack(all_points)

    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    pad = 0.05 * span
    lo = lo - pad
    hi = hi + pad
    span = hi - lo

    scale = min((width - 1) / span[ax_u], (height - 1) / span[ax_v])

    def project(points):
        px = (points[:, ax_u] - lo[ax_u]) * scale
        # image rows grow downward; flip v so +v points up on screen
        py = (height - 1) - (points[:, ax_v] - lo[ax_v]) * scale
        return np.stack([px, py], axis=1), points[:, ax_depth]

    depth_buf = np.full((height, width), -np.inf)
    material_buf = np.zeros((height, width), dtype=np.uint8)

    pts2d, depths = project(positions)
    _rasterize(depth_buf, material_buf, pts2d, depths, np.asarray(triangles), material=1)
    if obstacle_vertices is not None and obstacle_triangles is not None:
        opts2d, odepths = project(np.asarray(obstacle_vertices, dtype=np.float64))
        _rasterize(depth_buf, material_buf, opts2d, odepths, np.asarray(obstacle_triangles), material=2)

    covered = material_buf > 0
    shade = np.zeros((height, width))
    if covered.any():
        zmin = depth_buf[covered].min()
        zmax = depth_buf[covered].max()
        zspan = max(zmax - zmin, 1e-12)
        shade[covered] = 0.25 + 0.75 * (depth_buf[covered] - zmin) / zspan

    rgb = np.zeros((height, width, 3))
    rgb[material_buf == 1] = shade[material_buf == 1, None] * _CLOTH_TINT
    rgb[material_buf == 2] = shade[material_buf == 2, None] * _OBSTACLE_TINT
    img = Image.fromarray((np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8), mode="RGB")
    img.save(Path(path), format="PNG")
