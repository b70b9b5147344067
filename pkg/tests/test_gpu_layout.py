"""Buffer layout, binding-table/WGSL sync, capacity probe, dispatch grids."""

import re
import struct
from pathlib import Path

import numpy as np
import pytest

from clothsim.gpu.device import (
    ADAPTER_ENV,
    AdapterUnavailable,
    DispatchGrid,
    SoftwareDevice,
    get_adapter,
)
from clothsim.gpu.layout import (
    BINDINGS,
    PARAMS_UNIFORM_SIZE,
    SPRING_DTYPE,
    CapacityError,
    DeviceLimits,
    GpuBufferLayout,
    cloth_edge_count,
    cloth_triangle_count,
    grid_layout,
    max_nodes_probe,
)
from clothsim.mesh import generate_cloth_grid, unique_edges

import oracles

SHADER_DIR = Path(__file__).resolve().parent.parent / "src" / "clothsim" / "gpu" / "shaders"

# WGSL variable name -> layout role name
WGSL_NAME_TO_ROLE = {
    "params": "paramsUniform",
    "positions": "positions",
    "previous_positions": "previousPositions",
    "velocities": "velocities",
    "forces_fixed": "forcesFixedPoint",
    "inverse_masses": "inverseMasses",
    "external_accel": "externalAccel",
    "springs": "springTable",
    "cloth_tris": "triangleTable",
    "cloth_edges": "clothEdgeTable",
    "obstacle_tris": "obstacleVertices",
    "hit_counter": "hitCounter",
    "response_accumulator": "responseAccumulator",
    "response_count": "responseCount",
    "vertex_normals": "vertexNormals",
    "incidence_offsets": "normalIncidenceOffsets",
    "incidence_tris": "normalIncidenceTris",
}

BINDING_RE = re.compile(r"@group\(0\)\s*@binding\((\d+)\)\s*var<[^>]*>\s*(\w+)\s*:")


def _shader_sources():
    files = sorted(SHADER_DIR.glob("*.wgsl"))
    assert files, f"no shader sources under {SHADER_DIR}"
    return {f.name: f.read_text() for f in files}


def test_every_wgsl_binding_matches_the_table():
    seen_roles = set()
    for name, text in _shader_sources().items():
        for index, var in BINDING_RE.findall(text):
            assert var in WGSL_NAME_TO_ROLE, f"{name}: unmapped WGSL variable '{var}'"
            role = WGSL_NAME_TO_ROLE[var]
            assert BINDINGS[role][0] == int(index), (
                f"{name}: '{var}' declared at binding {index}, table says {BINDINGS[role][0]}"
            )
            seen_roles.add(role)
    assert seen_roles == set(BINDINGS), (
        "roles never referenced by any shader: " f"{sorted(set(BINDINGS) - seen_roles)}"
    )


def test_compute_shaders_use_overridable_workgroup_size():
    for name, text in _shader_sources().items():
        if "@compute" in text:
            assert "override WORKGROUP_SIZE" in text, name
            assert "@workgroup_size(WORKGROUP_SIZE)" in text, name


def test_spring_struct_field_order_matches_dtype():
    for name, text in _shader_sources().items():
        m = re.search(r"struct SpringEntry \{(.*?)\};", text, re.S)
        if not m:
            continue
        fields = re.findall(r"(\w+)\s*:\s*\w+(?:<\w+>)?\s*,", m.group(1))
        assert tuple(fields) == SPRING_DTYPE.names, name


def test_params_struct_identical_across_shaders():
    structs = set()
    for text in _shader_sources().values():
        m = re.search(r"struct SimParamsGpu \{(.*?)\};", text, re.S)
        if m:
            structs.add(re.sub(r"\s+", " ", m.group(1)).strip())
    assert len(structs) == 1


def test_params_uniform_packing():
    # vec3 + trailing scalar pairs pack to 16-byte rows, then scalars
    assert PARAMS_UNIFORM_SIZE == struct.calcsize("<3f f 3f f 4f 5I I 2I") == 80


def test_spring_dtype_is_32_byte_interleaved():
    assert SPRING_DTYPE.itemsize == 32
    assert SPRING_DTYPE.names == (
        "index_a",
        "index_b",
        "rest_length",
        "stiffness",
        "damping",
        "kind",
        "pad0",
        "pad1",
    )


def test_grid_layout_counts_match_a_real_mesh(icosphere1):
    nx, ny = 5, 4
    mesh = generate_cloth_grid(nx, ny)
    layout = grid_layout(nx, ny, num_obstacle_tris=len(icosphere1.triangles))
    assert layout.num_nodes == mesh.num_nodes
    assert layout.num_springs == mesh.num_springs
    assert layout.num_cloth_tris == len(mesh.triangles) == cloth_triangle_count(nx, ny)
    assert layout.num_cloth_edges == len(unique_edges(mesh.triangles)) == cloth_edge_count(nx, ny)
    assert layout.num_obstacle_tris == 80


def test_layout_byte_arithmetic():
    layout = grid_layout(64, 64)
    nodes = 64 * 64
    assert layout.spec("positions").nbytes == 12 * nodes
    assert layout.spec("inverseMasses").nbytes == 4 * nodes
    assert layout.spec("springTable").nbytes == 32 * layout.num_springs
    assert layout.spec("normalIncidenceOffsets").count == nodes + 1
    assert layout.spec("normalIncidenceTris").count == 3 * layout.num_cloth_tris
    assert layout.spec("paramsUniform").nbytes == 80
    assert layout.total_bytes == sum(layout.binding_bytes().values())
    assert layout.largest_binding().role == "springTable"
    with pytest.raises(KeyError):
        layout.spec("nonsense")


def test_validate_raises_with_role_and_ceiling_in_message():
    layout = grid_layout(64, 64)
    tiny = DeviceLimits(max_storage_buffer_binding_size=4096, max_buffer_size=4096)
    with pytest.raises(CapacityError) as excinfo:
        layout.validate(tiny)
    message = str(excinfo.value)
    assert "positions" in message  # first offending binding in table order
    assert "4096" in message
    assert "largest grid that fits" in message


def test_validate_passes_under_default_limits():
    grid_layout(64, 64, num_obstacle_tris=320).validate(DeviceLimits())


def _independent_fit_scan(ceiling):
    """Largest square grid side that fits, recomputed from the documented
    stride table and the oracle spring enumeration (no layout code)."""
    strides_and_counts = lambda n, springs: {
        "positions": 12 * n * n,
        "previousPositions": 12 * n * n,
        "velocities": 12 * n * n,
        "forcesFixedPoint": 12 * n * n,
        "inverseMasses": 4 * n * n,
        "externalAccel": 12 * n * n,
        "springTable": 32 * springs,
        "triangleTable": 12 * 2 * (n - 1) ** 2,
        "clothEdgeTable": 8 * (2 * n * (n - 1) + (n - 1) ** 2),
        "responseAccumulator": 12 * n * n,
        "responseCount": 4 * n * n,
        "vertexNormals": 12 * n * n,
        "normalIncidenceOffsets": 4 * (n * n + 1),
        "normalIncidenceTris": 4 * 3 * 2 * (n - 1) ** 2,
    }
    best = 0
    for side in range(2, 200):
        structural, shear, bend = oracles.enumerate_grid_springs(side, side)
        springs = len(structural) + len(shear) + len(bend)
        if max(strides_and_counts(side, springs).values()) <= ceiling:
            best = side
        else:
            return best
    raise AssertionError("scan window too small")


def test_probe_with_injected_megabyte_limit_matches_independent_scan():
    ceiling = 1 << 20
    limits = DeviceLimits(max_storage_buffer_binding_size=ceiling)
    report = max_nodes_probe(limits)
    want_side = _independent_fit_scan(ceiling)
    assert report.max_side == want_side
    assert report.max_nodes == want_side * want_side
    assert report.binding_ceiling == ceiling
    assert report.limiting_role == "springTable"
    assert report.limiting_bytes == report.per_binding_bytes["springTable"]
    assert report.limiting_bytes <= ceiling
    assert "springTable" in report.note


def test_probe_reports_zero_when_even_tiny_cloth_cannot_fit():
    report = max_nodes_probe(DeviceLimits(max_storage_buffer_binding_size=64))
    assert report.max_nodes == 0
    assert report.max_side == 0
    assert "2x2" in report.note
    assert report.limiting_bytes > 64


def test_probe_under_real_limits_is_self_consistent():
    report = max_nodes_probe()
    assert report.binding_ceiling == 128 * 1024 * 1024
    assert report.max_buffer_size == 256 * 1024 * 1024
    assert report.max_nodes == report.max_side ** 2
    assert report.limiting_role == "springTable"
    side = report.max_side
    ceiling = report.binding_ceiling
    fits = grid_layout(side, side)
    assert all(s.nbytes <= ceiling for s in fits.specs)
    too_big = grid_layout(side + 1, side + 1)
    assert any(s.nbytes > ceiling for s in too_big.specs)
    # obstacle triangles live in their own binding and should not shrink the cloth
    assert max_nodes_probe(num_obstacle_tris=320).max_side == side


def test_layout_direct_construction_matches_grid_helper():
    direct = GpuBufferLayout(
        num_nodes=12,
        num_springs=17,
        num_cloth_tris=12,
        num_cloth_edges=23,
        num_obstacle_tris=0,
    )
    assert direct.spec("springTable").nbytes == 17 * 32
    assert direct.spec("obstacleVertices").nbytes == 0


# -- dispatch grids ----------------------------------------------------------


def test_dispatch_grid_basic_rounding():
    limits = DeviceLimits()
    g = DispatchGrid(257, 256, limits)
    assert (g.groups_x, g.groups_y) == (2, 1)
    assert g.padded_invocations == 512
    assert DispatchGrid(256, 256, limits).groups_x == 1
    assert DispatchGrid(0, 64, limits).padded_invocations == 64  # at least one group


def test_dispatch_grid_folds_into_second_dimension():
    limits = DeviceLimits(max_compute_workgroups_per_dimension=4)
    g = DispatchGrid(17, 2, limits)  # 9 groups > 4 per dimension
    assert g.groups_x == 4
    assert g.groups_y == 3
    assert g.padded_invocations == 24
    assert g.padded_invocations >= g.invocations


def test_dispatch_grid_rejects_bad_workgroup_sizes():
    limits = DeviceLimits()
    with pytest.raises(ValueError, match="workgroup size"):
        DispatchGrid(10, 0, limits)
    with pytest.raises(ValueError, match="workgroup size"):
        DispatchGrid(10, 257, limits)
    with pytest.raises(ValueError):
        DispatchGrid(-1, 64, limits)


def test_dispatch_grid_overflow_is_a_capacity_error():
    limits = DeviceLimits(max_compute_workgroups_per_dimension=2)
    with pytest.raises(CapacityError, match="2D"):
        DispatchGrid(9, 1, limits)


# -- software device ---------------------------------------------------------


def test_create_buffer_enforces_ceiling_and_zero_count():
    dev = SoftwareDevice(DeviceLimits(max_storage_buffer_binding_size=100, max_buffer_size=100))
    with pytest.raises(CapacityError, match="positions"):
        dev.create_buffer("positions", np.float32, 30)  # 120 B > 100
    empty = dev.create_buffer("obstacleVertices", np.float32, 0)
    assert empty.array.shape == (0,)
    assert dev.readback("obstacleVertices").shape == (0,)
    with pytest.raises(KeyError):
        dev.create_buffer("mystery", np.float32, 1)


def test_dispatch_logs_passes_in_order():
    dev = SoftwareDevice()
    out = []
    dev.dispatch("first", 10, 4, out.append, "a")
    dev.dispatch("second", 1, 4, out.append, "b")
    assert out == ["a", "b"]
    assert [entry[0] for entry in dev.pass_log] == ["first", "second"]
    assert dev.pass_log[0][1:] == (3, 1, 10)


def test_get_adapter_honors_environment(monkeypatch):
    monkeypatch.delenv(ADAPTER_ENV, raising=False)
    assert isinstance(get_adapter(), SoftwareDevice)
    monkeypatch.setenv(ADAPTER_ENV, "none")
    with pytest.raises(AdapterUnavailable, match="cpu backend still works"):
        get_adapter()
    monkeypatch.setenv(ADAPTER_ENV, "software")
    assert isinstance(get_adapter(), SoftwareDevice)
    with pytest.raises(AdapterUnavailable, match="unknown"):
        get_adapter("hardware9000")
