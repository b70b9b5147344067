"""clothsim-bench: command-line harness for the cloth simulation benchmarks.

Exit codes: 0 on success, 1 when a run fails (divergence, capacity,
verification, parity), 2 on usage errors, 3 when no compute adapter is
available (see the CLOTHSIM_ADAPTER environment variable).
"""

from __future__ import annotations

import argparse
import sys

from .bench import (
    VerificationError,
    first_below_realtime,
    probe_limits,
    run_resolution_sweep,
    run_scenario,
    write_sweep_csv,
)
from .collision import CollisionBudgetError
from .gpu import ADAPTER_ENV, AdapterUnavailable, CapacityError
from .scenes import ScenarioConfig, parse_grid_spec
from .solver import DivergenceError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NO_ADAPTER = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clothsim-bench",
        description="Run cloth simulation benchmarks on the cpu or gpu backend.",
        epilog=f"The {ADAPTER_ENV} environment variable selects the gpu adapter "
               f"('software' or 'none').",
    )
    parser.add_argument("--scene", choices=("hanging", "drop", "pull"), default="hanging",
                        help="scenario to run (default: hanging)")
    parser.add_argument("--grid", default="32x32", metavar="NXxNY",
                        help="cloth grid resolution, e.g. 64x64 (default: 32x32)")
    parser.add_argument("--obstacle", default=None, metavar="PATH|icosphere:K",
                        help="obstacle mesh: an OBJ file or icosphere:K for a "
                             "generated sphere with K subdivisions")
    parser.add_argument("--backend", choices=("cpu", "gpu", "both"), default="cpu",
                        help="which solver(s) to run (default: cpu)")
    parser.add_argument("--frames", type=int, default=120, metavar="N",
                        help="number of frames to simulate (default: 120)")
    parser.add_argument("--dt", type=float, default=None, metavar="S",
                        help="step size in seconds (default: 0.016 for hanging, "
                             "0.004 for scenes with an obstacle)")
    parser.add_argument("--stiffness", type=float, default=None, metavar="S",
                        help="spring stiffness override (default derives from dt)")
    parser.add_argument("--damping", type=float, default=None, metavar="S",
                        help="spring damping override (default derives from dt)")
    parser.add_argument("--snapshot-every", type=int, default=None, metavar="K",
                        help="write a PNG snapshot every K frames (needs --out)")
    parser.add_argument("--out", default=None, metavar="PATH",
                        help="stats CSV path; snapshots are named after it")
    parser.add_argument("--sweep", default=None, metavar="R1,R2,...",
                        help="run a resolution sweep over these node counts "
                             "(ascending) and write one summary row each")
    parser.add_argument("--probe-limits", action="store_true",
                        help="report the device limits and the largest cloth "
                             "grid that fits, then exit")
    parser.add_argument("--verify", action="store_true",
                        help="read positions back every frame and run oracle checks")
    return parser


def _config_from_args(args) -> ScenarioConfig:
    return ScenarioConfig(
        scene=args.scene,
        grid=parse_grid_spec(args.grid),
        obstacle=args.obstacle,
        backend=args.backend,
        frames=args.frames,
        dt=args.dt,
        stiffness=args.stiffness,
        damping=args.damping,
        snapshot_every=args.snapshot_every,
        output=args.out,
    )


def _run_probe() -> int:
    report, text = probe_limits()
    print(text)
    return EXIT_OK


def _run_sweep(args) -> int:
    try:
        resolutions = [int(tok) for tok in args.sweep.split(",") if tok.strip()]
    except ValueError:
        print(f"error: --sweep expects comma-separated integers, got {args.sweep!r}",
              file=sys.stderr)
        return EXIT_USAGE
    config = _config_from_args(args)
    rows = run_resolution_sweep(config, resolutions, verify=args.verify)
    if args.out is not None:
        write_sweep_csv(args.out, rows)
        print(f"wrote sweep summary to {args.out}")
    for row in rows:
        cells = ", ".join(f"{k}={v}" for k, v in zip(
            ("nodes", "cpu_fps", "gpu_fps", "ratio", "status"),
            (row.nodes,
             "-" if row.cpu_mean_fps is None else f"{row.cpu_mean_fps:.2f}",
             "-" if row.gpu_mean_fps is None else f"{row.gpu_mean_fps:.2f}",
             "-" if row.cpu_over_gpu_ratio is None else f"{row.cpu_over_gpu_ratio:.3f}",
             row.status),
        ))
        print(cells)
    for backend in ("cpu", "gpu"):
        boundary = first_below_realtime(rows, backend)
        if boundary is not None:
            print(f"first sub-30fps resolution for {backend}: {boundary} nodes")
    if any(row.status != "ok" for row in rows):
        print("sweep finished with failed resolutions", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def _run_single(args) -> int:
    config = _config_from_args(args)
    result = run_scenario(config, verify=args.verify)
    nx, ny = config.grid
    print(f"scene={config.scene} grid={nx}x{ny} backend={config.backend} "
          f"frames={config.frames}")
    for backend, run in result.runs.items():
        print(f"{backend}: mean wall {run.mean_wall_ms:.3f} ms, "
              f"mean fps {run.mean_fps:.2f}, total hits {run.total_hits}")
        if run.snapshot_paths:
            print(f"{backend}: wrote {len(run.snapshot_paths)} snapshots")
    if result.csv_path is not None:
        print(f"wrote stats to {result.csv_path}")
    if result.parity is not None:
        print(result.parity.describe())
        if not result.parity.passed:
            print("parity check failed", file=sys.stderr)
            return EXIT_FAILURE
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.probe_limits and args.sweep is not None:
        parser.error("--probe-limits and --sweep are separate modes; pick one")
    try:
        if args.probe_limits:
            return _run_probe()
        if args.sweep is not None:
            return _run_sweep(args)
        return _run_single(args)
    except AdapterUnavailable as exc:
        print(f"no compute adapter: {exc}", file=sys.stderr)
        return EXIT_NO_ADAPTER
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CapacityError, CollisionBudgetError, DivergenceError, VerificationError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
