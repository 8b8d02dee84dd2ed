"""Command-line interface.

Exit codes: 0 on success, 1 for configuration/input errors, 2 for a runtime
failure while stepping the simulation.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bridge import BridgeSession, SessionConfig
from .mapio import MapFormatError, read_map
from .scenario import Scenario, ScenarioError, load_scenario
from .simloop import SimRunner, compute_ate, parse_trajectory_csv, run_scenario, \
    write_artifacts

CONFIG_ERROR, RUNTIME_ERROR = 1, 2


def _apply_overrides(sc: Scenario, args: argparse.Namespace) -> Scenario:
    run = sc.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.dt is not None:
        if args.dt <= 0:
            raise ScenarioError(f"--dt must be positive, got {args.dt}")
        run = replace(run, dt=args.dt)
    return replace(sc, run=run)


def _session_for(sc: Scenario) -> BridgeSession:
    t = sc.teleop
    return BridgeSession(config=SessionConfig(
        token=t.token, watchdog_timeout=t.watchdog_timeout,
        v_max=t.v_max, w_max=t.w_max, telemetry_rate=t.rate))


def _out_dir(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out_dir if args.out_dir else default)


def cmd_sim(args: argparse.Namespace) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    out = _out_dir(args, f"runs/{sc.name}")
    result = run_scenario(sc, mode="sim", out_dir=out)
    print(f"wrote {out}/trajectory.csv ({len(result.runlog.rows)} rows, "
          f"{len(result.runlog.events)} events)")
    if sc.mission is not None:
        print(f"mission {'completed' if result.mission_done else 'NOT completed'}")
    return 0


def cmd_slam(args: argparse.Namespace) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    out = _out_dir(args, f"runs/{sc.name}-slam")
    result = run_scenario(sc, mode="slam", out_dir=out)
    print(f"wrote {out}/map.pgm and {out}/trajectory.csv")
    divergences = sum(1 for e in result.runlog.events if e[1] == "slam_diverged")
    print(f"{len(result.runlog.rows)} ticks, {divergences} scan-match divergences")
    return 0


def cmd_localize(args: argparse.Namespace) -> int:
    sc = _apply_overrides(load_scenario(args.scenario), args)
    map_path = args.map or sc.map_file
    if map_path:
        grid = read_map(map_path)
    elif args.rasterize:
        from .world import rasterize_world
        grid = rasterize_world(sc.world, args.rasterize, padding=0.5)
    else:
        raise ScenarioError("localize needs --map, --rasterize, or a [map] entry")
    out = _out_dir(args, f"runs/{sc.name}-localize")
    dump_dir = None
    if args.dump_particles:
        dump_dir = out / "particles"
        dump_dir.mkdir(parents=True, exist_ok=True)
    result = run_scenario(sc, mode="localize", known_map=grid, out_dir=out,
                          particle_dump_dir=dump_dir)
    log = result.runlog
    mask = ~np.isnan(log.column("mcl")[:, 0])
    if mask.any():
        ate = compute_ate(log.column("mcl")[mask], log.column("truth")[mask])
        print(f"wrote {out}/trajectory.csv; MCL ATE {ate.rmse_xy:.3f} m rms")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    path = Path(args.runlog)
    if path.is_dir():
        path = path / "trajectory.csv"
    log = parse_trajectory_csv(path.read_text(encoding="utf-8"))
    truth = log.column("truth")
    any_reported = False
    for name in ("ekf", "mcl", "slam"):
        est = log.column(name)
        mask = ~np.isnan(est[:, 0])
        if not mask.any():
            continue
        ate = compute_ate(est[mask], truth[mask])
        any_reported = True
        print(f"{name}: rmse_xy={ate.rmse_xy:.4f} m  "
              f"rmse_theta={ate.rmse_theta:.4f} rad  max_xy={ate.max_xy:.4f} m  "
              f"({int(mask.sum())} poses)")
    if not any_reported:
        print("no estimator columns present in this run log")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .server import serve

    sc = _apply_overrides(load_scenario(args.scenario), args)
    mode = "localize" if (args.map or sc.map_file) else \
        ("slam" if sc.run.localization == "slam" else "sim")
    known = None
    map_path = args.map or sc.map_file
    if map_path:
        known = read_map(map_path)
    out = _out_dir(args, f"runs/{sc.name}-serve")
    out.mkdir(parents=True, exist_ok=True)
    shutil.copy(args.scenario, out / "scenario.toml")
    runner = SimRunner(sc, mode=mode, known_map=known, session=_session_for(sc))
    console = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    print(f"serving ws://{args.host}:{args.port}/ws  (token: {sc.teleop.token})")
    serve(runner, host=args.host, port=args.port, out_dir=out,
          console_dir=console if console.exists() else None,
          realtime=not args.fast)
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    from .server import parse_command_trace

    run_dir = Path(args.rundir)
    scenario_path = run_dir / "scenario.toml"
    if not scenario_path.exists():
        raise ScenarioError(f"no scenario.toml in {run_dir}")
    sc = _apply_overrides(load_scenario(scenario_path), args)
    trace = {}
    commands_path = run_dir / "commands.jsonl"
    if commands_path.exists():
        trace = parse_command_trace(commands_path.read_text(encoding="utf-8"))
    mode = "slam" if sc.run.localization == "slam" else "sim"
    out = _out_dir(args, str(run_dir / "replay"))
    runner = SimRunner(sc, mode=mode, session=_session_for(sc),
                       command_trace=trace)
    result = runner.run()
    write_artifacts(result, runner, out)
    original = run_dir / "trajectory.csv"
    if original.exists():
        same = original.read_bytes() == (out / "trajectory.csv").read_bytes()
        print(f"replay {'matches' if same else 'DIFFERS from'} the recorded run")
        return 0 if same else RUNTIME_ERROR
    print(f"wrote {out}/trajectory.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    common.add_argument("--out-dir", default=None, help="artifact directory")
    common.add_argument("--dt", type=float, default=None,
                        help="override the fixed step, seconds")

    parser = argparse.ArgumentParser(
        prog="deliverysim",
        description="Desk-scale delivery-robot autonomy stack simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", parents=[common], help="full closed-loop run")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("slam", parents=[common], help="mapping run, emits map files")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_slam)

    p = sub.add_parser("localize", parents=[common],
                       help="Monte Carlo localization on a known map")
    p.add_argument("scenario")
    p.add_argument("--map", default=None, help="map .pgm or .yaml path")
    p.add_argument("--rasterize", type=float, default=None, metavar="RES",
                   help="localize against the ground-truth world rasterized "
                        "at this resolution instead of a map file")
    p.add_argument("--dump-particles", action="store_true",
                   help="write per-scan particle CSVs")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("eval", parents=[common],
                       help="trajectory error report from a run log")
    p.add_argument("runlog", help="trajectory.csv or a run directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", parents=[common],
                       help="paced sim with the teleoperation bridge")
    p.add_argument("scenario")
    p.add_argument("--map", default=None, help="localize against this map")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--fast", action="store_true",
                   help="run unpaced (testing only)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", parents=[common],
                       help="re-run a recorded session deterministically")
    p.add_argument("rundir")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, MapFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return CONFIG_ERROR
    except KeyboardInterrupt:
        return 0
    except Exception as e:  # runtime divergence or internal failure
        print(f"runtime error: {e}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
