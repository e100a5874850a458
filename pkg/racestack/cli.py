#!/usr/bin/env python3
"""
cli.py

Command-line entry point for the racing stack.

Subcommands:
- build-lanes: Inner/Center/Outer lanes and the optimized raceline as CSV
- race:        run one scenario, write report.json, trace.csv and an optional SVG
- plot:        render a trace and its lanes to SVG

Exit status of `race`: 0 when the lap finished without contact, 1 when it
did not, 2 on configuration or track errors, 3 when the simulation diverged.

Usage:
    python -m racestack.cli build-lanes --out runs/lanes
    python -m racestack.cli race config/scenarios/default.json --out runs/default --svg
    python -m racestack.cli race config/scenarios/default.json --baseline --seed 7
    python -m racestack.cli plot runs/default/trace.csv runs/default/lanes runs/default/race.svg
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

from racestack.behavior_planner import Thresholds
from racestack.plotting import lateral_errors, render_race_svg
from racestack.race_sim import build_world, read_trace, run_baseline, run_race, verify_trace
from racestack.raceline_opt import RacelineProblem, SpeedLimits, build_lane_set
from racestack.scenario import load_scenario, merge_scenario
from racestack.track_geometry import (
    LaneId,
    generate_oval,
    lane_ideal_time,
    load_centerline,
    read_lane_set,
    write_lane_set,
)
from racestack.utils.common import (
    DEFAULT_SETTINGS,
    RaceStackError,
    SimulationDivergedError,
    load_config,
    memory_snapshot,
    save_metadata_to_file,
    summarize_timings,
)
from racestack.utils.config_validator import validate_scenario_config
from racestack.utils.logger import get_logger, get_structured_logger
from racestack.utils.progress import format_time

EXIT_OK = 0
EXIT_RACE_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3


def settings_help() -> str:
    """Every settings key with its default, for --help."""
    lines = ["settings keys (config/settings.yaml, or scenario sections):"]
    for section, values in DEFAULT_SETTINGS.items():
        keys = ", ".join(f"{key}={value}" for key, value in values.items())
        lines.append(f"  {section}: {keys}")
    lines.append("  scenario only: seed, npcs[lane,target_speed,start_arc,lane_changes], ego[lane,start_arc,initial_speed]")
    return "\n".join(lines)


def cmd_build_lanes(args) -> int:
    """Write inner/center/outer/optimized lane CSVs."""
    settings = load_config(args.config)
    track_cfg = settings["track"]
    out_dir = Path(args.out or Path(settings["output"]["output_dir"]) / "lanes")
    try:
        if args.track:
            track = load_centerline(args.track, args.spacing)
        else:
            track = generate_oval(
                args.straight if args.straight is not None else track_cfg["straight_length"],
                args.radius if args.radius is not None else track_cfg["turn_radius"],
                args.width if args.width is not None else track_cfg["track_width"],
                args.spacing if args.spacing is not None else track_cfg["spacing"],
            )
        raceline_cfg = dict(settings["raceline"])
        if args.alpha_max is not None:
            raceline_cfg["alpha_max"] = args.alpha_max
        lanes, result = build_lane_set(track, SpeedLimits(**settings["limits"]),
                                       RacelineProblem(track, **raceline_cfg))
    except RaceStackError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        paths = write_lane_set(lanes, out_dir)
    except OSError as e:
        print(f"❌ Cannot write lanes to {out_dir}: {e}", file=sys.stderr)
        return EXIT_RACE_FAILED

    save_metadata_to_file({
        "perimeter_m": track.perimeter,
        "samples": track.n,
        "raceline": {
            "converged": result.converged,
            "iterations": result.iterations,
            "initial_cost": result.initial_cost,
            "final_cost": result.final_cost,
        },
        "ideal_time_s": {lane_id.name.lower(): lane_ideal_time(lane) for lane_id, lane in lanes.items()},
    }, out_dir / "raceline.json")
    if not result.converged:
        print(f"⚠️  Raceline optimizer did not converge after {result.iterations} iterations", file=sys.stderr)
    for lane_id, path in paths.items():
        print(f"✅ {lane_id.name.lower():<9} -> {path}")
    return EXIT_OK


def _validate_only(args) -> int:
    try:
        with open(args.scenario, "r") as f:
            data = json.load(f)
        merged = merge_scenario(data, load_config(args.config))
    except (OSError, json.JSONDecodeError, RaceStackError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return EXIT_OK if validate_scenario_config(merged) else EXIT_CONFIG_ERROR


def cmd_race(args) -> int:
    """Run one race and write its report, trace and optional SVG."""
    if args.validate_only:
        return _validate_only(args)

    settings = load_config(args.config)
    output = settings["output"]
    try:
        scenario = load_scenario(args.scenario, args.config, seed=args.seed)
        if args.inject_latency:
            scenario = scenario.with_overrides(inject_latency=True)
        world = build_world(scenario)
    except RaceStackError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    out_dir = Path(args.out or Path(output["output_dir"]) / scenario.name)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_logger = get_logger(f"race_{scenario.name}", output["log_dir"], level=output["log_level"])
    events = get_structured_logger("race_events", output["log_dir"])
    show_progress = bool(output["progress"]) and not args.no_progress

    lane_paths = write_lane_set(world.lanes, out_dir / "lanes")
    report = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "config": scenario.to_dict(),
        "raceline": {
            "converged": world.raceline.converged,
            "iterations": world.raceline.iterations,
            "final_cost": world.raceline.final_cost,
            "ideal_time_s": lane_ideal_time(world.lanes[LaneId.OPTIMIZED]),
        },
        "artifacts": {"lanes": {k.name.lower(): str(p) for k, p in lane_paths.items()}},
    }
    report_path = out_dir / "report.json"

    run_logger.log_stage_start("race", scenario=scenario.name, seed=scenario.seed)
    started = time.time()
    try:
        result, trace = run_race(scenario, world, show_progress=show_progress,
                                 run_logger=run_logger, events=events)
    except SimulationDivergedError as e:
        duration = time.time() - started
        run_logger.log_stage_end("race", duration, "diverged", error=str(e))
        if e.trace is not None:
            report["artifacts"]["trace"] = str(e.trace.write_csv(out_dir / "trace_diverged.csv"))
        report["status"] = "diverged"
        report["error"] = str(e)
        save_metadata_to_file(report, report_path)
        print(f"❌ Simulation diverged: {e}", file=sys.stderr)
        run_logger.close()
        return EXIT_DIVERGED
    duration = time.time() - started
    run_logger.log_stage_end("race", duration, "finished" if result.finished else "timeout")

    trace_path = trace.write_csv(out_dir / "trace.csv")
    report["status"] = "finished" if result.finished else "timeout"
    report["result"] = result.to_dict()
    report["timings"] = {
        "perception": summarize_timings(trace.timings.get("perception_ms", [])),
        "mpc": summarize_timings(trace.timings.get("mpc_ms", [])),
        "wall_clock_s": duration,
    }
    report["memory"] = memory_snapshot()
    report["artifacts"]["trace"] = str(trace_path)

    if args.baseline:
        baseline, _ = run_baseline(scenario, world)
        report["baseline"] = baseline.to_dict()
        report["baseline"]["improvement_pct"] = 100.0 * (baseline.total_time - result.total_time) / baseline.total_time

    if args.svg:
        svg_path = render_race_svg(trace.to_frame(), world.lanes, out_dir / "race.svg", title=scenario.name)
        report["artifacts"]["svg"] = str(svg_path)

    save_metadata_to_file(report, report_path)
    run_logger.close()

    clean = result.finished and result.collision_count == 0
    print(f"\n{'✅' if clean else '❌'} {scenario.name}: raw {result.raw_lap_time:.3f}s, "
          f"total {result.total_time:.3f}s, collisions {result.collision_count}, "
          f"overtakes {result.overtakes_completed}, wall clock {format_time(duration)}")
    return EXIT_OK if clean else EXIT_RACE_FAILED


def cmd_plot(args) -> int:
    """Render an existing trace against its lanes."""
    try:
        frame = read_trace(args.trace)
        lanes = read_lane_set(args.lanes)
        out = render_race_svg(frame, lanes, args.out, title=Path(args.trace).parent.name or "Race")
    except (RaceStackError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    errors = lateral_errors(frame, lanes)
    print(f"✅ Plot written to {out} (max |lateral error| {errors['lateral_m'].abs().max():.3f} m)")
    return EXIT_OK


def cmd_verify_trace(args) -> int:
    """Re-check planner decisions in a trace; nonzero exit on any violation."""
    settings = load_config(args.config)
    thresholds = dict(settings["thresholds"])
    pause_s = settings["planner"]["pause_s"]
    report_path = Path(args.report) if args.report else Path(args.trace).parent / "report.json"
    if report_path.exists():
        with open(report_path, "r") as f:
            config = json.load(f).get("config", {})
        thresholds.update(config.get("thresholds", {}))
        pause_s = config.get("planner", {}).get("pause_s", pause_s)
    try:
        violations = verify_trace(read_trace(args.trace), Thresholds(**thresholds), pause_s)
    except (RaceStackError, FileNotFoundError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    for violation in violations:
        print(f"❌ {violation}")
    if violations:
        return EXIT_RACE_FAILED
    print("✅ Trace satisfies the planner invariants")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="racestack",
        description="Lane-switching racing stack simulator.",
        epilog=settings_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", type=str, default=None, help="Settings YAML (default config/settings.yaml)")
    subparsers = parser.add_subparsers(dest="command", metavar="{build-lanes,race,plot}")
    subparsers.required = True

    lanes = subparsers.add_parser("build-lanes", help="Build lane and raceline CSVs",
                                  epilog=settings_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    lanes.add_argument("--track", type=str, help="Centerline CSV (x_m,y_m,w_tr_right_m,w_tr_left_m)")
    lanes.add_argument("--straight", type=float, help="Oval straight length [m]")
    lanes.add_argument("--radius", type=float, help="Oval turn radius [m]")
    lanes.add_argument("--width", type=float, help="Oval track width [m]")
    lanes.add_argument("--spacing", type=float, help="Sample spacing [m]")
    lanes.add_argument("--alpha-max", type=float, help="Raceline lateral bound [m]")
    lanes.add_argument("--out", type=str, help="Output directory")
    lanes.set_defaults(func=cmd_build_lanes)

    race = subparsers.add_parser("race", help="Run a race scenario",
                                 epilog=settings_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    race.add_argument("scenario", type=str, help="Scenario JSON file")
    race.add_argument("--out", type=str, help="Output directory (default <output_dir>/<scenario>)")
    race.add_argument("--seed", type=int, help="Override the scenario seed")
    race.add_argument("--svg", action="store_true", help="Also render race.svg")
    race.add_argument("--inject-latency", action="store_true", help="Delay planner output by one control tick")
    race.add_argument("--baseline", action="store_true", help="Also run with lane switching disabled and compare")
    race.add_argument("--validate-only", action="store_true", help="Validate the scenario and exit")
    race.add_argument("--no-progress", action="store_true", help="Disable the progress bar")
    race.set_defaults(func=cmd_race)

    plot = subparsers.add_parser("plot", help="Render a trace to SVG")
    plot.add_argument("trace", type=str, help="Trace CSV")
    plot.add_argument("lanes", type=str, help="Directory with the lane CSVs")
    plot.add_argument("out", type=str, help="Output SVG path")
    plot.set_defaults(func=cmd_plot)

    verify = subparsers.add_parser("verify-trace")
    verify.add_argument("trace", type=str)
    verify.add_argument("--report", type=str, default=None)
    verify.set_defaults(func=cmd_verify_trace)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.getLogger().setLevel(load_config(args.config)["output"]["log_level"])
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
