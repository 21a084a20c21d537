"""Command-line entry point: run, sweep, capacity and share-curve."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .engine import SimulationInvariantError, run, write_trajectories_csv
from .metrics import (
    HOUR,
    ThroughputSeries,
    measure_intersection_capacity,
    smart_share_curve,
    stop_detector,
    sweep,
    write_queues_csv,
    write_sweep_csv,
    write_throughput_csv,
)
from .network import ScenarioError
from .platoon import write_events_csv
from .scenario import ScenarioConfig, load_scenario, main_intersection, validate
from .sensing import write_crossings_csv


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(args.scenario)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "dt", None) is not None:
        changes["dt"] = args.dt
    if getattr(args, "duration", None) is not None:
        changes["duration"] = args.duration
    if changes:
        cfg = validate(cfg.with_(**changes))
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        low = tok.lower()
        if low in ("true", "false"):
            out.append(low == "true")
        elif low == "none":
            out.append(None)
        else:
            out.append(float(tok))
    if not out:
        raise argparse.ArgumentTypeError("no values given")
    return out


def _parse_shares(text: str) -> list:
    return [float(v) for v in _parse_values(text)]


def cmd_run(args) -> int:
    cfg = _load(args)
    result = run(cfg, record_trajectories=args.trajectories, trajectory_every=args.trajectory_every)
    out = _out_dir(args)
    inter = main_intersection(cfg) if cfg.network.intersections else None
    series = [ThroughputSeries.from_result(result, d) for d in sorted(result.detectors) if d.endswith("/stop")]
    write_throughput_csv(out / "throughput.csv", series, args.window, result.clock)
    write_crossings_csv(out / "crossings.csv", [result.detectors[d] for d in sorted(result.detectors)])
    write_queues_csv(out / "queues.csv", result)
    write_events_csv(out / "platoon_events.csv", result.platoon_events)
    if args.trajectories:
        write_trajectories_csv(out / "trajectories.csv", result, list(cfg.network.lanes))
    c = result.counters
    print(f"steps          {result.steps}")
    print(f"clock_s        {result.clock:g}")
    print(f"generated      {c.generated}")
    print(f"spawned        {c.spawned}")
    print(f"suppressed     {c.suppressed}")
    print(f"initial        {c.initial}")
    print(f"replenished    {c.replenished}")
    print(f"exited         {c.exited}")
    print(f"in_network     {result.in_network}")
    print(f"hash           {result.hash_hex}")
    if inter is not None:
        lanes = cfg.network.intersections[inter].incoming_lanes
        for lane in lanes:
            n = len(result.crossings(stop_detector(lane)))
            print(f"{inter}:{lane:<10} {n}  ({n * HOUR / max(result.clock, 1e-9):.1f} vph)")
    print(f"outputs        {out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    res = sweep(cfg, args.param, args.values, workers=args.workers)
    print(res.table())
    if args.out:
        write_sweep_csv(_out_dir(args) / f"sweep_{args.param}.csv", res)
    return 0


def cmd_capacity(args) -> int:
    cfg = _load(args)
    cap = measure_intersection_capacity(cfg, args.intersection, hours=args.hours, warmup_hours=args.warmup)
    print(f"intersection {cap.intersection}  (mean over {cap.hours} h after {args.warmup} h warm-up)")
    for lane, vph in sorted(cap.per_approach.items()):
        print(f"  {lane:<12} {vph:9.1f} vph")
    print(f"  {'total':<12} {cap.total:9.1f} vph")
    return 0


def cmd_share_curve(args) -> int:
    cfg = _load(args)
    res = smart_share_curve(cfg, args.shares, hours=args.hours, workers=args.workers)
    print(res.table())
    if res.fit is None:
        print("fit: not enough distinct shares")
    if args.out:
        write_sweep_csv(_out_dir(args) / "share_curve.csv", res)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arterialsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("scenario", help="scenario file (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--duration", type=float, help="simulated seconds")

    sp = sub.add_parser("run", help="run one scenario and write CSV outputs")
    scenario_args(sp)
    sp.add_argument("--out", default="out")
    sp.add_argument("--window", type=float, default=HOUR, help="throughput window [s]")
    sp.add_argument("--trajectories", action="store_true")
    sp.add_argument("--trajectory-every", type=int, default=5)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="one run per parameter value")
    scenario_args(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, type=_parse_values)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("capacity", help="saturated capacity of one intersection")
    scenario_args(sp)
    sp.add_argument("--intersection")
    sp.add_argument("--hours", type=int, default=5)
    sp.add_argument("--warmup", type=int, default=1)
    sp.set_defaults(func=cmd_capacity)

    sp = sub.add_parser("share-curve", help="capacity against smart share with a linear fit")
    scenario_args(sp)
    sp.add_argument("--shares", required=True, type=_parse_shares)
    sp.add_argument("--hours", type=int, default=5)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_share_curve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationInvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
