"""Command-line entry point: ``run``, ``speed-eval`` and ``demo``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError
from .experiments import RunConfig, load_config, run_scenario, run_suite, speed_eval, summarize_speed
from .modeldb import LiveScreener, StubScreener, default_catalog
from .sim_world import SPEED_MODES, Scenario

EXIT_OK = 0
EXIT_CONFIG = 2


def _screener(catalog, live: bool):
    if live:
        if not os.environ.get("SCREENER_URL"):
            raise ConfigError("--live-screener needs SCREENER_URL in the environment")
        return LiveScreener(catalog)
    return StubScreener(catalog)


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    mode = "virtual" if args.deterministic_planning else "wallclock"
    cfg = replace(cfg, timing=replace(cfg.timing, mode=mode), planner=replace(cfg.planner, mode=mode))
    cam = {}
    if args.fps is not None:
        cam["frame_rate"] = args.fps
    if args.noise is not None:
        cam["noise_sigma"] = args.noise
    if cam:
        try:
            cfg = replace(cfg, camera=replace(cfg.camera, **cam))
        except ValueError as exc:
            raise ConfigError(f"camera: {exc}") from None
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _frames_dir(path):
    if path is None:
        return None
    Path(path).mkdir(parents=True, exist_ok=True)
    return str(path)


def _progress(done, total, sc):
    print(f"[{done}/{total}] {sc.key}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = _apply_flags(load_config(args.scenarios), args)
    catalog = default_catalog()
    report = run_suite(cfg, catalog, _screener(catalog, args.live_screener), _frames_dir(args.frames_dir),
                       _progress if args.verbose else None)
    print(report.table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
        if args.csv:
            Path(args.report).with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    elif args.csv:
        sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_speed_eval(args) -> int:
    modes = ("low", "high") if args.mode == "both" else (args.mode,)
    trials = speed_eval(modes, args.trials, args.seed)
    print(f"{'mode':<5} {'trial':>5} {'true cm/s':>10} {'est cm/s':>9}  scenario")
    for t in trials:
        print(f"{t.mode:<5} {t.trial:>5} {100 * t.true_speed:>10.2f} {100 * t.estimate:>9.2f}  {t.scenario}")
    for mode, s in summarize_speed(trials).items():
        print(f"{mode}: {100 * s['mean']:.2f} +/- {100 * s['std']:.2f} cm/s over {s['n']} trials")
    if args.report:
        body = {"trials": [t.to_dict() for t in trials], "summary": summarize_speed(trials)}
        Path(args.report).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_demo(args) -> int:
    cfg = _apply_flags(RunConfig(), args)
    catalog = default_catalog()
    try:
        sc = Scenario(args.pattern, args.clutter_set, args.arrangement, SPEED_MODES[args.speed], cfg.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    row = run_scenario(sc, cfg, catalog, _screener(catalog, args.live_screener), {}, _frames_dir(args.frames_dir))
    print(f"scenario {sc.key}  speed {100 * sc.belt_speed:.1f} cm/s")
    if row.speed_estimate is not None:
        print(f"estimated speed {100 * row.speed_estimate:.2f} cm/s")
    for s in row.steps:
        at = "-" if s["executeAt"] is None else f"{s['executeAt']:.2f} s"
        print(f"  object {s['objectId']}: n={s['n']} execute at {at} -> {s['outcome']}")
    for kind, detail in row.failures:
        print(f"  failure {kind}: {detail}")
    print(f"performed {row.grasps_performed}/{row.objects_targeted}, succeeded {row.grasps_succeeded}")
    return EXIT_OK


def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic-planning", action="store_true",
                   help="virtual-cost planning and motion times instead of wall clock")
    p.add_argument("--fps", type=float, default=None, help="local camera frame rate (Hz)")
    p.add_argument("--noise", type=float, default=None, help="depth noise sigma (m)")
    p.add_argument("--frames-dir", default=None, help="export global and t1/t2 frames as PGM files here")
    p.add_argument("--live-screener", action="store_true",
                   help="screen candidates through the HTTP endpoint in SCREENER_URL (key in SCREENER_KEY)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="conveyor-grasp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the scenarios of a JSON config")
    run.add_argument("--scenarios", required=True, help="JSON config file")
    run.add_argument("--report", default=None, help="write the JSON report here")
    run.add_argument("--csv", action="store_true", help="also write per-scenario CSV (next to --report, or stdout)")
    run.add_argument("-v", "--verbose", action="store_true")
    _common(run)
    run.set_defaults(func=cmd_run)

    se = sub.add_parser("speed-eval", help="randomized speed-estimation trials")
    se.add_argument("--mode", choices=("low", "high", "both"), default="both")
    se.add_argument("--trials", type=int, default=10)
    se.add_argument("--seed", type=int, default=0)
    se.add_argument("--report", default=None)
    se.set_defaults(func=cmd_speed_eval)

    demo = sub.add_parser("demo", help="run one scenario and narrate it")
    demo.add_argument("--pattern", choices=("P1", "P2", "P3"), default="P1")
    demo.add_argument("--clutter-set", default="C1")
    demo.add_argument("--arrangement", default="A1")
    demo.add_argument("--speed", choices=tuple(SPEED_MODES), default="low")
    _common(demo)
    demo.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "trials", 0) < 0:
        print("error: --trials must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
