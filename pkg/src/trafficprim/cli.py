"""Command-line entry point: ``trafficprim <subcommand> ...``.

Every subcommand writes JSON (to ``--out`` or stdout) and exits 0; any
package error is reported as ``{"error": ..., "message": ...}`` on stdout
with exit code 1. Log verbosity comes from ``TRAFFICPRIM_LOG``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

from . import fixtures
from .errors import PipelineError, TrafficPrimError
from .evaluation import write_pgm
from .pipeline import (PipelineConfig, dump_json, generate,
                       generate_without_changepoints, load_config, pair_discrepancy, write_run)
from .planner import GridMap, PlannerConfig, load_map, plan
from .plotting import plot_scenario
from .scenario import Scenario, load_scenario, save_scenario
from .segmentation import SegmentationResult, StickyHdpHmmConfig, segment_scenario
from .transform import make_transform, transform_scenario_skeleton

log = logging.getLogger("trafficprim")


def _point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _emit(obj, out) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        dump_json(obj, out)
    else:
        sys.stdout.write(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    over = {}
    for flag, key in (("seed", "seed"), ("n_generate", "n_generate"), ("output_dir", "output_dir"),
                      ("scenario", "scenario_path"), ("map", "map_path")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    return cfg.replace(**over) if over else cfg


def _load_generated(path) -> Scenario:
    d = json.loads(Path(path).read_text())
    return Scenario.from_dict(d.get("scenario", d))


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> None:
    maker = {"three-regime": fixtures.three_regime_fixture,
             "stop-and-go": fixtures.stop_and_go_fixture}[args.fixture]
    sc, cps = maker(seed=args.seed, noise_std=args.noise_std)
    save_scenario(sc, args.out)
    _emit({"scenario": str(args.out), "changepoints": cps, "length": sc.length,
           "vehicles": sc.vehicle_ids}, None)


def cmd_segment(args) -> None:
    cfg = _config(args).segmentation if args.config else StickyHdpHmmConfig()
    over = {k: v for k, v in (("seed", args.seed), ("iterations", args.iterations),
                              ("emission", args.emission)) if v is not None}
    cfg = dataclasses.replace(cfg, **over)
    res = segment_scenario(load_scenario(args.scenario), cfg)
    _emit(res.to_dict(), args.out)


def _changepoints(args) -> list[int]:
    if args.segmentation:
        return list(SegmentationResult.from_dict(json.loads(Path(args.segmentation).read_text())).changepoints)
    return _int_list(args.changepoints)


def cmd_transform(args) -> None:
    sc = load_scenario(args.scenario)
    if args.targets:
        targets = json.loads(Path(args.targets).read_text())
    else:
        targets = {k: v.to_dict() for k, v in _config(args).targets.items()}
    pairs = {k: (v["q_start"], v["q_end"]) for k, v in targets.items()}
    sk = transform_scenario_skeleton(_changepoints(args), sc, pairs, args.reference)
    _emit(sk.to_dict(), args.out)


def cmd_plan(args) -> None:
    gmap = load_map(args.map) if args.map else GridMap()
    cfg = PlannerConfig(seed=args.seed, max_iterations=args.iterations, step_size=args.step_size)
    path = plan(gmap, args.start, args.end, cfg)
    _emit(path.to_dict(), args.out)
    log.info("path cost %.6f", path.cost)


def cmd_generate(args) -> None:
    cfg = _config(args)
    sc = load_scenario(cfg.scenario_path) if cfg.scenario_path else None
    if sc is None:
        raise PipelineError("config must name a template scenario")
    gmap = load_map(cfg.map_path) if cfg.map_path else GridMap()
    run = generate(cfg, sc, gmap)
    report = write_run(run, sc, cfg.output_dir, gmap, plots=not args.no_plots)
    _emit(report, None)


def cmd_ablate(args) -> None:
    cfg = _config(args)
    if not cfg.scenario_path:
        raise PipelineError("config must name a template scenario")
    sc = load_scenario(cfg.scenario_path)
    gmap = load_map(cfg.map_path) if cfg.map_path else GridMap()
    with_cp = generate(cfg, sc, gmap)
    without = generate_without_changepoints(cfg, sc, gmap)
    dw, do = pair_discrepancy(with_cp.scenarios, sc), pair_discrepancy(without.scenarios, sc)
    report = {
        "changepoints": list(with_cp.segmentation.changepoints),
        "with_changepoints": dw,
        "without_changepoints": do,
        "trajectory_improved": dw["mean_trajectory"] < do["mean_trajectory"],
        "speed_improved": dw["mean_speed"] < do["mean_speed"],
    }
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    dump_json(report, Path(cfg.output_dir) / "ablation.json")
    _emit(report, None)


def cmd_evaluate(args) -> None:
    template = load_scenario(args.template)
    files = sorted(Path(args.generated).glob("scenario_*.json"),
                   key=lambda p: int(re.findall(r"\d+", p.stem)[-1]))
    if not files:
        raise PipelineError(f"no scenario_*.json files in {args.generated}")
    scs = [_load_generated(f) for f in files]
    rep = pair_discrepancy(scs, template, args.vehicle_a, args.vehicle_b)
    rep["files"] = [f.name for f in files]
    if args.pgm_dir:
        from .evaluation import aggregate_features, scenario_interaction_feature
        a, b = rep["vehicles"]
        out = Path(args.pgm_dir)
        out.mkdir(parents=True, exist_ok=True)
        ft, fs = scenario_interaction_feature(template, a, b)
        feats = [scenario_interaction_feature(s, a, b) for s in scs]
        write_pgm(ft.matrix, out / "template_trajectory.pgm")
        write_pgm(fs.matrix, out / "template_speed.pgm")
        write_pgm(aggregate_features([f[0] for f in feats], ft.matrix.shape).matrix, out / "generated_trajectory.pgm")
        write_pgm(aggregate_features([f[1] for f in feats], fs.matrix.shape).matrix, out / "generated_speed.pgm")
    _emit(rep, args.out)


def cmd_plot(args) -> None:
    path = Path(args.scenario)
    sc = _load_generated(path) if path.suffix == ".json" else load_scenario(path)
    gmap = load_map(args.map) if args.map else GridMap()
    plot_scenario(sc, gmap, args.out, _int_list(args.changepoints))
    _emit({"svg": str(args.out)}, None)


def cmd_targets(args) -> None:
    """Targets for every vehicle from one rotation/scale/anchor (a helper for writing configs)."""
    sc = load_scenario(args.scenario)
    ref = args.reference or sc.vehicle_ids[0]
    tr = make_transform(math.radians(args.angle), args.scale, sc.vehicle(ref).positions[0], args.anchor)
    _emit(fixtures.targets_from_transform(sc, tr), args.out)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trafficprim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic template scenario")
    s.add_argument("--fixture", choices=["three-regime", "stop-and-go"], default="three-regime")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-std", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="fit the sticky HDP-HMM and report changepoints")
    s.add_argument("--scenario", required=True)
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--emission", choices=["ar1", "gaussian"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("transform", help="map changepoint knots onto target roads")
    s.add_argument("--scenario", required=True)
    s.add_argument("--config")
    s.add_argument("--targets", help="JSON {vehicle: {q_start, q_end}}; overrides --config")
    s.add_argument("--segmentation", help="output of `segment`")
    s.add_argument("--changepoints", default="", help="comma-separated indices")
    s.add_argument("--reference")
    s.add_argument("--out")
    s.set_defaults(func=cmd_transform)

    s = sub.add_parser("plan", help="RRT*-Connect between two points")
    s.add_argument("--map")
    s.add_argument("--from", dest="start", type=_point, required=True)
    s.add_argument("--to", dest="end", type=_point, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iterations", type=int, default=PlannerConfig().max_iterations)
    s.add_argument("--step-size", type=float, default=PlannerConfig().step_size)
    s.add_argument("--out")
    s.set_defaults(func=cmd_plan)

    for name, func, text in (("generate", cmd_generate, "generate scenarios from a template"),
                             ("ablate", cmd_ablate, "compare generation with and without changepoints")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--n-generate", type=int)
        s.add_argument("--output-dir")
        s.add_argument("--scenario")
        s.add_argument("--map")
        if name == "generate":
            s.add_argument("--no-plots", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("evaluate", help="DTW feature discrepancy of generated scenarios")
    s.add_argument("--template", required=True)
    s.add_argument("--generated", required=True, help="directory with scenario_<k>.json")
    s.add_argument("--vehicle-a")
    s.add_argument("--vehicle-b")
    s.add_argument("--pgm-dir", help="also write template/generated heat maps here")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("plot", help="render a scenario as SVG")
    s.add_argument("--scenario", required=True)
    s.add_argument("--map")
    s.add_argument("--changepoints", default="")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("targets", help="derive per-vehicle targets from a rotation/scale/anchor")
    s.add_argument("--scenario", required=True)
    s.add_argument("--angle", type=float, default=0.0, help="degrees, counter-clockwise")
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--anchor", type=_point, required=True, help="target of the reference start point")
    s.add_argument("--reference")
    s.add_argument("--out")
    s.set_defaults(func=cmd_targets)
    return p


def main(argv=None) -> int:
    level = os.environ.get("TRAFFICPRIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (TrafficPrimError, OSError, KeyError, json.JSONDecodeError) as exc:
        name = type(exc).__name__
        msg = str(exc) if not isinstance(exc, KeyError) else f"unknown key {exc}"
        sys.stdout.write(json.dumps({"error": name, "message": msg}, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
