"""End-to-end scenario generation: segment, transform, plan, regress, audit."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PipelineError, PlanningError
from .evaluation import feature_discrepancy, min_separation, scenario_interaction_feature
from .gp import GpHyperparams, fit_gp, posterior, psd_factor, synthesize_training_points
from .planner import GridMap, PlannerConfig, load_map, plan
from .scenario import Scenario, VehicleTrack, derive_speeds, load_scenario
from .segmentation import SegmentationResult, StickyHdpHmmConfig, segment_scenario
from .transform import ScenarioSkeleton, transform_scenario_skeleton

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VehicleTarget:
    q_start: tuple[float, float]
    q_end: tuple[float, float]
    v_start: float | None = None
    v_end: float | None = None

    @classmethod
    def from_dict(cls, d) -> "VehicleTarget":
        if isinstance(d, VehicleTarget):
            return d
        try:
            qs = tuple(float(v) for v in d["q_start"])
            qe = tuple(float(v) for v in d["q_end"])
        except (KeyError, TypeError, ValueError) as exc:
            raise PipelineError(f"target needs q_start and q_end 2-D points: {exc}") from None
        if len(qs) != 2 or len(qe) != 2:
            raise PipelineError("q_start and q_end must be 2-D points")
        vs, ve = d.get("v_start"), d.get("v_end")
        return cls(qs, qe, None if vs is None else float(vs), None if ve is None else float(ve))

    def to_dict(self) -> dict:
        return {"q_start": list(self.q_start), "q_end": list(self.q_end),
                "v_start": self.v_start, "v_end": self.v_end}


@dataclass(frozen=True)
class PipelineConfig:
    scenario_path: str | None = None
    map_path: str | None = None
    targets: dict = field(default_factory=dict)
    reference_vehicle: str | None = None
    segmentation: StickyHdpHmmConfig = field(default_factory=StickyHdpHmmConfig)
    planner: PlannerConfig = field(default_factory=lambda: PlannerConfig(max_iterations=1500))
    gp: GpHyperparams = field(default_factory=GpHyperparams)
    n_generate: int = 50
    min_separation_threshold: float = 15.0
    seed: int = 0
    output_dir: str = "out"
    # noise std of the pinned first/last training points
    boundary_noise_std: float = 1e-5
    # a primitive segment moving less than this (grid units) is treated as stationary
    stationary_tol: float = 2.0
    # planning keeps this far from obstacles so smoothed draws stay in free space
    clearance: float = 10.0
    # audit failures are redrawn at most this many times per requested scenario
    max_redraws_per_scenario: int = 20
    endpoint_tol: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "targets",
                           {str(k): VehicleTarget.from_dict(v) for k, v in dict(self.targets).items()})
        if self.n_generate < 1:
            raise PipelineError("n_generate must be >= 1")
        if not self.min_separation_threshold >= 0:
            raise PipelineError("min_separation_threshold must be >= 0")
        if not self.boundary_noise_std > 0 or self.stationary_tol < 0:
            raise PipelineError("boundary_noise_std must be > 0 and stationary_tol >= 0")
        if not self.clearance >= 0:
            raise PipelineError("clearance must be >= 0")
        if self.max_redraws_per_scenario < 0:
            raise PipelineError("max_redraws_per_scenario must be >= 0")

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)


_SECTIONS = {"segmentation": StickyHdpHmmConfig, "planner": PlannerConfig, "gp": GpHyperparams}


def config_from_dict(d: dict, base_dir=None) -> PipelineConfig:
    """Build a config from a parsed TOML/JSON document; relative paths resolve against ``base_dir``."""
    d = dict(d)
    kw = {}
    for name, cls in _SECTIONS.items():
        sec = d.pop(name, None)
        if sec is None:
            continue
        allowed = {f.name for f in dataclasses.fields(cls)}
        unknown = set(sec) - allowed
        if unknown:
            raise PipelineError(f"unknown keys in [{name}]: {sorted(unknown)}")
        if name == "planner":
            sec = {"max_iterations": 1500, **sec}
        try:
            kw[name] = cls(**sec)
        except TypeError as exc:
            raise PipelineError(f"bad [{name}] section: {exc}") from None
    aliases = {"scenario": "scenario_path", "map": "map_path"}
    allowed = {f.name for f in dataclasses.fields(PipelineConfig)}
    for k, v in d.items():
        k = aliases.get(k, k)
        if k not in allowed:
            raise PipelineError(f"unknown config key {k!r}")
        kw[k] = v
    if base_dir is not None:
        for k in ("scenario_path", "map_path", "output_dir"):
            if kw.get(k) is not None and not Path(kw[k]).is_absolute():
                kw[k] = str(Path(base_dir) / kw[k])
    return PipelineConfig(**kw)


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise PipelineError(f"config file not found: {p}") from None
    try:
        d = json.loads(raw) if p.suffix == ".json" else tomllib.loads(raw.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise PipelineError(f"cannot parse config {p}: {exc}") from None
    return config_from_dict(d, base_dir=p.parent)


@dataclass(frozen=True)
class GeneratedScenario:
    scenario: Scenario
    provenance: dict
    audit: dict

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "provenance": self.provenance, "audit": self.audit}


@dataclass(frozen=True)
class VehiclePlan:
    """Training set for one vehicle: planned segments turned into timed points."""

    vehicle_id: str
    times: np.ndarray
    xy: np.ndarray
    noise_std: np.ndarray
    planner_costs: tuple[float, ...]
    stationary_segments: tuple[int, ...]
    uniform_fallback: tuple[int, ...]
    # segments planned without clearance because the inflated map blocked them
    no_clearance: tuple[int, ...] = ()


@dataclass(frozen=True)
class GenerationRun:
    scenarios: list
    segmentation: SegmentationResult | None
    skeleton: ScenarioSkeleton
    plans: dict
    n_draws: int

    @property
    def acceptance_rate(self) -> float:
        return len(self.scenarios) / self.n_draws if self.n_draws else 0.0


def _resolve_inputs(cfg: PipelineConfig, scenario, gmap):
    if scenario is None:
        if cfg.scenario_path is None:
            raise PipelineError("no template scenario given")
        scenario = load_scenario(cfg.scenario_path)
    if gmap is None:
        gmap = load_map(cfg.map_path) if cfg.map_path is not None else GridMap()
    missing = [v for v in scenario.vehicle_ids if v not in cfg.targets]
    if missing:
        raise PipelineError(f"no targets for vehicles {missing}")
    return scenario, gmap


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def _plan_vehicle(vid: str, knot_times, knots: np.ndarray, speeds: np.ndarray,
                  gmap: GridMap, cfg: PipelineConfig, seeds) -> VehiclePlan:
    times, pts, costs, still, fallback, tight = [], [], [], [], [], []
    padded = gmap.inflated(cfg.clearance)
    for k in range(len(knot_times) - 1):
        t0, t1 = int(knot_times[k]), int(knot_times[k + 1])
        a, b = knots[k], knots[k + 1]
        T = t1 - t0
        if math.dist(a, b) <= cfg.stationary_tol:
            seg_t = np.arange(t0, t1 + 1)
            seg_xy = np.repeat(a[None], T + 1, axis=0)
            seg_xy[-1] = b
            still.append(k)
            costs.append(0.0)
        else:
            pcfg = dataclasses.replace(cfg.planner, seed=_seed_int(seeds[k]))
            try:
                path = plan(padded, a, b, pcfg)
            except PlanningError:
                # knots near an obstacle or a narrow gap: plan against the true geometry
                tight.append(k)
                try:
                    path = plan(gmap, a, b, pcfg)
                except PlanningError as exc:
                    raise PipelineError(f"vehicle {vid} segment {k} ({t0}->{t1}): {exc}") from exc
            costs.append(path.cost)
            if T >= 2:
                tp = synthesize_training_points(path, float(speeds[k]), float(speeds[k + 1]), T, t0=t0)
                seg_t, seg_xy = tp.times, tp.xy
                if tp.uniform_fallback:
                    fallback.append(k)
            else:
                seg_t, seg_xy = np.array([t0, t1]), np.array([a, b])
        if k:
            seg_t, seg_xy = seg_t[1:], seg_xy[1:]
        times.append(seg_t)
        pts.append(seg_xy)
    times = np.concatenate(times)
    xy = np.concatenate(pts)
    noise = np.full(len(times), cfg.gp.sigma_n)
    noise[0] = noise[-1] = cfg.boundary_noise_std
    return VehiclePlan(vid, times, xy, noise, tuple(costs), tuple(still), tuple(fallback), tuple(tight))


def _knots(skeleton: ScenarioSkeleton, vid: str, target: VehicleTarget):
    sk = skeleton.vehicle(vid)
    knots = np.array(sk.positions, dtype=float)
    speeds = np.array(sk.speeds, dtype=float)
    # every vehicle starts and ends exactly at its own targets
    knots[0], knots[-1] = target.q_start, target.q_end
    if target.v_start is not None:
        speeds[0] = target.v_start
    if target.v_end is not None:
        speeds[-1] = target.v_end
    return knots, speeds


def _run(cfg: PipelineConfig, scenario: Scenario, gmap: GridMap,
         seg: SegmentationResult | None, changepoints) -> GenerationRun:
    skeleton = transform_scenario_skeleton(list(changepoints), scenario, {
        v: (t.q_start, t.q_end) for v, t in cfg.targets.items()}, cfg.reference_vehicle)
    root = np.random.SeedSequence(cfg.seed)
    plan_root, draw_root = root.spawn(2)
    vids = scenario.vehicle_ids
    T = scenario.length

    plans = {}
    for vid, vseed in zip(vids, plan_root.spawn(len(vids))):
        knots, speeds = _knots(skeleton, vid, cfg.targets[vid])
        for p in (knots[0], knots[-1]):
            if not gmap.is_free(p):
                raise PipelineError(f"vehicle {vid}: target {p.tolist()} is not in free space")
        seeds = vseed.spawn(len(knots) - 1)
        plans[vid] = _plan_vehicle(vid, skeleton.vehicle(vid).times, knots, speeds, gmap, cfg, seeds)

    X_star = np.arange(T, dtype=float)
    factors = {}
    for vid, vp in plans.items():
        for c in (0, 1):
            model = fit_gp(vp.times, vp.xy[:, c], cfg.gp, noise_std=vp.noise_std)
            post = posterior(model, X_star)
            factors[vid, c] = (post.mean, psd_factor(post.cov))

    rng = np.random.default_rng(draw_root)
    accepted: list[GeneratedScenario] = []
    cap = cfg.n_generate * (1 + cfg.max_redraws_per_scenario)
    n_draws = 0
    while len(accepted) < cfg.n_generate and n_draws < cap:
        draw = n_draws
        n_draws += 1
        tracks, residuals, speed_res = [], {}, {}
        for vid in vids:
            xy = np.column_stack([
                factors[vid, c][0] + factors[vid, c][1] @ rng.standard_normal(T) for c in (0, 1)])
            spd = derive_speeds(xy, 1.0)
            tgt = cfg.targets[vid]
            residuals[vid] = [float(np.linalg.norm(xy[0] - tgt.q_start)),
                              float(np.linalg.norm(xy[-1] - tgt.q_end))]
            speed_res[vid] = [None if tgt.v_start is None else float(abs(spd[0] - tgt.v_start)),
                              None if tgt.v_end is None else float(abs(spd[-1] - tgt.v_end))]
            tracks.append(VehicleTrack(vid, xy, spd, scenario.timestep))
        sc = Scenario(tuple(tracks), label=f"{scenario.label or 'template'}-gen{len(accepted)}")
        sep = min_separation(sc)
        free = bool(all(gmap.points_free(t.positions).all() for t in tracks))
        ends_ok = all(r <= cfg.endpoint_tol for rs in residuals.values() for r in rs)
        audit = {"min_separation": sep if math.isfinite(sep) else None, "free_space": free,
                 "endpoint_residuals": residuals, "speed_residuals": speed_res,
                 "passed": bool(free and ends_ok and sep >= cfg.min_separation_threshold)}
        if not audit["passed"]:
            log.debug("draw %d rejected: sep=%.3f free=%s ends=%s", draw, sep, free, ends_ok)
            continue
        prov = {
            "template": scenario.label,
            "seed": cfg.seed,
            "draw_index": draw,
            "changepoints": [int(c) for c in skeleton.vehicles[0].times[1:-1]],
            "reference_vehicle": skeleton.reference_vehicle,
            "transform": skeleton.transform.to_dict(),
            "planner_costs": {v: list(p.planner_costs) for v, p in plans.items()},
            "stationary_segments": {v: list(p.stationary_segments) for v, p in plans.items()},
            "uniform_fallback_segments": {v: list(p.uniform_fallback) for v, p in plans.items()},
            "no_clearance_segments": {v: list(p.no_clearance) for v, p in plans.items()},
        }
        accepted.append(GeneratedScenario(sc, prov, audit))

    if len(accepted) < cfg.n_generate:
        raise PipelineError(
            f"only {len(accepted)} of {cfg.n_generate} scenarios passed the audit after {n_draws} draws "
            f"(acceptance rate {len(accepted) / n_draws:.3f})")
    return GenerationRun(accepted, seg, skeleton, plans, n_draws)


def generate(cfg: PipelineConfig, scenario: Scenario | None = None, gmap: GridMap | None = None,
             segmentation: SegmentationResult | None = None) -> GenerationRun:
    """Full pipeline with primitive changepoints.

    ``scenario`` and ``gmap`` default to the files named in ``cfg``; a
    precomputed ``segmentation`` of the template may be passed to skip
    the Gibbs sampler.
    """
    scenario, gmap = _resolve_inputs(cfg, scenario, gmap)
    seg = segmentation if segmentation is not None else segment_scenario(scenario, cfg.segmentation)
    log.info("template segmented at %s", list(seg.changepoints))
    return _run(cfg, scenario, gmap, seg, seg.changepoints)


def generate_without_changepoints(cfg: PipelineConfig, scenario: Scenario | None = None,
                                  gmap: GridMap | None = None) -> GenerationRun:
    """Ablation baseline: one planned segment per vehicle from start to end target."""
    scenario, gmap = _resolve_inputs(cfg, scenario, gmap)
    return _run(cfg, scenario, gmap, None, [])


# ---------------------------------------------------------------- evaluation helpers

def pair_discrepancy(generated, template: Scenario, vehicle_a=None, vehicle_b=None) -> dict:
    """Per-scenario trajectory/speed feature discrepancy against the template."""
    ids = template.vehicle_ids
    a = ids[0] if vehicle_a is None else str(vehicle_a)
    b = ids[1] if vehicle_b is None else str(vehicle_b)
    if a == b or len(ids) < 2:
        raise PipelineError("feature discrepancy needs two distinct vehicles")
    f_traj, f_speed = scenario_interaction_feature(template, a, b)
    traj, speed = [], []
    for g in generated:
        sc = g.scenario if isinstance(g, GeneratedScenario) else g
        gt, gs = scenario_interaction_feature(sc, a, b)
        traj.append(feature_discrepancy(gt, f_traj))
        speed.append(feature_discrepancy(gs, f_speed))
    return {"vehicles": [a, b], "trajectory": traj, "speed": speed,
            "mean_trajectory": float(np.mean(traj)) if traj else None,
            "mean_speed": float(np.mean(speed)) if speed else None}


def dump_json(obj, path) -> None:
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    text = json.dumps(obj, sort_keys=True, indent=1, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_run(run: GenerationRun, template: Scenario, out_dir, gmap: GridMap | None = None,
              plots: bool = True) -> dict:
    """Write scenario_<k>.json, features_<k>.json, report.json and plots/*.svg."""
    from .plotting import plot_scenario

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    disc = pair_discrepancy(run.scenarios, template) if template.n_vehicles >= 2 else None
    ids = template.vehicle_ids
    for k, g in enumerate(run.scenarios):
        dump_json(g.to_dict(), out / f"scenario_{k}.json")
        if disc is not None:
            ft, fs = scenario_interaction_feature(g.scenario, ids[0], ids[1])
            dump_json({"trajectory": ft.to_dict(), "speed": fs.to_dict(),
                       "discrepancy": {"trajectory": disc["trajectory"][k], "speed": disc["speed"][k]}},
                      out / f"features_{k}.json")
    cps = run.scenarios[0].provenance["changepoints"] if run.scenarios else []
    if plots and run.scenarios:
        (out / "plots").mkdir(exist_ok=True)
        for k, g in enumerate(run.scenarios):
            plot_scenario(g.scenario, gmap, out / "plots" / f"scenario_{k}.svg", changepoints=cps)
    report = {
        "n_generated": len(run.scenarios),
        "n_draws": run.n_draws,
        "acceptance_rate": run.acceptance_rate,
        "changepoints": cps,
        "discrepancy": disc,
        "min_separation": [g.audit["min_separation"] for g in run.scenarios],
    }
    dump_json(report, out / "report.json")
    return report


__all__ = [
    "GeneratedScenario", "GenerationRun", "PipelineConfig", "VehicleTarget",
    "config_from_dict", "dump_json", "generate", "generate_without_changepoints", "load_config",
    "pair_discrepancy", "write_run",
]
