"""Multi-vehicle scenarios: containers, CSV/JSON I/O, featurization and fixtures.

Positions are in grid units and speeds in grid units per sample. ``timestep``
only records how many seconds one sample spans.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ScenarioError

DEFAULT_TIMESTEP = 0.1


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def derive_speeds(positions, d_t: float = 1.0) -> np.ndarray:
    """Finite-difference speed magnitudes, padded to the input length.

    ``v[t] = |p[t+1] - p[t]| / d_t`` for every consecutive pair; the last value
    is a copy of the penultimate one so speeds stay aligned with positions.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[0] < 2:
        raise ScenarioError("derive_speeds needs at least 2 positions")
    if not d_t > 0:
        raise ScenarioError("d_t must be positive")
    v = np.linalg.norm(np.diff(p, axis=0), axis=1) / d_t
    return np.append(v, v[-1])


@dataclass(frozen=True)
class VehicleTrack:
    vehicle_id: str
    positions: np.ndarray
    speeds: np.ndarray
    timestep: float = DEFAULT_TIMESTEP

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        spd = np.asarray(self.speeds, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ScenarioError(f"vehicle {self.vehicle_id}: positions must be (T, 2)")
        if spd.shape != (pos.shape[0],):
            raise ScenarioError(f"vehicle {self.vehicle_id}: positions and speeds differ in length")
        if pos.shape[0] < 2:
            raise ScenarioError(f"vehicle {self.vehicle_id}: need T >= 2 samples")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(spd))):
            raise ScenarioError(f"vehicle {self.vehicle_id}: non-finite values")
        if np.any(spd < 0):
            raise ScenarioError(f"vehicle {self.vehicle_id}: negative speed")
        if not self.timestep > 0:
            raise ScenarioError("timestep must be positive")
        object.__setattr__(self, "vehicle_id", str(self.vehicle_id))
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "speeds", _frozen(spd))
        object.__setattr__(self, "timestep", float(self.timestep))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class Scenario:
    vehicles: tuple[VehicleTrack, ...]
    label: str = ""

    def __post_init__(self):
        vehicles = tuple(self.vehicles)
        if not vehicles:
            raise ScenarioError("a scenario needs at least one vehicle")
        lengths = {len(v) for v in vehicles}
        if len(lengths) != 1:
            raise ScenarioError(f"ragged time ranges: track lengths {sorted(lengths)}")
        if len({v.timestep for v in vehicles}) != 1:
            raise ScenarioError("all vehicles must share one timestep")
        ids = [v.vehicle_id for v in vehicles]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate vehicle ids")
        object.__setattr__(self, "vehicles", vehicles)

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicles)

    @property
    def length(self) -> int:
        return len(self.vehicles[0])

    @property
    def timestep(self) -> float:
        return self.vehicles[0].timestep

    @property
    def vehicle_ids(self) -> list[str]:
        return [v.vehicle_id for v in self.vehicles]

    def vehicle(self, vehicle_id) -> VehicleTrack:
        for v in self.vehicles:
            if v.vehicle_id == str(vehicle_id):
                return v
        raise KeyError(vehicle_id)

    def positions(self) -> np.ndarray:
        """(N, T, 2) array of all positions."""
        return np.stack([v.positions for v in self.vehicles])

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "vehicles": [
                {
                    "vehicle_id": v.vehicle_id,
                    "positions": v.positions.tolist(),
                    "speeds": v.speeds.tolist(),
                    "timestep": v.timestep,
                }
                for v in self.vehicles
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        try:
            tracks = [
                VehicleTrack(
                    vehicle_id=v["vehicle_id"],
                    positions=v["positions"],
                    speeds=v["speeds"],
                    timestep=v.get("timestep", DEFAULT_TIMESTEP),
                )
                for v in data["vehicles"]
            ]
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario document: {exc}") from exc
        return cls(vehicles=tuple(tracks), label=data.get("label", ""))


def scenario_from_positions(positions: dict, timestep: float = DEFAULT_TIMESTEP,
                            label: str = "", d_t: float = 1.0) -> Scenario:
    """Build a scenario from ``{vehicle_id: (T, 2) positions}``, deriving speeds."""
    tracks = [
        VehicleTrack(vid, p, derive_speeds(p, d_t), timestep)
        for vid, p in positions.items()
    ]
    return Scenario(tuple(tracks), label)


def load_scenario(path, format: str | None = None, timestep: float = DEFAULT_TIMESTEP) -> Scenario:
    """Read a scenario from CSV (``t,vehicle_id,x,y[,speed]``) or from exported JSON."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"missing file: {path}")
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "json":
        return Scenario.from_dict(json.loads(path.read_text()))
    if fmt != "csv":
        raise ScenarioError(f"unsupported scenario format {fmt!r}")

    rows: dict[str, dict[int, tuple]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        missing = {"t", "vehicle_id", "x", "y"} - fields
        if missing:
            raise ScenarioError(f"CSV missing columns: {sorted(missing)}")
        has_speed = "speed" in fields
        for lineno, row in enumerate(reader, start=2):
            try:
                t = int(row["t"])
                vals = (float(row["x"]), float(row["y"]),
                        float(row["speed"]) if has_speed else 0.0)
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"line {lineno}: {exc}") from exc
            if not all(np.isfinite(vals)):
                raise ScenarioError(f"line {lineno}: non-finite value")
            per_vehicle = rows.setdefault(row["vehicle_id"], {})
            if t in per_vehicle:
                raise ScenarioError(f"line {lineno}: duplicate row for t={t}, vehicle {row['vehicle_id']}")
            per_vehicle[t] = vals

    if not rows:
        raise ScenarioError("CSV holds no rows")
    ranges = {vid: sorted(r) for vid, r in rows.items()}
    reference = next(iter(ranges.values()))
    for vid, times in ranges.items():
        if times != list(range(times[0], times[0] + len(times))):
            raise ScenarioError(f"vehicle {vid}: time indices are not contiguous")
        if times != reference:
            raise ScenarioError("ragged time ranges: vehicles cover different time indices")

    tracks = []
    for vid, per_vehicle in rows.items():
        data = np.array([per_vehicle[t] for t in reference])
        speeds = data[:, 2] if has_speed else derive_speeds(data[:, :2])
        tracks.append(VehicleTrack(vid, data[:, :2], speeds, timestep))
    return Scenario(tuple(tracks), label=path.stem)


def save_scenario(scenario: Scenario, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "vehicle_id", "x", "y", "speed"])
            for t in range(scenario.length):
                for v in scenario.vehicles:
                    x, y = v.positions[t]
                    writer.writerow([t, v.vehicle_id, repr(float(x)), repr(float(y)), repr(float(v.speeds[t]))])
    else:
        path.write_text(json.dumps(scenario.to_dict(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class ObservationMatrix:
    values: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    columns: tuple[str, ...] = ()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def unstandardize(self, values: np.ndarray | None = None) -> np.ndarray:
        v = self.values if values is None else np.asarray(values, dtype=float)
        return v * self.stds + self.means

    @classmethod
    def from_raw(cls, raw, columns: Sequence[str] = ()) -> "ObservationMatrix":
        """Standardize each column; constant columns map to zeros (their std is stored as 0)."""
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 1:
            raw = raw[:, None]
        if not np.all(np.isfinite(raw)):
            raise ScenarioError("observations must be finite")
        means = raw.mean(axis=0)
        stds = raw.std(axis=0)
        # a std that underflows to zero (subnormal spread) counts as constant too
        constant = (np.ptp(raw, axis=0) == 0) | (stds == 0)
        stds[constant] = 0.0
        values = np.zeros_like(raw)
        live = ~constant
        values[:, live] = (raw[:, live] - means[live]) / stds[live]
        return cls(_frozen(values), _frozen(means), _frozen(stds), tuple(columns))


def featurize(scenario: Scenario) -> ObservationMatrix:
    """Stack ``(x, y, v)`` of every vehicle per timestep and standardize the columns."""
    cols, names = [], []
    for v in scenario.vehicles:
        cols.extend([v.positions[:, 0], v.positions[:, 1], v.speeds])
        names.extend([f"{v.vehicle_id}.x", f"{v.vehicle_id}.y", f"{v.vehicle_id}.v"])
    return ObservationMatrix.from_raw(np.column_stack(cols), names)


@dataclass(frozen=True)
class Regime:
    """``duration`` samples of constant acceleration, one entry per vehicle.

    Each acceleration is either a 2-vector or a scalar applied along the
    vehicle's heading.
    """

    duration: int
    accelerations: tuple = field(default_factory=tuple)


def make_synthetic_scenario(regimes: Sequence[Regime], seed: int = 0, *,
                            initial_positions=None, initial_velocities=None,
                            headings=None, noise_std: float = 0.0,
                            timestep: float = DEFAULT_TIMESTEP,
                            label: str = "synthetic") -> tuple[Scenario, list[int]]:
    """Piecewise-constant-acceleration fixture with known changepoints.

    Returns the scenario and the ground-truth changepoints (first sample of every
    regime after the first). Speeds are the noise-free kinematic magnitudes;
    ``noise_std`` only perturbs positions.
    """
    if not regimes:
        raise ScenarioError("empty regime list")
    n = len(regimes[0].accelerations)
    if n == 0:
        raise ScenarioError("regimes need at least one vehicle acceleration")
    for r in regimes:
        if r.duration < 2:
            raise ScenarioError("every regime needs at least 2 samples")
        if len(r.accelerations) != n:
            raise ScenarioError("every regime must list one acceleration per vehicle")

    p = np.zeros((n, 2)) if initial_positions is None else np.array(initial_positions, dtype=float)
    v = np.zeros((n, 2)) if initial_velocities is None else np.array(initial_velocities, dtype=float)
    if headings is None:
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        heading = np.where(norms > 0, v / np.where(norms > 0, norms, 1.0), [1.0, 0.0])
    else:
        h = np.array(headings, dtype=float)
        heading = h / np.linalg.norm(h, axis=1, keepdims=True)

    total = sum(r.duration for r in regimes)
    pos = np.empty((n, total, 2))
    spd = np.empty((n, total))
    t = 0
    changepoints = []
    for k, r in enumerate(regimes):
        if k:
            changepoints.append(t)
        acc = np.array([
            np.asarray(a, dtype=float) if np.ndim(a) else float(a) * heading[i]
            for i, a in enumerate(r.accelerations)
        ])
        for _ in range(r.duration):
            pos[:, t] = p
            spd[:, t] = np.linalg.norm(v, axis=1)
            p = p + v + 0.5 * acc
            v = v + acc
            t += 1

    rng = np.random.default_rng(seed)
    if noise_std > 0:
        pos = pos + rng.normal(0.0, noise_std, size=pos.shape)
    # numerically-zero speeds (end of a full stop) would otherwise be ~1e-16
    spd[spd < 1e-12] = 0.0
    tracks = tuple(
        VehicleTrack(chr(ord("A") + i) if n <= 26 else str(i), pos[i], spd[i], timestep)
        for i in range(n)
    )
    return Scenario(tracks, label), changepoints
