"""Similarity transforms (rotation, translation, uniform scale) onto a target road."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TransformError
from .scenario import Scenario
from .segmentation import SegmentationResult


@dataclass(frozen=True)
class AffineTransform:
    """Maps ``p`` to ``scale * R(rotation_angle) @ (p - pivot) + anchor``.

    ``translation`` is the homogeneous-matrix offset ``anchor - R @ pivot`` of
    the rigid part, kept for export; ``apply`` uses the pivot form so the pivot
    lands on the anchor exactly.
    """

    rotation_angle: float
    translation: tuple[float, float]
    scale: float
    pivot: tuple[float, float]
    anchor: tuple[float, float]

    def __post_init__(self):
        if not self.scale > 0:
            raise TransformError("scale must be positive")

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.rotation_angle), math.sin(self.rotation_angle)
        return np.array([[c, -s], [s, c]])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous rigid part (rotation about the origin, then translation)."""
        m = np.eye(3)
        m[:2, :2] = self.rotation
        m[:2, 2] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        out = self.scale * ((p - np.asarray(self.pivot)) @ self.rotation.T) + np.asarray(self.anchor)
        return out[0] if single else out

    def inverse(self) -> "AffineTransform":
        return make_transform(-self.rotation_angle, 1.0 / self.scale, pivot=self.anchor, anchor=self.pivot)

    def to_dict(self) -> dict:
        return {
            "rotation_angle": self.rotation_angle,
            "translation": list(self.translation),
            "scale": self.scale,
            "pivot": list(self.pivot),
            "anchor": list(self.anchor),
        }


def make_transform(angle: float, scale: float, pivot, anchor) -> AffineTransform:
    pivot = tuple(float(v) for v in pivot)
    anchor = tuple(float(v) for v in anchor)
    c, s = math.cos(angle), math.sin(angle)
    tx = anchor[0] - (c * pivot[0] - s * pivot[1])
    ty = anchor[1] - (s * pivot[0] + c * pivot[1])
    return AffineTransform(float(angle), (tx, ty), float(scale), pivot, anchor)


def compute_transform(p_start, p_end, q_start, q_end) -> AffineTransform:
    """Transform taking segment ``p_start -> p_end`` onto ``q_start -> q_end``.

    The rotation is the signed angle between the two direction vectors, so
    clockwise alignments land on ``q_end`` as well.
    """
    vp = np.asarray(p_end, dtype=float) - np.asarray(p_start, dtype=float)
    vq = np.asarray(q_end, dtype=float) - np.asarray(q_start, dtype=float)
    np_, nq = float(np.hypot(*vp)), float(np.hypot(*vq))
    if np_ == 0.0 or nq == 0.0:
        raise TransformError("degenerate direction vector (start and end coincide)")
    cross = vp[0] * vq[1] - vp[1] * vq[0]
    dot = vp[0] * vq[0] + vp[1] * vq[1]
    return make_transform(math.atan2(cross, dot), nq / np_, p_start, q_start)


def apply_to_points(tr: AffineTransform, points) -> np.ndarray:
    return tr.apply(np.asarray(points, dtype=float).reshape(-1, 2))


@dataclass(frozen=True)
class VehicleSkeleton:
    """Knots of one vehicle in the target frame: start, changepoints, end."""

    vehicle_id: str
    times: tuple[int, ...]
    positions: np.ndarray
    speeds: np.ndarray

    def to_dict(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "times": list(self.times),
            "positions": self.positions.tolist(),
            "speeds": self.speeds.tolist(),
        }


@dataclass(frozen=True)
class ScenarioSkeleton:
    transform: AffineTransform
    reference_vehicle: str
    vehicles: tuple[VehicleSkeleton, ...]

    def vehicle(self, vehicle_id) -> VehicleSkeleton:
        for v in self.vehicles:
            if v.vehicle_id == str(vehicle_id):
                return v
        raise KeyError(vehicle_id)

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "reference_vehicle": self.reference_vehicle,
            "vehicles": [v.to_dict() for v in self.vehicles],
        }


def default_reference_vehicle(scenario: Scenario) -> str:
    """Vehicle with the longest start-to-end displacement."""
    disp = [float(np.hypot(*(v.positions[-1] - v.positions[0]))) for v in scenario.vehicles]
    return scenario.vehicles[int(np.argmax(disp))].vehicle_id


def transform_scenario_skeleton(seg: SegmentationResult | tuple | list, scenario: Scenario,
                                targets: dict, reference_vehicle=None) -> ScenarioSkeleton:
    """Carry every vehicle's changepoint knots into the target frame.

    One transform is derived from the reference vehicle's endpoints and its
    ``targets[ref] = (q_start, q_end)``; it is shared by all vehicles so
    their relative geometry is preserved. Knot speeds scale with the
    transform's scale factor. ``seg`` may also be a plain changepoint list.
    """
    ref = str(reference_vehicle) if reference_vehicle is not None else default_reference_vehicle(scenario)
    try:
        ref_track = scenario.vehicle(ref)
    except KeyError:
        raise TransformError(f"reference vehicle {ref!r} not in scenario") from None
    if ref not in {str(k) for k in targets}:
        raise TransformError(f"no targets for reference vehicle {ref!r}")
    q_start, q_end = {str(k): v for k, v in targets.items()}[ref][:2]
    try:
        tr = compute_transform(ref_track.positions[0], ref_track.positions[-1], q_start, q_end)
    except TransformError as exc:
        raise TransformError(f"reference vehicle {ref!r} is stationary; pick a moving reference") from exc

    cps = list(seg.changepoints if isinstance(seg, SegmentationResult) else seg)
    T = scenario.length
    times = tuple([0] + [int(c) for c in cps if 0 < c < T - 1] + [T - 1])
    skeletons = []
    for v in scenario.vehicles:
        idx = list(times)
        skeletons.append(VehicleSkeleton(
            vehicle_id=v.vehicle_id,
            times=times,
            positions=tr.apply(v.positions[idx]),
            speeds=v.speeds[idx] * tr.scale,
        ))
    return ScenarioSkeleton(tr, ref, tuple(skeletons))
