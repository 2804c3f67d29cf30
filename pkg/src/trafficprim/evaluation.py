"""DTW interaction features and separation audits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError
from .scenario import Scenario

METRICS = ("euclidean", "manhattan")


@dataclass(frozen=True)
class DtwFeature:
    """Cost matrix scaled to [0, 1] by its max entry, plus the raw DTW distance."""

    matrix: np.ndarray
    metric: str
    dtw_distance: float
    kind: str = "accumulated"

    def to_dict(self) -> dict:
        return {"metric": self.metric, "kind": self.kind, "dtw_distance": self.dtw_distance,
                "shape": list(self.matrix.shape), "matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DtwFeature":
        return cls(np.asarray(d["matrix"], dtype=float).reshape(d["shape"]), d["metric"],
                   float(d["dtw_distance"]), d.get("kind", "accumulated"))


def _as_2d(seq) -> np.ndarray:
    a = np.asarray(seq, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or len(a) == 0:
        raise EvaluationError("DTW inputs must be non-empty sequences of scalars or points")
    return a


def local_cost(seq_a, seq_b, metric: str = "euclidean") -> np.ndarray:
    a, b = _as_2d(seq_a), _as_2d(seq_b)
    if a.shape[1] != b.shape[1]:
        raise EvaluationError("DTW inputs must have the same point dimension")
    diff = a[:, None, :] - b[None, :, :]
    if metric == "euclidean":
        return np.sqrt(np.sum(diff * diff, axis=2))
    if metric == "manhattan":
        return np.sum(np.abs(diff), axis=2)
    raise EvaluationError(f"unknown metric {metric!r}; expected one of {METRICS}")


def accumulated_cost(C: np.ndarray) -> np.ndarray:
    """Unit-step DTW recursion, swept over anti-diagonals."""
    n, m = C.shape
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(D[i - 1, j], D[i, j - 1]), D[i - 1, j - 1])
        D[i, j] = C[i - 1, j - 1] + best
    return D[1:, 1:]


def _normalise(M: np.ndarray) -> np.ndarray:
    top = float(M.max())
    return M / top if top > 0 else np.zeros_like(M)


def dtw(seq_a, seq_b, metric: str = "euclidean", kind: str = "accumulated") -> DtwFeature:
    C = local_cost(seq_a, seq_b, metric)
    D = accumulated_cost(C)
    if kind == "accumulated":
        M = D
    elif kind == "local":
        M = C
    else:
        raise EvaluationError(f"unknown feature kind {kind!r}")
    return DtwFeature(_normalise(M), metric, float(D[-1, -1]), kind)


def scenario_interaction_feature(scenario: Scenario, vehicle_a, vehicle_b,
                                 kind: str = "accumulated") -> tuple[DtwFeature, DtwFeature]:
    """(trajectory, speed) features between two vehicles of one scenario."""
    va, vb = scenario.vehicle(vehicle_a), scenario.vehicle(vehicle_b)
    return (dtw(va.positions, vb.positions, "euclidean", kind),
            dtw(va.speeds, vb.speeds, "manhattan", kind))


def resample_bilinear(M, shape) -> np.ndarray:
    """Bilinear resampling with corners aligned."""
    M = np.asarray(M, dtype=float)
    n_out, m_out = (int(s) for s in shape)
    if n_out < 1 or m_out < 1:
        raise EvaluationError("target shape must be positive")
    n, m = M.shape
    if (n, m) == (n_out, m_out):
        return M.copy()
    ri = np.linspace(0, n - 1, n_out)
    ci = np.linspace(0, m - 1, m_out)
    rows = np.array([np.interp(ci, np.arange(m), row) for row in M])
    return np.array([np.interp(ri, np.arange(n), col) for col in rows.T]).T


def aggregate_features(features, common_shape) -> DtwFeature:
    features = list(features)
    if not features:
        raise EvaluationError("need at least one feature to aggregate")
    mats = [resample_bilinear(f.matrix, common_shape) for f in features]
    return DtwFeature(np.mean(mats, axis=0), features[0].metric,
                      float(np.mean([f.dtw_distance for f in features])), features[0].kind)


def feature_discrepancy(f_generated: DtwFeature, f_template: DtwFeature) -> float:
    """Mean absolute difference after resampling to the template's shape."""
    g = resample_bilinear(f_generated.matrix, f_template.matrix.shape)
    return float(np.mean(np.abs(g - f_template.matrix)))


def min_separation(scenario: Scenario) -> float:
    """Smallest inter-vehicle distance over all timesteps; ``inf`` for one vehicle."""
    P = scenario.positions()
    best = math.inf
    for i in range(len(P)):
        for j in range(i + 1, len(P)):
            best = min(best, float(np.min(np.linalg.norm(P[i] - P[j], axis=1))))
    return best


def write_pgm(matrix, path) -> None:
    """8-bit binary portable graymap of a [0, 1] matrix (row 0 at the top)."""
    M = np.clip(np.asarray(matrix, dtype=float), 0.0, 1.0)
    img = np.rint(M * 255).astype(np.uint8)
    h, w = img.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
