"""Synthetic templates with known primitive boundaries."""
from __future__ import annotations

import numpy as np

from .scenario import Regime, Scenario, make_synthetic_scenario
from .transform import AffineTransform


def three_regime_fixture(seed: int = 0, durations=(40, 40, 40), v0: float = 4.0,
                         noise_std: float = 0.5) -> tuple[Scenario, list[int]]:
    """Vehicle A brakes to a stop, both wait, then B pulls away at right angles."""
    d1, d2, d3 = durations
    regimes = [Regime(d1, (-v0 / d1, 0.0)), Regime(d2, (0.0, 0.0)), Regime(d3, (0.0, v0 / d3))]
    return make_synthetic_scenario(
        regimes, seed=seed, initial_positions=[[100, 500], [500, 100]],
        initial_velocities=[[v0, 0], [0, 0]], headings=[[1, 0], [0, 1]],
        noise_std=noise_std, label="three-regime")


def stop_and_go_fixture(seed: int = 0, durations=(30, 30, 30), v0: float = 4.0,
                        noise_std: float = 0.5) -> tuple[Scenario, list[int]]:
    """A decelerates, dwells, and accelerates again while B crosses ahead at constant speed.

    With the default 0.1 s timestep the dwell lasts 3 s.
    """
    d1, d2, d3 = durations
    regimes = [Regime(d1, (-v0 / d1, 0.0)), Regime(d2, (0.0, 0.0)), Regime(d3, (v0 / d3, 0.0))]
    return make_synthetic_scenario(
        regimes, seed=seed, initial_positions=[[100, 500], [200, 380]],
        initial_velocities=[[v0, 0], [0, v0]], headings=[[1, 0], [0, 1]],
        noise_std=noise_std, label="stop-and-go")


def targets_from_transform(scenario: Scenario, tr: AffineTransform) -> dict:
    """Per-vehicle targets consistent with one transform: mapped endpoints and scaled boundary speeds."""
    out = {}
    for v in scenario.vehicles:
        ends = tr.apply(np.array([v.positions[0], v.positions[-1]]))
        out[v.vehicle_id] = {"q_start": ends[0].tolist(), "q_end": ends[1].tolist(),
                             "v_start": float(v.speeds[0] * tr.scale),
                             "v_end": float(v.speeds[-1] * tr.scale)}
    return out
