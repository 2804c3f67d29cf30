"""Dependency-free SVG rendering of scenarios: map panel plus speed-vs-time panel."""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .planner import GridMap
from .scenario import Scenario

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
PANEL = 400
PAD = 40


def _f(x: float) -> str:
    return f"{x:.2f}"


def _polyline(pts, color: str, width: float = 1.5, dash: str | None = None) -> str:
    coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def render_svg(scenario: Scenario, gmap: GridMap | None = None, changepoints=()) -> str:
    gmap = gmap or GridMap()
    scenario = getattr(scenario, "scenario", scenario)
    s = PANEL / max(gmap.width, gmap.height)

    def to_map(p):
        p = np.atleast_2d(p)
        return np.column_stack([PAD + p[:, 0] * s, PAD + PANEL - p[:, 1] * s])

    T = scenario.length
    vmax = max(float(max(v.speeds.max() for v in scenario.vehicles)), 1e-9)
    x0 = 2 * PAD + PANEL

    def to_speed(t, v):
        return np.column_stack([x0 + np.asarray(t) * PANEL / max(T - 1, 1),
                                PAD + PANEL - np.asarray(v) * PANEL / vmax])

    cps = [int(c) for c in changepoints if 0 < int(c) < T]
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{3 * PAD + 2 * PANEL}" height="{2 * PAD + PANEL}">',
        f'<title>{escape(scenario.label or "scenario")}</title>',
        f'<rect x="{PAD}" y="{PAD}" width="{_f(gmap.width * s)}" height="{_f(gmap.height * s)}" '
        'fill="white" stroke="black"/>',
    ]
    for ob in gmap.obstacles:
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in to_map(ob.vertices))
        out.append(f'<polygon points="{pts}" fill="#999999" stroke="#555555"/>')
    out.append(f'<rect x="{x0}" y="{PAD}" width="{PANEL}" height="{PANEL}" fill="white" stroke="black"/>')
    for c in cps:
        x = x0 + c * PANEL / max(T - 1, 1)
        out.append(f'<line x1="{_f(x)}" y1="{PAD}" x2="{_f(x)}" y2="{PAD + PANEL}" '
                   'stroke="#888888" stroke-dasharray="4,3"/>')
    for i, v in enumerate(scenario.vehicles):
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<g id="vehicle-{escape(v.vehicle_id)}">')
        out.append(_polyline(to_map(v.positions), color))
        for c in cps:
            cx, cy = to_map(v.positions[c])[0]
            out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="3" fill="{color}"/>')
        out.append(_polyline(to_speed(np.arange(T), v.speeds), color))
        out.append(f'<text x="{x0 + PANEL + 5}" y="{PAD + 15 * (i + 1)}" fill="{color}" '
                   f'font-size="12">{escape(v.vehicle_id)}</text>')
        out.append("</g>")
    out.append(f'<text x="{PAD}" y="{PAD - 10}" font-size="12">trajectories</text>')
    out.append(f'<text x="{x0}" y="{PAD - 10}" font-size="12">speed (max {_f(vmax)}) vs time</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_scenario(scenario, gmap: GridMap | None, out, changepoints=()) -> Path:
    p = Path(out)
    p.write_text(render_svg(scenario, gmap, changepoints))
    return p
