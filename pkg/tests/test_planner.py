from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull
from shapely.geometry import LineString, Point, Polygon, box

from trafficprim.errors import PlanningError
from trafficprim.planner import (ConvexObstacle, ExtendStatus, GridMap, PlannerConfig, Tree,
                                 choose_parent, connect, extend, load_map, near_radius, plan,
                                 rewire)

EMPTY = GridMap()


def _wall_map(gap=True):
    obs = [{"type": "rect", "xmin": 480, "ymin": 0, "xmax": 520, "ymax": 450 if gap else 1000}]
    if gap:
        obs.append({"type": "rect", "xmin": 480, "ymin": 550, "xmax": 520, "ymax": 1000})
    return GridMap.from_dict({"width": 1000, "height": 1000, "obstacles": obs})


# ------------------------------------------------------------------ radius


def test_near_radius_examples():
    cfg = PlannerConfig(gamma_rrt=50, zeta=30)
    assert near_radius(2, 2, cfg) == pytest.approx(min(50 * math.sqrt(math.log(2) / 2), 30))
    assert near_radius(2, 2, cfg) == pytest.approx(29.44, abs=5e-3)
    assert near_radius(1, 2, cfg) == 30
    assert near_radius(100, 2, PlannerConfig(zeta=0)) == 0


def test_near_radius_shrinks_beyond_cap():
    cfg = PlannerConfig(gamma_rrt=80, zeta=50)
    r = [near_radius(n, 2, cfg) for n in range(3, 5000, 7)]
    assert all(b <= a for a, b in zip(r, r[1:]))
    assert near_radius(10**9, 2, cfg) < 0.02


# ------------------------------------------------------------------ collision checks


def test_obstacle_free_examples():
    m = GridMap(100, 100, (ConvexObstacle.rect(40, 40, 60, 60),))
    assert m.obstacle_free((10, 10), (90, 10))
    assert not m.obstacle_free((10, 50), (90, 50))
    assert not m.obstacle_free((10, 60), (90, 60))  # grazing the top edge
    assert not m.obstacle_free((50, 50), (50, 50))
    assert not m.obstacle_free((-1, 0), (5, 5))


def _shapely(ob: ConvexObstacle):
    return Polygon(ob.vertices.tolist())


def test_obstacle_free_matches_exact_oracle():
    rng = np.random.default_rng(0)
    n = 20
    cases = 0
    while cases < 1000:
        if rng.random() < 0.5:
            x0, x1 = sorted(rng.choice(n + 1, 2, replace=False))
            y0, y1 = sorted(rng.choice(n + 1, 2, replace=False))
            ob = ConvexObstacle.rect(x0, y0, x1, y1)
            geom = box(x0, y0, x1, y1)
        else:
            pts = rng.integers(0, n + 1, size=(6, 2)).astype(float)
            try:
                hull = ConvexHull(pts)
            except Exception:
                continue
            ob = ConvexObstacle(pts[hull.vertices])
            geom = _shapely(ob)
        m = GridMap(n, n, (ob,))
        a, b = rng.integers(0, n + 1, size=(2, 2)).astype(float)
        line = Point(a) if np.array_equal(a, b) else LineString([a, b])
        assert m.obstacle_free(a, b) == (not line.intersects(geom)), (a, b, ob.vertices)
        cases += 1


def test_points_free():
    m = _wall_map()
    assert m.points_free([[100, 100], [500, 500], [500, 100], [1001, 3]]).tolist() == [True, True, False, False]


def test_map_json_round_trip(tmp_path):
    d = {"width": 200, "height": 100, "obstacles": [
        {"type": "rect", "xmin": 10, "ymin": 10, "xmax": 20, "ymax": 30},
        {"type": "polygon", "vertices": [[50, 50], [70, 50], [60, 70]]}]}
    (tmp_path / "m.json").write_text(json.dumps(d))
    m = load_map(tmp_path / "m.json")
    assert m.width == 200 and len(m.obstacles) == 2
    assert GridMap.from_dict(m.to_dict()).to_dict() == m.to_dict()


@pytest.mark.parametrize("bad", [
    {"obstacles": [{"type": "rect", "xmin": 10, "ymin": 10, "xmax": 1200, "ymax": 30}]},
    {"obstacles": [{"type": "polygon", "vertices": [[0, 0], [10, 0], [2, 2], [0, 10]]}]},
    {"obstacles": [{"type": "circle"}]},
    {"obstacles": [{"type": "rect", "xmin": 10}]},
    {"width": 0},
])
def test_map_rejects_bad_geometry(bad):
    with pytest.raises(PlanningError):
        GridMap.from_dict(bad)


# ------------------------------------------------------------------ primitives

CFG = PlannerConfig(step_size=5, gamma_rrt=50, zeta=30)


def test_extend_advances_by_step():
    t = Tree((0, 0))
    s, i = extend(t, (10, 0), EMPTY, CFG)
    assert s is ExtendStatus.ADVANCED and np.allclose(t.positions[i], (5, 0))


def test_extend_reaches_within_step():
    t = Tree((100, 100))
    s, i = extend(t, (103, 104), EMPTY, CFG)
    assert s is ExtendStatus.REACHED and np.array_equal(t.positions[i], (103, 104))


def test_extend_trapped_leaves_tree_unchanged():
    m = GridMap(100, 100, (ConvexObstacle.rect(11, 0, 12, 100),))
    t = Tree((10, 50))
    s, i = extend(t, (20, 50), m, CFG)
    assert s is ExtendStatus.TRAPPED and i is None and len(t) == 1


def test_connect_corridor_takes_four_extensions():
    m = GridMap(100, 100, (ConvexObstacle.rect(0, 0, 100, 45), ConvexObstacle.rect(0, 55, 100, 100)))
    t = Tree((10, 50))
    s, i = connect(t, (30, 50), m, CFG)
    assert s is ExtendStatus.REACHED and len(t) == 5
    assert np.array_equal(t.positions[i], (30, 50))


def test_connect_blocked_and_trivial():
    m = GridMap(100, 100, (ConvexObstacle.rect(11, 0, 12, 100),))
    t = Tree((10, 50))
    assert connect(t, (40, 50), m, CFG)[0] is ExtendStatus.TRAPPED
    s, i = connect(t, (10, 50), m, CFG)
    assert s is ExtendStatus.REACHED and i == 0 and len(t) == 1


def _three_node_tree():
    t = Tree((0, 0))
    a = t.add((10, 0), 0)      # cost 10
    b = t.add((10, 10), a)     # cost 20, the nearest to q_new below
    return t, a, b


def test_choose_parent_cases():
    t, a, b = _three_node_tree()
    q_new = np.array([5.0, 12.0])
    assert choose_parent(t, [], b, q_new, EMPTY) == b
    # root reaches q_new for 13 < 20 + 5.39
    assert choose_parent(t, [0, a, b], b, q_new, EMPTY) == 0
    wall = GridMap(100, 100, (ConvexObstacle.rect(1, 5, 4, 7),))
    assert choose_parent(t, [0, a, b], b, q_new, wall) in (a, b)
    c_a = t.costs[a] + math.dist(t.positions[a], q_new)
    c_b = t.costs[b] + math.dist(t.positions[b], q_new)
    assert choose_parent(t, [0, a, b], b, q_new, wall) == (a if c_a < c_b else b)


def test_rewire_reparents_and_propagates():
    t, a, b = _three_node_tree()
    c = t.add((10, 20), b)  # cost 30
    n = t.add((5, 5), 0)    # cost 7.07
    before = t.costs.copy()
    # c is outside the near set, so it only moves through its parent
    assert rewire(t, [0, a, b], 0, n, EMPTY) == [b]
    assert t.parents[b] == n
    assert t.costs[b] == pytest.approx(2 * math.hypot(5, 5))
    assert t.costs[c] == pytest.approx(2 * math.hypot(5, 5) + 10)
    assert t.costs[a] == before[a]
    assert t.parents[c] == b
    t.audit(EMPTY)


def test_rewire_noop_when_nothing_improves():
    t, a, b = _three_node_tree()
    n = t.add((10, -3), a)
    snapshot = (t.parents.copy(), t.costs.copy())
    assert rewire(t, [0, a, b], a, n, EMPTY) == []
    assert np.array_equal(t.parents, snapshot[0]) and np.array_equal(t.costs, snapshot[1])


def test_audit_detects_corruption():
    t, a, b = _three_node_tree()
    t.audit(EMPTY)
    t._cost[b] += 1.0
    with pytest.raises(PlanningError, match="cost"):
        t.audit()
    t, a, b = _three_node_tree()
    t._parent[a] = b
    with pytest.raises(PlanningError, match="cycle"):
        t.audit()
    t, a, b = _three_node_tree()
    with pytest.raises(PlanningError, match="obstacle"):
        t.audit(GridMap(100, 100, (ConvexObstacle.rect(9, 4, 11, 6),)))


def test_random_extensions_keep_tree_valid():
    rng = np.random.default_rng(5)
    m = _wall_map()
    t = Tree((100, 100))
    for k in range(600):
        extend(t, rng.uniform(0, 1000, 2), m, PlannerConfig(step_size=25))
        if k % 100 == 0:
            t.audit(m)
    t.audit(m)


# ------------------------------------------------------------------ plan


def test_plan_zero_length():
    p = plan(EMPTY, (5, 5), (5, 5))
    assert p.cost == 0 and len(p.waypoints) == 2


def test_plan_rejects_blocked_endpoints():
    m = _wall_map()
    with pytest.raises(PlanningError, match="free space"):
        plan(m, (500, 100), (900, 900))
    with pytest.raises(PlanningError):
        plan(m, (100, 100), (2000, 900))


def test_plan_reports_failure_with_node_counts():
    with pytest.raises(PlanningError) as info:
        plan(_wall_map(gap=False), (100, 100), (900, 900), PlannerConfig(max_iterations=200))
    assert info.value.nodes_start > 1 and info.value.nodes_goal > 1


@pytest.fixture(scope="module")
def wall_plan():
    m = _wall_map()
    return m, plan(m, (100, 100), (900, 900), PlannerConfig(max_iterations=1500, seed=3, audit_every=50))


def test_plan_path_is_collision_free(wall_plan):
    m, p = wall_plan
    w = p.waypoints
    assert np.array_equal(w[0], (100, 100)) and np.array_equal(w[-1], (900, 900))
    assert m.points_free(w).all()
    assert m.segments_free(w[:-1], w[1:]).all()


def test_plan_cost_bounds(wall_plan):
    _, p = wall_plan
    length = float(np.sum(np.linalg.norm(np.diff(p.waypoints, axis=0), axis=1)))
    assert p.cost == pytest.approx(length, rel=1e-9)
    assert p.cost >= 800 * math.sqrt(2) - 1e-9
    assert p.cost <= p.first_connection_cost + 1e-9


def test_plan_is_deterministic(wall_plan):
    m, p = wall_plan
    again = plan(m, (100, 100), (900, 900), PlannerConfig(max_iterations=1500, seed=3))
    assert np.array_equal(p.waypoints, again.waypoints) and p.cost == again.cost


def test_config_validation():
    with pytest.raises(PlanningError):
        PlannerConfig(step_size=0)
    with pytest.raises(PlanningError):
        PlannerConfig(max_iterations=0)


def test_clearance_examples():
    m = GridMap(100, 100, (ConvexObstacle.rect(40, 40, 60, 60),))
    assert m.is_free((65, 50)) and not m.inflated(10).is_free((65, 50))
    assert m.obstacle_free((0, 65), (100, 65))
    assert not m.inflated(10).obstacle_free((0, 65), (100, 65))
    assert m.inflated(4).obstacle_free((0, 65), (100, 65))
    assert GridMap.from_dict(m.inflated(3).to_dict()).clearance == 3
    with pytest.raises(PlanningError):
        m.inflated(-1)


def test_clearance_covers_buffer():
    """Every point within the clearance of an obstacle is blocked."""
    rng = np.random.default_rng(8)
    for _ in range(200):
        pts = rng.uniform(30, 70, size=(6, 2))
        hull = ConvexHull(pts)
        ob = ConvexObstacle(pts[hull.vertices])
        geom = _shapely(ob)
        r = float(rng.uniform(0.5, 15))
        probe = rng.uniform(0, 100, size=(50, 2))
        near = np.array([geom.distance(Point(p)) <= r for p in probe])
        assert np.all(ob.contains(probe, margin=r)[near])
