"""RRT*-Connect over a 2-D map with convex obstacles.

Two trees grow from the start and the goal. Each extension picks the
cheapest collision-free parent among nearby nodes and then rewires
neighbours through the new node. The search runs for the full iteration
budget, records every pair of nodes where the trees met, and returns the
cheapest start-to-goal path among them.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PlanningError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- geometry

def _convex_halfplanes(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward normals ``N`` and offsets ``c`` with interior ``N @ p <= c``."""
    v = np.asarray(vertices, dtype=float)
    area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    if area2 < 0:
        v = v[::-1]
    e = np.roll(v, -1, axis=0) - v
    normals = np.column_stack([e[:, 1], -e[:, 0]])
    offsets = np.einsum("ij,ij->i", normals, v)
    return normals, offsets


def _is_convex(v: np.ndarray) -> bool:
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    return bool(np.all(cross >= 0) or np.all(cross <= 0)) and np.any(cross != 0)


@dataclass(frozen=True)
class ConvexObstacle:
    """Closed convex region; touching its boundary counts as a collision."""

    vertices: np.ndarray
    kind: str = "polygon"
    normals: np.ndarray = field(init=False, repr=False, compare=False)
    offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise PlanningError("obstacle polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise PlanningError("obstacle vertices must be finite")
        if not _is_convex(v):
            raise PlanningError("obstacle polygon must be convex and non-degenerate")
        v.flags.writeable = False
        n, c = _convex_halfplanes(v)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "offsets", c)

    @classmethod
    def rect(cls, xmin, ymin, xmax, ymax) -> "ConvexObstacle":
        if not (xmax > xmin and ymax > ymin):
            raise PlanningError("rectangle needs xmax > xmin and ymax > ymin")
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]]), kind="rect")

    def _offsets(self, margin: float) -> np.ndarray:
        # pushing every edge out by ``margin`` covers all points within ``margin`` of the region
        if margin == 0:
            return self.offsets
        return self.offsets + margin * np.linalg.norm(self.normals, axis=1)

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(p @ self.normals.T <= self._offsets(margin), axis=1)

    def hits(self, a, b, margin: float = 0.0) -> np.ndarray:
        """Exact closed-segment intersection test (Cyrus-Beck), vectorised over segments."""
        A = np.atleast_2d(np.asarray(a, dtype=float))
        D = np.atleast_2d(np.asarray(b, dtype=float)) - A
        num = self._offsets(margin) - A @ self.normals.T
        den = D @ self.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = num / den
        t_hi = np.min(np.where(den > 0, ratio, np.inf), axis=1, initial=1.0)
        t_lo = np.max(np.where(den < 0, ratio, -np.inf), axis=1, initial=0.0)
        parallel_ok = np.all((den != 0) | (num >= 0), axis=1)
        return parallel_ok & (t_lo <= t_hi)

    def to_dict(self) -> dict:
        if self.kind == "rect":
            lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
            return {"type": "rect", "xmin": lo[0], "ymin": lo[1], "xmax": hi[0], "ymax": hi[1]}
        return {"type": "polygon", "vertices": self.vertices.tolist()}


@dataclass(frozen=True)
class GridMap:
    """Rectangular workspace ``[0,width] x [0,height]`` minus obstacles.

    ``clearance`` grows every obstacle by that many grid units (edges pushed
    outward), which keeps planned paths away from obstacle boundaries.
    """

    width: float = 1000
    height: float = 1000
    obstacles: tuple[ConvexObstacle, ...] = ()
    clearance: float = 0.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise PlanningError("map width and height must be positive")
        if not self.clearance >= 0:
            raise PlanningError("clearance must be >= 0")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for ob in self.obstacles:
            v = ob.vertices
            if v.min() < 0 or v[:, 0].max() > self.width or v[:, 1].max() > self.height:
                raise PlanningError("obstacle geometry must lie inside the map")

    def in_bounds(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return (p[:, 0] >= 0) & (p[:, 0] <= self.width) & (p[:, 1] >= 0) & (p[:, 1] <= self.height)

    def points_free(self, points) -> np.ndarray:
        ok = self.in_bounds(points)
        for ob in self.obstacles:
            ok &= ~ob.contains(points, self.clearance)
        return ok

    def is_free(self, point) -> bool:
        return bool(self.points_free(point)[0])

    def segments_free(self, a, b) -> np.ndarray:
        # the workspace is convex, so in-bounds endpoints keep the segment inside
        ok = self.in_bounds(a) & self.in_bounds(b)
        for ob in self.obstacles:
            ok &= ~ob.hits(a, b, self.clearance)
        return ok

    def obstacle_free(self, a, b) -> bool:
        return bool(self.segments_free(a, b)[0])

    def inflated(self, clearance: float) -> "GridMap":
        return GridMap(self.width, self.height, self.obstacles, float(clearance))

    def to_dict(self) -> dict:
        d = {"width": self.width, "height": self.height,
             "obstacles": [ob.to_dict() for ob in self.obstacles]}
        if self.clearance:
            d["clearance"] = self.clearance
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridMap":
        obstacles = []
        for i, o in enumerate(d.get("obstacles", [])):
            kind = o.get("type")
            try:
                if kind == "rect":
                    obstacles.append(ConvexObstacle.rect(o["xmin"], o["ymin"], o["xmax"], o["ymax"]))
                elif kind == "polygon":
                    obstacles.append(ConvexObstacle(np.asarray(o["vertices"], dtype=float)))
                else:
                    raise PlanningError(f"obstacle {i}: unknown type {kind!r}")
            except KeyError as exc:
                raise PlanningError(f"obstacle {i}: missing field {exc}") from None
        return cls(d.get("width", 1000), d.get("height", 1000), tuple(obstacles), float(d.get("clearance", 0.0)))


def load_map(path) -> GridMap:
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError:
        raise PlanningError(f"map file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise PlanningError(f"map file is not valid JSON: {exc}") from None
    return GridMap.from_dict(d)


# ---------------------------------------------------------------- tree

class Tree:
    """Growable tree with per-node cost-to-root and child lists."""

    def __init__(self, root, capacity: int = 1024):
        self._pos = np.empty((capacity, 2))
        self._cost = np.empty(capacity)
        self._parent = np.full(capacity, -1, dtype=np.int64)
        self.children: list[list[int]] = []
        self.n = 0
        self._append(np.asarray(root, dtype=float), -1, 0.0)

    def _append(self, p, parent: int, cost: float) -> int:
        if self.n == len(self._cost):
            cap = 2 * self.n
            self._pos = np.resize(self._pos, (cap, 2))
            self._cost = np.resize(self._cost, cap)
            self._parent = np.resize(self._parent, cap)
        i = self.n
        self._pos[i] = p
        self._cost[i] = cost
        self._parent[i] = parent
        self.children.append([])
        if parent >= 0:
            self.children[parent].append(i)
        self.n += 1
        return i

    @property
    def positions(self) -> np.ndarray:
        return self._pos[: self.n]

    @property
    def costs(self) -> np.ndarray:
        return self._cost[: self.n]

    @property
    def parents(self) -> np.ndarray:
        return self._parent[: self.n]

    def __len__(self) -> int:
        return self.n

    def add(self, p, parent: int) -> int:
        p = np.asarray(p, dtype=float)
        cost = self._cost[parent] + math.dist(p, self._pos[parent])
        return self._append(p, parent, cost)

    def nearest(self, q) -> int:
        d = self.positions - q
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))

    def near(self, q, radius: float) -> np.ndarray:
        d = self.positions - q
        return np.flatnonzero(np.einsum("ij,ij->i", d, d) <= radius * radius)

    def is_ancestor(self, i: int, j: int) -> bool:
        """True if ``i`` lies on the path from ``j`` to the root (inclusive)."""
        while j >= 0:
            if j == i:
                return True
            j = int(self._parent[j])
        return False

    def reparent(self, i: int, new_parent: int) -> None:
        old = int(self._parent[i])
        self.children[old].remove(i)
        self.children[new_parent].append(i)
        self._parent[i] = new_parent
        stack = [i]
        while stack:
            k = stack.pop()
            par = self._parent[k]
            self._cost[k] = self._cost[par] + math.dist(self._pos[k], self._pos[par])
            stack.extend(self.children[k])

    def path_to_root(self, i: int) -> list[int]:
        out = []
        while i >= 0:
            out.append(i)
            i = int(self._parent[i])
        return out

    def audit(self, gmap: GridMap | None = None, tol: float = 1e-9) -> None:
        """Raise ``PlanningError`` unless the tree invariants hold."""
        n = self.n
        par = self.parents
        if par[0] != -1 or np.any(par[1:] < 0) or np.any(par[1:] >= n):
            raise PlanningError("tree must have exactly one root at index 0")
        # pointer doubling: every node reaches the root within log2(n) jumps iff acyclic
        jump = np.where(par < 0, 0, par)
        for _ in range(max(1, int(math.ceil(math.log2(n + 1))) + 1)):
            jump = jump[jump]
        if np.any(jump != 0):
            raise PlanningError("tree contains a cycle")
        if n > 1:
            kids = np.arange(1, n)
            seg = np.linalg.norm(self.positions[kids] - self.positions[par[kids]], axis=1)
            err = np.abs(self.costs[kids] - self.costs[par[kids]] - seg)
            if np.max(err) > tol * max(1.0, float(np.max(self.costs))):
                raise PlanningError(f"cost inconsistency {np.max(err):.3e}")
            if gmap is not None and not np.all(gmap.segments_free(self.positions[par[kids]], self.positions[kids])):
                raise PlanningError("tree edge intersects an obstacle")
        if self._cost[0] != 0.0:
            raise PlanningError("root cost must be zero")


# ---------------------------------------------------------------- planner

class ExtendStatus(enum.Enum):
    REACHED = "reached"
    ADVANCED = "advanced"
    TRAPPED = "trapped"


@dataclass(frozen=True)
class PlannerConfig:
    step_size: float = 5.0
    max_iterations: int = 5000
    gamma_rrt: float = 1500.0
    zeta: float = 50.0
    goal_tolerance: float = 1e-6
    seed: int = 0
    # run Tree.audit on both trees every this many iterations (0 = never)
    audit_every: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise PlanningError("step_size must be > 0")
        if self.max_iterations < 1:
            raise PlanningError("max_iterations must be >= 1")
        if not self.gamma_rrt > 0 or self.zeta < 0 or self.goal_tolerance < 0:
            raise PlanningError("gamma_rrt must be > 0; zeta and goal_tolerance must be >= 0")


def near_radius(n: int, d: int, cfg: PlannerConfig) -> float:
    """``min(gamma * (ln n / n)^(1/d), zeta)``, and ``zeta`` below two nodes."""
    if n < 2:
        return cfg.zeta
    return min(cfg.gamma_rrt * (math.log(n) / n) ** (1.0 / d), cfg.zeta)


def steer(q_from, q_to, step: float) -> np.ndarray:
    q_from = np.asarray(q_from, dtype=float)
    q_to = np.asarray(q_to, dtype=float)
    d = math.dist(q_from, q_to)
    if d <= step:
        return q_to.copy()
    return q_from + (q_to - q_from) * (step / d)


def choose_parent(tree: Tree, near_set, q_nearest: int, q_new, gmap: GridMap) -> int:
    """Near node with the lowest collision-free through-cost, else ``q_nearest``."""
    q_new = np.asarray(q_new, dtype=float)
    best = q_nearest
    c_best = tree.costs[q_nearest] + math.dist(q_new, tree.positions[q_nearest])
    cand = np.asarray([i for i in near_set if i != q_nearest], dtype=np.int64)
    if cand.size == 0:
        return best
    through = tree.costs[cand] + np.linalg.norm(tree.positions[cand] - q_new, axis=1)
    order = np.argsort(through, kind="stable")
    for k in order:
        if through[k] >= c_best:
            break
        if gmap.obstacle_free(tree.positions[cand[k]], q_new):
            return int(cand[k])
    return best


def rewire(tree: Tree, near_set, q_min: int, q_new: int, gmap: GridMap) -> list[int]:
    """Re-parent near nodes through ``q_new`` when that is cheaper; returns rewired indices."""
    cand = np.asarray([i for i in near_set if i != q_min and i != q_new], dtype=np.int64)
    if cand.size == 0:
        return []
    p_new = tree.positions[q_new]
    through = tree.costs[q_new] + np.linalg.norm(tree.positions[cand] - p_new, axis=1)
    better = cand[through < tree.costs[cand]]
    done = []
    for i in better:
        i = int(i)
        # costs may have dropped through an earlier rewire in this loop
        if tree.costs[q_new] + math.dist(p_new, tree.positions[i]) >= tree.costs[i]:
            continue
        if tree.is_ancestor(i, q_new):
            continue
        if gmap.obstacle_free(tree.positions[i], p_new):
            tree.reparent(i, q_new)
            done.append(i)
    return done


def extend(tree: Tree, q, gmap: GridMap, cfg: PlannerConfig,
           n_total: int | None = None) -> tuple[ExtendStatus, int | None]:
    """One Steer step toward ``q``; returns the status and the new (or reached) node index."""
    q = np.asarray(q, dtype=float)
    i_near = tree.nearest(q)
    p_near = tree.positions[i_near]
    if math.dist(p_near, q) <= cfg.goal_tolerance:
        return ExtendStatus.REACHED, i_near
    q_new = steer(p_near, q, cfg.step_size)
    if not gmap.obstacle_free(p_near, q_new):
        return ExtendStatus.TRAPPED, None
    r = near_radius(n_total if n_total is not None else len(tree) + 1, 2, cfg)
    near = tree.near(q_new, r)
    parent = choose_parent(tree, near, i_near, q_new, gmap)
    i_new = tree.add(q_new, parent)
    rewire(tree, near, parent, i_new, gmap)
    if math.dist(q_new, q) <= cfg.goal_tolerance:
        return ExtendStatus.REACHED, i_new
    return ExtendStatus.ADVANCED, i_new


def connect(tree: Tree, q, gmap: GridMap, cfg: PlannerConfig,
            other_size: int = 0) -> tuple[ExtendStatus, int | None]:
    """Repeat ``extend`` toward ``q`` until it stops advancing."""
    last = None
    while True:
        status, idx = extend(tree, q, gmap, cfg, n_total=len(tree) + other_size + 1)
        if status is not ExtendStatus.ADVANCED:
            return status, (idx if status is ExtendStatus.REACHED else last)
        last = idx


@dataclass(frozen=True)
class PlannedPath:
    waypoints: np.ndarray
    cost: float
    first_connection_cost: float
    n_connections: int
    nodes_start: int
    nodes_goal: int
    iterations: int

    def to_dict(self) -> dict:
        return {
            "waypoints": self.waypoints.tolist(),
            "cost": self.cost,
            "first_connection_cost": self.first_connection_cost,
            "n_connections": self.n_connections,
            "nodes_start": self.nodes_start,
            "nodes_goal": self.nodes_goal,
            "iterations": self.iterations,
        }


def _random_free(rng: np.random.Generator, gmap: GridMap, max_tries: int = 1000) -> np.ndarray:
    for _ in range(max_tries):
        q = rng.uniform((0.0, 0.0), (gmap.width, gmap.height))
        if gmap.is_free(q):
            return q
    raise PlanningError("could not sample a free configuration; map is (nearly) fully blocked")


def plan(gmap: GridMap, q_start, q_end, cfg: PlannerConfig | None = None) -> PlannedPath:
    cfg = cfg or PlannerConfig()
    q_start = np.asarray(q_start, dtype=float)
    q_end = np.asarray(q_end, dtype=float)
    for name, q in (("start", q_start), ("end", q_end)):
        if q.shape != (2,) or not np.all(np.isfinite(q)):
            raise PlanningError(f"{name} must be a finite 2-D point")
        if not gmap.is_free(q):
            raise PlanningError(f"{name} {q.tolist()} is not in free space")
    if math.dist(q_start, q_end) <= cfg.goal_tolerance:
        return PlannedPath(np.array([q_start, q_end]), 0.0, 0.0, 1, 1, 1, 0)

    rng = np.random.default_rng(cfg.seed)
    trees = [Tree(q_start), Tree(q_end)]
    connections: list[tuple[int, int]] = []
    first_cost = math.inf
    a = 0
    for k in range(1, cfg.max_iterations + 1):
        ta, tb = trees[a], trees[1 - a]
        q_rand = _random_free(rng, gmap)
        status, i_new = extend(ta, q_rand, gmap, cfg, n_total=len(ta) + len(tb) + 1)
        if status is not ExtendStatus.TRAPPED:
            p_new = ta.positions[i_new].copy()
            s_b, j = connect(tb, p_new, gmap, cfg, other_size=len(ta))
            if s_b is ExtendStatus.REACHED:
                pair = (i_new, j) if a == 0 else (j, i_new)
                connections.append(pair)
                if not math.isfinite(first_cost):
                    first_cost = float(trees[0].costs[pair[0]] + trees[1].costs[pair[1]])
                    log.debug("first connection at iteration %d, cost %.3f", k, first_cost)
        if cfg.audit_every and k % cfg.audit_every == 0:
            trees[0].audit(gmap)
            trees[1].audit(gmap)
        a = 1 - a

    if not connections:
        raise PlanningError(
            f"no connection found in {cfg.max_iterations} iterations "
            f"(start tree {len(trees[0])} nodes, goal tree {len(trees[1])} nodes)",
            len(trees[0]), len(trees[1]))
    pairs = np.asarray(connections)
    total = trees[0].costs[pairs[:, 0]] + trees[1].costs[pairs[:, 1]]
    best = int(np.argmin(total))
    i, j = (int(v) for v in pairs[best])
    from_start = trees[0].path_to_root(i)[::-1]
    to_goal = trees[1].path_to_root(j)[1:]
    waypoints = np.vstack([trees[0].positions[from_start], trees[1].positions[to_goal]])
    return PlannedPath(
        waypoints=waypoints,
        cost=float(total[best]),
        first_connection_cost=first_cost,
        n_connections=len(connections),
        nodes_start=len(trees[0]),
        nodes_goal=len(trees[1]),
        iterations=cfg.max_iterations,
    )


def path_length(waypoints) -> float:
    w = np.asarray(waypoints, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1))) if len(w) > 1 else 0.0
