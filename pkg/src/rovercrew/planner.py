"""Fast Marching Square global planner over occupancy grids.

Two fast-marching passes: the first expands from every obstacle cell at
unit speed to get an obstacle distance field, which saturates into a
velocity map W in [0, 1]; the second expands from the goal at speed W,
giving an arrival-time field whose gradient descent yields smooth paths
that keep clearance from obstacles. A pure-pursuit follower turns paths
into unicycle wheel commands.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DescentStalled, GoalBlocked, StartUnreachable
from .geometry import wrap_angle
from .navmap import OccupancyGrid

NEIGHBORS4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
NEIGHBORS8 = NEIGHBORS4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass
class PlannerConfig:
    p_occ: float = 0.65            # occupancy probability that counts as obstacle
    d_sat: float = 1.0             # saturation distance of the velocity map, meters
    sat_exponent: float = 1.0      # shaping exponent on the linear ramp
    w_floor: float = 1e-3          # cells at or below this speed are non-traversable
    step_frac: float = 0.5         # descent step as a fraction of cell size
    connect8: bool = False         # expand the narrow band to diagonal neighbors too


@dataclass
class FollowerConfig:
    lookahead: float = 1.0
    k_heading: float = 1.5
    v_max: float = 1.0
    goal_tolerance: float = 0.3


@dataclass
class VelocityMap:
    speed: np.ndarray              # per-cell speed in [0, 1]
    resolution: float
    origin: tuple[float, float]
    d_sat: float


@dataclass
class ArrivalField:
    times: np.ndarray              # per-cell arrival time, +inf unreachable
    resolution: float
    origin: tuple[float, float]
    goal: tuple[float, float]      # world coordinates


@dataclass
class Path:
    waypoints: np.ndarray          # (N, 2) world coordinates
    length: float = field(default=0.0)
    min_clearance: float = field(default=math.inf)

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[0] > 1:
            self.length = float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


def eikonal_update(ta: float, tb: float, s: float) -> float:
    """Upwind quadratic update from the two smallest orthogonal neighbors.

    ta <= tb are the axis minima (tb may be inf); s is the local slowness
    cell_size / F. Degenerates to the one-neighbor update when the axes
    differ by at least s.
    """
    if not math.isfinite(tb) or tb - ta >= s:
        return ta + s
    return (ta + tb + math.sqrt(2.0 * s * s - (ta - tb) ** 2)) / 2.0


def fast_march(speed: np.ndarray, sources: list[tuple[int, int]], cell_size: float,
               connect8: bool = False) -> np.ndarray:
    """Solve |grad T| * F = 1 by narrow-band fast marching.

    speed holds F per cell; cells with F <= 0 are never accepted. sources
    start at T = 0. Returns the arrival-time array with +inf where
    unreached.
    """
    h, w = speed.shape
    times = np.full((h, w), np.inf)
    frozen = np.zeros((h, w), dtype=bool)
    heap: list[tuple[float, int, int]] = []
    for r, c in sources:
        if times[r, c] > 0.0:
            times[r, c] = 0.0
            heapq.heappush(heap, (0.0, r, c))
    neighbors = NEIGHBORS8 if connect8 else NEIGHBORS4

    while heap:
        t, r, c = heapq.heappop(heap)
        if frozen[r, c]:
            continue
        frozen[r, c] = True
        for dr, dc in neighbors:
            nr, nc = r + dr, c + dc
            if nr < 0 or nr >= h or nc < 0 or nc >= w or frozen[nr, nc]:
                continue
            f = speed[nr, nc]
            if f <= 0.0:
                continue
            # axis minima over frozen-or-known neighbor values
            tx = min(times[nr, nc - 1] if nc > 0 else np.inf,
                     times[nr, nc + 1] if nc + 1 < w else np.inf)
            ty = min(times[nr - 1, nc] if nr > 0 else np.inf,
                     times[nr + 1, nc] if nr + 1 < h else np.inf)
            ta, tb = (tx, ty) if tx <= ty else (ty, tx)
            if not math.isfinite(ta):
                continue
            cand = eikonal_update(ta, tb, cell_size / f)
            if cand < times[nr, nc]:
                times[nr, nc] = cand
                heapq.heappush(heap, (cand, nr, nc))
    return times


def distance_field(grid: OccupancyGrid, p_occ: float = 0.65) -> np.ndarray:
    """Distance to the nearest obstacle cell, in meters.

    Multi-source unit-speed fast marching from every cell whose occupancy
    probability is at least p_occ. With no obstacles the field is all +inf,
    which saturates to W = 1 everywhere downstream.
    """
    occ = grid.occupied_mask(p_occ)
    sources = [(int(r), int(c)) for r, c in np.argwhere(occ)]
    speed = np.ones_like(grid.logodds)
    dist = fast_march(speed, sources, grid.resolution)
    dist[occ] = 0.0
    return dist


def velocity_map(dist: np.ndarray, grid: OccupancyGrid, config: PlannerConfig | None = None) -> VelocityMap:
    """Saturated velocity map: W = min(D / d_sat, 1) ** exponent, 0 on obstacles."""
    config = config or PlannerConfig()
    if config.d_sat <= 0:
        raise ValueError("d_sat must be positive")
    with np.errstate(invalid="ignore"):
        w = np.clip(dist / config.d_sat, 0.0, 1.0)
    w[~np.isfinite(dist)] = 1.0
    if config.sat_exponent != 1.0:
        w = w ** config.sat_exponent
    w[grid.occupied_mask(config.p_occ)] = 0.0
    return VelocityMap(w, grid.resolution, grid.origin, config.d_sat)


def arrival_field(vmap: VelocityMap, goal: tuple[float, float],
                  config: PlannerConfig | None = None) -> ArrivalField:
    """Fast marching from the goal over the velocity map."""
    config = config or PlannerConfig()
    res = vmap.resolution
    gc = int(math.floor((goal[0] - vmap.origin[0]) / res))
    gr = int(math.floor((goal[1] - vmap.origin[1]) / res))
    h, w = vmap.speed.shape
    if not (0 <= gr < h and 0 <= gc < w):
        raise GoalBlocked(f"goal {goal} outside the map")
    if vmap.speed[gr, gc] <= config.w_floor:
        raise GoalBlocked(f"goal {goal} inside or too close to an obstacle")
    speed = np.where(vmap.speed > config.w_floor, vmap.speed, 0.0)
    times = fast_march(speed, [(gr, gc)], res, config.connect8)
    return ArrivalField(times, res, vmap.origin, goal)


def _bilinear(fieldvals: np.ndarray, origin: tuple[float, float], res: float,
              x: float, y: float) -> float:
    """Bilinear interpolation on cell centers, clamped to the border."""
    h, w = fieldvals.shape
    fx = (x - origin[0]) / res - 0.5
    fy = (y - origin[1]) / res - 0.5
    c0 = min(max(int(math.floor(fx)), 0), w - 2) if w > 1 else 0
    r0 = min(max(int(math.floor(fy)), 0), h - 2) if h > 1 else 0
    tx = min(max(fx - c0, 0.0), 1.0)
    ty = min(max(fy - r0, 0.0), 1.0)
    c1 = min(c0 + 1, w - 1)
    r1 = min(r0 + 1, h - 1)
    v00, v01 = fieldvals[r0, c0], fieldvals[r0, c1]
    v10, v11 = fieldvals[r1, c0], fieldvals[r1, c1]
    return (v00 * (1 - tx) * (1 - ty) + v01 * tx * (1 - ty)
            + v10 * (1 - tx) * ty + v11 * tx * ty)


def extract_path(afield: ArrivalField, start: tuple[float, float],
                 step: float | None = None) -> Path:
    """Gradient descent on the interpolated arrival field, start to goal."""
    res = afield.resolution
    step = step if step is not None else 0.5 * res
    h, w = afield.times.shape

    # finite stand-in for +inf so interpolation pushes descent away
    finite = afield.times[np.isfinite(afield.times)]
    big = (finite.max() if finite.size else 1.0) * 4.0 + 1.0
    tfield = np.where(np.isfinite(afield.times), afield.times, big)

    sc = int(math.floor((start[0] - afield.origin[0]) / res))
    sr = int(math.floor((start[1] - afield.origin[1]) / res))
    if not (0 <= sr < h and 0 <= sc < w) or not math.isfinite(afield.times[sr, sc]):
        raise StartUnreachable(f"start {start} has no finite arrival time")

    goal = np.array(afield.goal, dtype=float)
    p = np.array(start, dtype=float)
    waypoints = [p.copy()]
    t_here = _bilinear(tfield, afield.origin, res, p[0], p[1])
    max_iter = int(10 * (w + h) * res / step) + 10
    eps = res * 0.25

    for _ in range(max_iter):
        if np.linalg.norm(p - goal) <= res:
            if np.linalg.norm(p - goal) > 1e-9:
                waypoints.append(goal.copy())
            return Path(np.array(waypoints))
        gx = (_bilinear(tfield, afield.origin, res, p[0] + eps, p[1])
              - _bilinear(tfield, afield.origin, res, p[0] - eps, p[1])) / (2 * eps)
        gy = (_bilinear(tfield, afield.origin, res, p[0], p[1] + eps)
              - _bilinear(tfield, afield.origin, res, p[0], p[1] - eps)) / (2 * eps)
        norm = math.hypot(gx, gy)
        if norm < 1e-12:
            raise DescentStalled(f"zero gradient at {tuple(p)}")
        moved = False
        # straight descent first; on a saddle (symmetric obstacle dead on
        # the line) break the tie with deterministic rotated probes
        for ang in (0.0, 0.5, -0.5, 1.0, -1.0, 1.5, -1.5):
            c, s = math.cos(ang), math.sin(ang)
            d = np.array([(gx * c - gy * s), (gx * s + gy * c)]) / norm
            trial = step
            for _ in range(4):  # halve the step on overshoot
                q = p - d * trial
                t_next = _bilinear(tfield, afield.origin, res, q[0], q[1])
                if t_next < t_here - 1e-12:
                    p, t_here = q, t_next
                    waypoints.append(p.copy())
                    moved = True
                    break
                trial /= 2.0
            if moved:
                break
        if not moved:
            raise DescentStalled(f"arrival time not decreasing at {tuple(p)}")
    raise DescentStalled("iteration budget exhausted before reaching the goal")


def plan(grid: OccupancyGrid, start: tuple[float, float], goal: tuple[float, float],
         config: PlannerConfig | None = None) -> Path:
    """Full FM2 pipeline; the returned path carries its minimum obstacle clearance."""
    config = config or PlannerConfig()
    if math.isclose(start[0], goal[0]) and math.isclose(start[1], goal[1]):
        return Path(np.array([start]), min_clearance=math.inf)
    dist = distance_field(grid, config.p_occ)
    vmap = velocity_map(dist, grid, config)
    afield = arrival_field(vmap, goal, config)
    path = extract_path(afield, start, config.step_frac * grid.resolution)
    clear = min(
        _bilinear(np.where(np.isfinite(dist), dist, 1e9), grid.origin, grid.resolution, x, y)
        for x, y in path.waypoints
    )
    path.min_clearance = float(clear)
    return path


def follow(path: Path, pose: tuple[float, float, float],
           config: FollowerConfig | None = None) -> tuple[float, float]:
    """Pure-pursuit step: returns the (v, omega) unicycle command for a pose."""
    config = config or FollowerConfig()
    if path.waypoints.shape[0] == 0:
        return 0.0, 0.0
    x, y, heading = pose
    here = np.array([x, y])
    goal = path.waypoints[-1]
    if np.linalg.norm(here - goal) <= config.goal_tolerance:
        return 0.0, 0.0
    target = goal
    for wp in path.waypoints:
        if np.linalg.norm(wp - here) > config.lookahead:
            target = wp
            break
    err = wrap_angle(math.atan2(target[1] - y, target[0] - x) - heading)
    v = config.v_max * max(0.0, math.cos(err))
    return v, config.k_heading * err
