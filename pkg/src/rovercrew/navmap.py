"""Segmentation-masked mapping: depth filtering, log-odds occupancy grids,
and multi-agent map fusion.

The flow per sensor frame is mask_depth (clear free classes to infinity)
followed by integrate_depth (ray-cast the surviving returns into the
grid). fuse_maps merges two agents' grids over a known SE(2) transform.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .codec import PalettisedMask, decode_mask, encode_mask
from .errors import DimensionMismatch, PoseOutsideGrid, ResolutionMismatch
from .geometry import SE2, CameraIntrinsics, CameraPose, pixel_dirs_world, pixel_points_world
from .imageio import read_pgm, write_pgm


class SegClass(IntEnum):
    NOT_LABELLED = 0
    SOIL = 1
    CLOSE_ROCK = 2
    FAR_ROCK = 3
    LITTLE_ROCK = 4


# Classes treated as free space: their depth returns are discarded.
FREE_CLASSES = (SegClass.SOIL, SegClass.LITTLE_ROCK)

L_MIN_DEFAULT = -5.0
L_MAX_DEFAULT = 5.0
L_HIT_DEFAULT = 0.85
L_MISS_DEFAULT = -0.4


@dataclass
class OccupancyGrid:
    """2-D log-odds obstacle belief; cell (row, col) covers the square whose
    lower-left corner is origin + (col, row) * resolution."""

    width: int
    height: int
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)
    frame_id: str = "map"
    l_min: float = L_MIN_DEFAULT
    l_max: float = L_MAX_DEFAULT
    logodds: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.logodds is None:
            self.logodds = np.zeros((self.height, self.width))
        if self.logodds.shape != (self.height, self.width):
            raise DimensionMismatch("logodds shape does not match width/height")

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.width, self.height, self.resolution, self.origin,
                             self.frame_id, self.l_min, self.l_max, self.logodds.copy())

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing a world point."""
        return (int(math.floor((y - self.origin[1]) / self.resolution)),
                int(math.floor((x - self.origin[0]) / self.resolution)))

    def contains(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return 0 <= r < self.height and 0 <= c < self.width

    def probability(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logodds))

    def occupied_mask(self, p_occ: float = 0.65) -> np.ndarray:
        return self.probability() >= p_occ

    def coverage(self, eps: float = 0.2) -> float:
        """Fraction of cells with non-trivial evidence."""
        return float(np.mean(np.abs(self.logodds) > eps))


def mask_depth(depth: np.ndarray, seg_mask: np.ndarray) -> np.ndarray:
    """Clear depth returns on free-space classes.

    Soil and little-rock pixels become +inf (no obstacle there); pixels of
    every other class, including not-labelled unknowns, keep their depth so
    unexpected objects stay on the map.
    """
    depth = np.asarray(depth, dtype=float)
    seg_mask = np.asarray(seg_mask)
    if depth.shape != seg_mask.shape:
        raise DimensionMismatch(f"depth {depth.shape} vs seg {seg_mask.shape}")
    free = (seg_mask == SegClass.SOIL) | (seg_mask == SegClass.LITTLE_ROCK)
    out = depth.copy()
    out[free] = np.inf
    return out


def integrate_depth(
    grid: OccupancyGrid,
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    *,
    obstacle_height: float = 0.15,
    max_range: float = 15.0,
    l_hit: float = L_HIT_DEFAULT,
    l_miss: float = L_MISS_DEFAULT,
    terrain_fn=None,
    stride: int = 1,
) -> OccupancyGrid:
    """Ray-cast one masked range image into a copy of the grid.

    Finite pixels whose back-projected point sits at least obstacle_height
    above the terrain add hit evidence to their cell; every cell a ray
    traverses before its endpoint adds miss evidence. Infinite pixels add
    miss evidence along the full max_range ray. Per call, each cell is
    updated at most once and a hit wins over a miss.

    stride > 1 subsamples the free-space rays (hits always use every
    pixel); the live loop uses this to bound per-frame cost.
    """
    if not grid.contains(pose.x, pose.y):
        raise PoseOutsideGrid(f"camera at ({pose.x:.2f}, {pose.y:.2f}) outside grid")
    depth = np.asarray(depth, dtype=float)
    if depth.shape != (intrinsics.height, intrinsics.width):
        raise DimensionMismatch("depth image does not match intrinsics")

    res = grid.resolution
    finite = np.isfinite(depth) & (depth > 0)
    pts = pixel_points_world(intrinsics, pose, depth)

    ground = np.zeros(np.count_nonzero(finite))
    if terrain_fn is not None and ground.size:
        ground = terrain_fn(pts[finite][:, 0], pts[finite][:, 1])

    hit_cells: set[tuple[int, int]] = set()
    if ground.size:
        fin_pts = pts[finite]
        high = (fin_pts[:, 2] - ground) >= obstacle_height
        for x, y in fin_pts[high][:, :2]:
            if grid.contains(x, y):
                hit_cells.add(grid.cell_of(x, y))

    # Free-space sampling: walk each ray at half-cell steps up to its
    # endpoint (finite return) or max_range (no return).
    dirs = pixel_dirs_world(intrinsics, pose)
    reach = np.where(finite, depth, max_range)
    reach = np.minimum(reach, max_range)
    if stride > 1:
        dirs = dirs[::stride, ::stride]
        reach = reach[::stride, ::stride]
    step = res / 2.0
    n_steps = int(math.ceil(max_range / step))
    ts = (np.arange(n_steps) + 0.5) * step
    cam = np.array([pose.x, pose.y])
    flat_dirs = dirs.reshape(-1, 3)[:, :2]
    flat_reach = reach.reshape(-1)

    # samples: (n_rays, n_steps, 2); mask out samples beyond each ray's reach
    sample_xy = cam[None, None, :] + flat_dirs[:, None, :] * ts[None, :, None]
    valid = ts[None, :] < (flat_reach[:, None] - step * 0.5)
    xy = sample_xy[valid]
    cols = np.floor((xy[:, 0] - grid.origin[0]) / res).astype(int)
    rows = np.floor((xy[:, 1] - grid.origin[1]) / res).astype(int)
    inb = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    free_idx = np.unique(rows[inb] * grid.width + cols[inb])

    out = grid.copy()
    flat = out.logodds.reshape(-1)
    prev = grid.logodds.reshape(-1)
    if free_idx.size:
        flat[free_idx] += l_miss
    for r, c in hit_cells:
        i = r * grid.width + c
        flat[i] = prev[i] + l_hit  # hit wins over any miss this call
    np.clip(flat, grid.l_min, grid.l_max, out=flat)
    return out


def fuse_maps(a: OccupancyGrid, b: OccupancyGrid, transform: SE2 = SE2()) -> OccupancyGrid:
    """Additively fuse two log-odds grids; transform maps b-frame to a-frame.

    The output covers the union bounding box in a's frame; each output cell
    sums a's value at the cell center with b's value at the back-transformed
    center (nearest-neighbor lookup), clamped. Cells covered by neither grid
    stay at 0 (unknown).
    """
    if abs(a.resolution - b.resolution) > 1e-12:
        raise ResolutionMismatch(f"{a.resolution} vs {b.resolution}")
    res = a.resolution

    # b's extent corners in a's frame
    bx0, by0 = b.origin
    bx1, by1 = bx0 + b.width * res, by0 + b.height * res
    corners = np.array([[bx0, by0], [bx1, by0], [bx0, by1], [bx1, by1]])
    tc = transform.apply(corners)

    x0 = min(a.origin[0], tc[:, 0].min())
    y0 = min(a.origin[1], tc[:, 1].min())
    x1 = max(a.origin[0] + a.width * res, tc[:, 0].max())
    y1 = max(a.origin[1] + a.height * res, tc[:, 1].max())
    # snap the union box onto a's cell lattice so a's cells copy exactly
    x0 = a.origin[0] + math.floor((x0 - a.origin[0]) / res) * res
    y0 = a.origin[1] + math.floor((y0 - a.origin[1]) / res) * res
    width = int(math.ceil((x1 - x0) / res - 1e-9))
    height = int(math.ceil((y1 - y0) / res - 1e-9))

    cols = np.arange(width)
    rows = np.arange(height)
    cx = x0 + (cols + 0.5) * res
    cy = y0 + (rows + 0.5) * res
    gx, gy = np.meshgrid(cx, cy)

    out = np.zeros((height, width))
    # contribution from a
    ac = np.floor((gx - a.origin[0]) / res).astype(int)
    ar = np.floor((gy - a.origin[1]) / res).astype(int)
    a_in = (ar >= 0) & (ar < a.height) & (ac >= 0) & (ac < a.width)
    out[a_in] += a.logodds[ar[a_in], ac[a_in]]
    # contribution from b through the inverse transform
    inv = transform.inverse()
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    bp = inv.apply(pts)
    bc = np.floor((bp[:, 0] - b.origin[0]) / res).astype(int).reshape(height, width)
    br = np.floor((bp[:, 1] - b.origin[1]) / res).astype(int).reshape(height, width)
    b_in = (br >= 0) & (br < b.height) & (bc >= 0) & (bc < b.width)
    out[b_in] += b.logodds[br[b_in], bc[b_in]]

    l_min, l_max = min(a.l_min, b.l_min), max(a.l_max, b.l_max)
    np.clip(out, l_min, l_max, out=out)
    return OccupancyGrid(width, height, res, (x0, y0), "fused", l_min, l_max, out)


def grid_to_digest(grid: OccupancyGrid, p_occ: float = 0.65) -> dict:
    """Compact map digest for the bus: the grid quantized to
    unknown/free/occupied and run-length encoded with the mask codec."""
    p = grid.probability()
    tri = np.zeros(p.shape, dtype=np.uint8)        # 0 unknown
    tri[grid.logodds < -0.2] = 1                   # 1 free
    tri[p >= p_occ] = 2                            # 2 occupied
    blob = encode_mask(tri).to_bytes()
    return {
        "origin": [grid.origin[0], grid.origin[1]],
        "resolution": grid.resolution,
        "blob": base64.b64encode(blob).decode("ascii"),
        "coverage": round(grid.coverage(), 4),
    }


def digest_to_grid(payload: dict, frame_id: str = "digest") -> OccupancyGrid:
    """Decode a digest back to a coarse log-odds grid."""
    mask = PalettisedMask.from_bytes(base64.b64decode(payload["blob"]))
    tri = decode_mask(mask)
    logodds = np.zeros(tri.shape)
    logodds[tri == 1] = -1.0
    logodds[tri == 2] = 2.0
    h, w = tri.shape
    return OccupancyGrid(w, h, payload["resolution"],
                         tuple(payload["origin"]), frame_id, logodds=logodds)


def render_grid(grid: OccupancyGrid) -> np.ndarray:
    """Grayscale image of the grid: 0 occupied-certain, 255 free-certain,
    127 unknown; linear in occupancy probability."""
    p = grid.probability()
    return np.floor(255.0 * (1.0 - p)).astype(np.uint8)


def save_grid(grid: OccupancyGrid, path: str | Path) -> None:
    """Write the PGM render plus a JSON sidecar with grid metadata."""
    path = Path(path)
    write_pgm(path, render_grid(grid))
    sidecar = {
        "resolution": grid.resolution,
        "origin": list(grid.origin),
        "clamp": [grid.l_min, grid.l_max],
        "frame_id": grid.frame_id,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_grid(path: str | Path) -> OccupancyGrid:
    """Load a grid from a PGM + JSON sidecar pair written by save_grid."""
    path = Path(path)
    img = read_pgm(path).astype(float)
    meta = json.loads(path.with_suffix(".json").read_text())
    l_min, l_max = meta.get("clamp", [L_MIN_DEFAULT, L_MAX_DEFAULT])
    # invert the render mapping: pixel = floor(255 * (1 - p))
    p = np.clip(1.0 - (img + 0.5) / 255.0, 1e-6, 1.0 - 1e-6)
    logodds = np.log(p / (1.0 - p))
    # snap near-certain pixels onto the clamp values
    logodds[img == 0] = l_max
    logodds[img == 255] = l_min
    logodds[img == 127] = 0.0
    h, w = img.shape
    return OccupancyGrid(w, h, meta["resolution"], tuple(meta["origin"]),
                         meta.get("frame_id", "map"), l_min, l_max, logodds)
