"""Simulated planetary scene and sensor synthesis.

The world holds a 2.5-D terrain, entities (rovers, astronaut, rocks, solar
panel racks) and fault schedules. render_frame() synthesizes what a real
detector + stereo pair would deliver: noisy bounding-box detections, a
range image and a segmentation mask, all deterministic for a given
(world state, seed, tick).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import UnknownAgent
from .geometry import CameraIntrinsics, CameraPose, pixel_dirs_world, wrap_angle
from .imageio import seg_to_ppm, write_pgm
from .navmap import SegClass

# terrain rock classes (distinct from SegClass: these are authored map data)
ROCK_NONE, ROCK_LITTLE, ROCK_FAR, ROCK_CLOSE = 0, 1, 2, 3
_ROCK_TO_SEG = {
    ROCK_NONE: SegClass.SOIL,
    ROCK_LITTLE: SegClass.LITTLE_ROCK,
    ROCK_FAR: SegClass.FAR_ROCK,
    ROCK_CLOSE: SegClass.CLOSE_ROCK,
}


class EntityKind(Enum):
    ROVER_LAMARR = "rover_lamarr"
    ROVER_MAE = "rover_mae"
    ASTRONAUT = "astronaut"
    ROCK = "rock"
    SOLAR_PANEL = "solar_panel"


ROVER_KINDS = (EntityKind.ROVER_LAMARR, EntityKind.ROVER_MAE)
AGENT_KINDS = ROVER_KINDS + (EntityKind.ASTRONAUT,)

# detector class label per entity kind
DETECTION_LABEL = {
    EntityKind.ROVER_LAMARR: "rover",
    EntityKind.ROVER_MAE: "rover",
    EntityKind.ASTRONAUT: "astronaut",
    EntityKind.ROCK: "rock",
    EntityKind.SOLAR_PANEL: "solar_panel",
}

LITTLE_ROCK_MAX_SIZE = 0.3   # rocks no larger than this are traversable
FAR_ROCK_DISTANCE = 8.0      # rock pixels beyond this range label as far-rock


@dataclass
class Terrain:
    width: int
    height: int
    resolution: float
    elevation: np.ndarray = None  # type: ignore[assignment]
    rock_map: np.ndarray = None   # type: ignore[assignment]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.resolution <= 0:
            raise ValueError("terrain dimensions and resolution must be positive")
        if self.elevation is None:
            self.elevation = np.zeros((self.height, self.width))
        if self.rock_map is None:
            self.rock_map = np.zeros((self.height, self.width), dtype=np.uint8)

    @property
    def size_m(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    def contains(self, x: float, y: float) -> bool:
        w, h = self.size_m
        return 0.0 <= x < w and 0.0 <= y < h

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return (min(int(y / self.resolution), self.height - 1),
                min(int(x / self.resolution), self.width - 1))

    def elevation_at(self, x, y):
        r = np.clip((np.asarray(y) / self.resolution).astype(int), 0, self.height - 1)
        c = np.clip((np.asarray(x) / self.resolution).astype(int), 0, self.width - 1)
        return self.elevation[r, c]

    @classmethod
    def procedural(cls, width: int, height: int, resolution: float, seed: int,
                   rock_density: float = 0.0, relief: float = 0.0) -> "Terrain":
        """Seeded value-noise terrain with optional scattered rock cells."""
        rng = np.random.default_rng(seed)
        coarse = rng.normal(0.0, 1.0, (max(height // 8, 2), max(width // 8, 2)))
        # bilinear upsample of the coarse noise
        ys = np.linspace(0, coarse.shape[0] - 1, height)
        xs = np.linspace(0, coarse.shape[1] - 1, width)
        y0 = np.clip(ys.astype(int), 0, coarse.shape[0] - 2)
        x0 = np.clip(xs.astype(int), 0, coarse.shape[1] - 2)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        elev = ((coarse[y0][:, x0] * (1 - fy) * (1 - fx))
                + (coarse[y0][:, x0 + 1] * (1 - fy) * fx)
                + (coarse[y0 + 1][:, x0] * fy * (1 - fx))
                + (coarse[y0 + 1][:, x0 + 1] * fy * fx))
        elev = elev * relief
        rocks = np.zeros((height, width), dtype=np.uint8)
        if rock_density > 0:
            mask = rng.random((height, width)) < rock_density
            kinds = rng.choice([ROCK_LITTLE, ROCK_FAR, ROCK_CLOSE], size=mask.sum())
            rocks[mask] = kinds
        return cls(width, height, resolution, elev, rocks)


@dataclass
class Entity:
    id: str
    kind: EntityKind
    pose: tuple[float, float, float]            # x, y, heading
    extent: tuple[float, float, float] = (0.6, 1.8, 0.4)   # width, height, depth (m)
    upright: bool = True
    fall_progress: float = 0.0                  # 0 standing .. 1 flat on the ground
    damage: str = "none"                        # none | crack | burnout (panels)
    tag_id: int | None = None                   # april tag (panels)
    cmd_v: float = 0.0
    cmd_omega: float = 0.0

    def body_size(self) -> tuple[float, float]:
        """Apparent (width, height) after the fall animation swap."""
        w, h, _ = self.extent
        p = self.fall_progress
        return w + (h - w) * p, h + (w - h) * p

    def centroid_z(self, ground: float = 0.0) -> float:
        """Body center height: h/2 standing, body thickness/2 lying flat."""
        _, h, d = self.extent
        return ground + h / 2.0 + (d / 2.0 - h / 2.0) * self.fall_progress

    def center(self, terrain: Terrain | None = None) -> np.ndarray:
        g = float(terrain.elevation_at(self.pose[0], self.pose[1])) if terrain else 0.0
        return np.array([self.pose[0], self.pose[1], self.centroid_z(g)])

    def to_json(self) -> dict:
        d = {"id": self.id, "kind": self.kind.value, "pose": list(self.pose),
             "extent": list(self.extent), "upright": self.upright}
        if self.kind is EntityKind.SOLAR_PANEL:
            d["damage"] = self.damage
            d["tag_id"] = self.tag_id
        return d


@dataclass
class NoiseModel:
    """Parametric detector imperfection; same seed, same noise sequence."""

    fp_rate: dict = field(default_factory=dict)     # class -> false-positive rate
    fn_rate: dict = field(default_factory=dict)     # class -> dropout rate
    bbox_jitter_sigma: float = 0.0                  # pixels
    depth_noise_sigma: float = 0.0                  # meters
    seed: int = 0

    @classmethod
    def none(cls, seed: int = 0) -> "NoiseModel":
        return cls(seed=seed)

    @classmethod
    def uniform(cls, fp: float, fn: float, jitter: float, depth_sigma: float,
                seed: int) -> "NoiseModel":
        labels = ["astronaut", "rover", "rock", "solar_panel", "crack", "april_tag"]
        return cls({l: fp for l in labels}, {l: fn for l in labels},
                   jitter, depth_sigma, seed)


@dataclass
class RawDetection:
    class_label: str
    bbox: tuple[float, float, float, float]   # cx, cy, w, h in pixels
    confidence: float
    tag_id: int | None = None

    def to_json(self) -> dict:
        d = {"class": self.class_label,
             "bbox": [round(float(v), 3) for v in self.bbox],
             "conf": round(float(self.confidence), 4)}
        if self.tag_id is not None:
            d["tag_id"] = int(self.tag_id)
        return d


@dataclass
class SensorFrame:
    agent_id: str
    tick: int
    detections: list[RawDetection]
    depth: np.ndarray
    seg_mask: np.ndarray
    intrinsics: CameraIntrinsics
    cam_pose: CameraPose


@dataclass
class CameraConfig:
    width: int = 96
    height: int = 72
    fov_deg: float = 90.0
    max_range: float = 15.0
    mount_height: float = 1.0
    near: float = 0.3

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.width, self.height, self.fov_deg)


@dataclass
class Fault:
    """Scheduled world fault: an astronaut fall or panel damage."""
    tick: int
    entity_id: str
    action: str                 # "fall" | "stand" | "damage_crack" | "damage_burnout"


@dataclass
class World:
    terrain: Terrain
    entities: dict[str, Entity] = field(default_factory=dict)
    noise: NoiseModel = field(default_factory=NoiseModel)
    camera: CameraConfig = field(default_factory=CameraConfig)
    faults: list[Fault] = field(default_factory=list)
    gravity: float = 9.81
    tick: int = 0
    _falling_since: dict[str, int] = field(default_factory=dict)
    dt: float = 0.1

    def add(self, entity: Entity) -> Entity:
        if entity.id in self.entities:
            raise ValueError(f"duplicate entity id {entity.id}")
        if entity.kind is EntityKind.SOLAR_PANEL and entity.tag_id is not None:
            for e in self.entities.values():
                if e.kind is EntityKind.SOLAR_PANEL and e.tag_id == entity.tag_id:
                    raise ValueError(f"duplicate panel tag {entity.tag_id}")
        self.entities[entity.id] = entity
        return entity

    def agent(self, agent_id: str) -> Entity:
        e = self.entities.get(agent_id)
        if e is None or e.kind not in AGENT_KINDS:
            raise UnknownAgent(agent_id)
        return e

    def camera_pose(self, agent_id: str) -> CameraPose:
        e = self.agent(agent_id)
        x, y, heading = e.pose
        ground = float(self.terrain.elevation_at(x, y))
        return CameraPose(x, y, ground + self.camera.mount_height, heading)


def step_physics(world: World, dt: float | None = None) -> World:
    """Advance one fixed timestep: unicycle motion, fault schedules, and the
    free-fall animation of falling astronauts. Mutates and returns world."""
    dt = world.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    w_m, h_m = world.terrain.size_m
    next_tick = world.tick + 1

    for fault in world.faults:
        if fault.tick == next_tick:
            e = world.entities.get(fault.entity_id)
            if e is None:
                continue
            if fault.action == "fall":
                e.upright = False
                world._falling_since[e.id] = next_tick
            elif fault.action == "stand":
                e.upright = True
                e.fall_progress = 0.0
                world._falling_since.pop(e.id, None)
            elif fault.action == "damage_crack":
                e.damage = "crack"
            elif fault.action == "damage_burnout":
                e.damage = "burnout"

    for e in world.entities.values():
        if e.kind in AGENT_KINDS and e.upright:
            x, y, heading = e.pose
            x += e.cmd_v * math.cos(heading) * dt
            y += e.cmd_v * math.sin(heading) * dt
            heading = wrap_angle(heading + e.cmd_omega * dt)
            x = min(max(x, 0.0), w_m - 1e-6)
            y = min(max(y, 0.0), h_m - 1e-6)
            e.pose = (x, y, heading)
        if not e.upright and e.fall_progress < 1.0:
            t0 = world._falling_since.get(e.id, next_tick)
            t = (next_tick - t0 + 1) * dt
            drop_total = (e.extent[1] - e.extent[2]) / 2.0
            if drop_total <= 0:
                e.fall_progress = 1.0
            else:
                e.fall_progress = min(1.0, 0.5 * world.gravity * t * t / drop_total)

    world.tick = next_tick
    return world


def _visible(world: World, cam: CameraPose, intr: CameraIntrinsics, e: Entity):
    """(center_world, u, v, range) if the entity center is inside the frustum
    and sensor range, else None."""
    center = e.center(world.terrain)
    p_cam = cam.world_to_camera(center)[0]
    if p_cam[2] < world.camera.near:
        return None
    rng = float(np.linalg.norm(p_cam))
    if rng > world.camera.max_range:
        return None
    u = intr.cx + intr.fx * p_cam[0] / p_cam[2]
    v = intr.cy + intr.fy * p_cam[1] / p_cam[2]
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        return None
    return center, float(u), float(v), rng, float(p_cam[2])


def ground_truth_visible(world: World, agent_id: str) -> list[tuple[str, np.ndarray]]:
    """Noiseless oracle: entity ids and 3-D centers inside frustum and range."""
    cam = world.camera_pose(agent_id)
    intr = world.camera.intrinsics()
    out = []
    for e in world.entities.values():
        if e.id == agent_id:
            continue
        vis = _visible(world, cam, intr, e)
        if vis is not None:
            out.append((e.id, vis[0]))
    return out


def _rock_seg_class(e: Entity, rng_m: float) -> SegClass:
    if max(e.extent[0], e.extent[1]) <= LITTLE_ROCK_MAX_SIZE:
        return SegClass.LITTLE_ROCK
    return SegClass.FAR_ROCK if rng_m > FAR_ROCK_DISTANCE else SegClass.CLOSE_ROCK


def render_frame(world: World, agent_id: str, tick: int | None = None) -> SensorFrame:
    """Synthesize one sensor frame for an agent.

    Deterministic per (world state, noise seed, agent, tick): the noise
    stream is keyed on those alone, so re-rendering the same tick yields a
    bit-identical frame.
    """
    tick = world.tick if tick is None else tick
    cam = world.camera_pose(agent_id)
    intr = world.camera.intrinsics()
    agents = [a for a in world.entities if world.entities[a].kind in AGENT_KINDS]
    rng = np.random.default_rng([world.noise.seed & 0x7FFFFFFF,
                                 agents.index(agent_id), tick])

    # ground depth: ray / ground-plane intersection per pixel
    dirs = pixel_dirs_world(intr, cam)
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dz < -1e-9, cam.z / -dz, np.inf)
        gx = cam.x + dirs[..., 0] * np.where(np.isfinite(t_ground), t_ground, 0.0)
        gy = cam.y + dirs[..., 1] * np.where(np.isfinite(t_ground), t_ground, 0.0)
    w_m, h_m = world.terrain.size_m
    on_terrain = (np.isfinite(t_ground) & (gx >= 0) & (gx < w_m)
                  & (gy >= 0) & (gy < h_m) & (t_ground <= world.camera.max_range))
    depth = np.where(on_terrain, t_ground, np.inf)

    seg = np.full(depth.shape, int(SegClass.SOIL), dtype=np.uint8)
    if on_terrain.any():
        rr = np.clip((gy[on_terrain] / world.terrain.resolution).astype(int),
                     0, world.terrain.height - 1)
        cc = np.clip((gx[on_terrain] / world.terrain.resolution).astype(int),
                     0, world.terrain.width - 1)
        rock = world.terrain.rock_map[rr, cc]
        lut = np.array([int(_ROCK_TO_SEG[k]) for k in range(4)], dtype=np.uint8)
        seg[on_terrain] = lut[rock]

    # entity overlays, far to near so closer surfaces win
    visible: list[tuple[Entity, tuple]] = []
    for e in world.entities.values():
        if e.id == agent_id:
            continue
        vis = _visible(world, cam, intr, e)
        if vis is not None:
            visible.append((e, vis))
    visible.sort(key=lambda ev: -ev[1][3])

    for e, (center, u, v, rng_m, z_cam) in visible:
        bw, bh = e.body_size()
        wpx = intr.fx * bw / z_cam
        hpx = intr.fy * bh / z_cam
        c0 = max(int(u - wpx / 2), 0)
        c1 = min(int(u + wpx / 2) + 1, intr.width)
        r0 = max(int(v - hpx / 2), 0)
        r1 = min(int(v + hpx / 2) + 1, intr.height)
        if c0 >= c1 or r0 >= r1:
            continue
        region = depth[r0:r1, c0:c1]
        closer = region > rng_m
        region[closer] = rng_m
        if e.kind is EntityKind.ROCK:
            cls = _rock_seg_class(e, rng_m)
        else:
            cls = SegClass.NOT_LABELLED  # unknown objects stay obstacles
        seg[r0:r1, c0:c1][closer] = int(cls)

    if world.noise.depth_noise_sigma > 0:
        finite = np.isfinite(depth)
        depth = depth + np.where(
            finite, rng.normal(0.0, world.noise.depth_noise_sigma, depth.shape), 0.0)
        depth = np.where(depth < 0.05, 0.05, depth)

    def clip_bbox(cx, cy, bw, bh):
        x0 = max(cx - bw / 2, 0.0)
        x1 = min(cx + bw / 2, intr.width - 1.0)
        y0 = max(cy - bh / 2, 0.0)
        y1 = min(cy + bh / 2, intr.height - 1.0)
        return ((x0 + x1) / 2, (y0 + y1) / 2,
                max(x1 - x0, 1.0), max(y1 - y0, 1.0))

    detections: list[RawDetection] = []
    jitter = world.noise.bbox_jitter_sigma
    for e, (center, u, v, rng_m, z_cam) in visible:
        label = DETECTION_LABEL[e.kind]
        drop = rng.uniform() < world.noise.fn_rate.get(label, 0.0)
        jit = rng.normal(0.0, 1.0, 4) * jitter
        conf = float(1.0 - 0.3 * rng.uniform())
        if drop:
            continue
        bw, bh = e.body_size()
        bbox = clip_bbox(u + jit[0], v + jit[1],
                         max(intr.fx * bw / z_cam + jit[2], 1.0),
                         max(intr.fy * bh / z_cam + jit[3], 1.0))
        detections.append(RawDetection(label, bbox, conf))

        if e.kind is EntityKind.SOLAR_PANEL:
            # fiducial on the panel: small box at the panel center
            tag_drop = rng.uniform() < world.noise.fn_rate.get("april_tag", 0.0)
            tag_conf = float(1.0 - 0.3 * rng.uniform())
            if not tag_drop:
                tpx = max(intr.fx * 0.2 / z_cam, 1.0)
                detections.append(RawDetection(
                    "april_tag", (u, v, tpx, tpx), tag_conf, tag_id=e.tag_id))
            if e.damage == "crack":
                crack_drop = rng.uniform() < world.noise.fn_rate.get("crack", 0.0)
                crack_conf = float(1.0 - 0.3 * rng.uniform())
                if not crack_drop:
                    # deterministic offset inside the panel face
                    off = ((e.tag_id or 0) % 3 - 1) * 0.2
                    detections.append(RawDetection(
                        "crack",
                        (u + off * intr.fx * bw / z_cam / 2.0, v,
                         max(intr.fx * bw * 0.3 / z_cam, 1.0),
                         max(intr.fy * bh * 0.3 / z_cam, 1.0)),
                        crack_conf))

    # false-positive clutter, one possible spurious box per class
    for label in sorted(world.noise.fp_rate):
        if rng.uniform() < world.noise.fp_rate[label]:
            u = rng.uniform(0, intr.width)
            v = rng.uniform(0, intr.height)
            size = rng.uniform(2, 12)
            conf = float(0.5 + 0.3 * rng.uniform())
            detections.append(RawDetection(label, (u, v, size, size), conf))

    return SensorFrame(agent_id, tick, detections, depth, seg, intr, cam)


# ---------------------------------------------------------------------------
# snapshot export
# ---------------------------------------------------------------------------

def export_world(world: World, out_dir: str | Path) -> None:
    """Terrain to 16-bit PGM (millimeters, offset +10 m), rock ground truth
    to the palettised PPM, entities to JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    elev_mm = np.clip((world.terrain.elevation + 10.0) * 1000.0, 0, 65535)
    write_pgm(out / "elevation.pgm", elev_mm.astype(np.uint16), maxval=65535)
    lut = np.array([int(_ROCK_TO_SEG[k]) for k in range(4)], dtype=np.uint8)
    seg_to_ppm(out / "rocks.ppm", lut[world.terrain.rock_map])
    ents = [e.to_json() for e in world.entities.values()]
    (out / "entities.json").write_text(json.dumps(ents, indent=2))
