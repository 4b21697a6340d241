"""Scenario configuration: a versioned JSON schema plus builders that turn
a validated document into the world, racks, mission goals and per-module
configs the simulation loop consumes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .bus import BusConfig
from .errors import ScenarioInvalid
from .executive import AstronautConfig, ExecConfig
from .messages import AutonomyLevel, GoalKind, GoalMsg
from .perception import EmergencyConfig, LocateConfig, TrackerConfig
from .planner import FollowerConfig, PlannerConfig
from .tasks import RackSpec
from .world import (CameraConfig, Entity, EntityKind, Fault, NoiseModel,
                    Terrain, World)

SCHEMA_VERSION = 1

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "rovercrew scenario",
    "type": "object",
    "required": ["version", "name", "seed", "duration_s", "terrain", "entities"],
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "tick_rate": {"type": "integer", "minimum": 1, "default": 10},
        "sensor_period": {"type": "integer", "minimum": 1},
        "stop_when_idle": {"type": "boolean"},
        "gravity": {"type": "number", "exclusiveMinimum": 0},
        "terrain": {
            "type": "object",
            "required": ["width", "height", "resolution"],
            "properties": {
                "width": {"type": "integer", "minimum": 1},
                "height": {"type": "integer", "minimum": 1},
                "resolution": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "rock_density": {"type": "number", "minimum": 0, "maximum": 1},
                "relief": {"type": "number", "minimum": 0},
                "pgm": {"type": "string"},
            },
        },
        "camera": {"type": "object"},
        "noise": {
            "type": "object",
            "properties": {
                "fp": {"type": "number", "minimum": 0, "maximum": 1},
                "fn": {"type": "number", "minimum": 0, "maximum": 1},
                "bbox_jitter": {"type": "number", "minimum": 0},
                "depth_sigma": {"type": "number", "minimum": 0},
            },
        },
        "entities": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "pose"],
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": [k.value for k in EntityKind]},
                    "pose": {"type": "array", "minItems": 3, "maxItems": 3,
                             "items": {"type": "number"}},
                    "extent": {"type": "array", "minItems": 3, "maxItems": 3},
                    "tag_id": {"type": "integer"},
                    "damage": {"enum": ["none", "crack", "burnout"]},
                },
            },
        },
        "faults": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tick", "entity", "action"],
                "properties": {
                    "tick": {"type": "integer", "minimum": 0},
                    "entity": {"type": "string"},
                    "action": {"enum": ["fall", "stand", "damage_crack",
                                        "damage_burnout"]},
                },
            },
        },
        "racks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["rack_id", "tag_ids", "panel_poses"],
            },
        },
        "goals": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tick", "goal_id", "target", "kind"],
                "properties": {
                    "tick": {"type": "integer", "minimum": 0},
                    "goal_id": {"type": "string"},
                    "target": {"type": "string"},
                    "kind": {"enum": [k.value for k in GoalKind]},
                    "level": {"type": "integer", "minimum": 1, "maximum": 4},
                    "priority": {"type": "integer"},
                    "params": {"type": "object"},
                },
            },
        },
        "zones": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tick", "point"],
                "properties": {
                    "tick": {"type": "integer", "minimum": 0},
                    "point": {"type": "array", "minItems": 2, "maxItems": 2},
                    "agent": {"type": "string"},
                },
            },
        },
        "bus": {"type": "object"},
        "astronaut": {"type": "object"},
        "mapping": {"type": "object"},
        "tracker": {"type": "object"},
        "emergency": {"type": "object"},
        "planner": {"type": "object"},
        "executive": {"type": "object"},
        "operator_resets": {
            "type": "array",
            "items": {"type": "array", "minItems": 2, "maxItems": 2},
        },
    },
}


@dataclass
class MappingConfig:
    resolution: float = 0.25
    obstacle_height: float = 0.15
    max_range: float = 8.0
    l_hit: float = 0.85
    l_miss: float = -0.4
    ray_stride: int = 3


@dataclass
class Scenario:
    doc: dict
    path: Path | None = None

    # -- raw fields with defaults ------------------------------------------

    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return self.doc["seed"]

    @property
    def tick_rate(self) -> int:
        return self.doc.get("tick_rate", 10)

    @property
    def dt(self) -> float:
        return 1.0 / self.tick_rate

    @property
    def duration_ticks(self) -> int:
        return int(self.doc["duration_s"] * self.tick_rate)

    @property
    def sensor_period(self) -> int:
        return self.doc.get("sensor_period", 5)

    @property
    def stop_when_idle(self) -> bool:
        return self.doc.get("stop_when_idle", False)

    # -- builders -------------------------------------------------------------

    def build_world(self, seed: int | None = None) -> World:
        t = self.doc["terrain"]
        seed = self.seed if seed is None else seed
        if "pgm" in t:
            from .imageio import read_pgm
            base = self.path.parent if self.path else Path(".")
            img = read_pgm(base / t["pgm"]).astype(float)
            terrain = Terrain(img.shape[1], img.shape[0], t["resolution"],
                              img / 1000.0 - 10.0)
        else:
            terrain = Terrain.procedural(
                t["width"], t["height"], t["resolution"],
                t.get("seed", seed), t.get("rock_density", 0.0),
                t.get("relief", 0.0))
        cam = CameraConfig(**self.doc.get("camera", {}))
        n = self.doc.get("noise", {})
        noise = NoiseModel.uniform(n.get("fp", 0.0), n.get("fn", 0.0),
                                   n.get("bbox_jitter", 0.0),
                                   n.get("depth_sigma", 0.0), seed)
        world = World(terrain, noise=noise, camera=cam,
                      gravity=self.doc.get("gravity", 9.81), dt=self.dt)
        for spec in self.doc["entities"]:
            kind = EntityKind(spec["kind"])
            extent = tuple(spec.get("extent", _default_extent(kind)))
            e = Entity(spec["id"], kind, tuple(spec["pose"]), extent,
                       damage=spec.get("damage", "none"),
                       tag_id=spec.get("tag_id"))
            if not terrain.contains(e.pose[0], e.pose[1]):
                raise ScenarioInvalid(
                    f"entities[{spec['id']}].pose outside the terrain")
            world.add(e)
        for f in self.doc.get("faults", []):
            if f["entity"] not in world.entities:
                raise ScenarioInvalid(f"faults reference unknown entity {f['entity']}")
            if f["tick"] > self.duration_ticks:
                raise ScenarioInvalid(f"fault at tick {f['tick']} beyond mission end")
            world.faults.append(Fault(f["tick"], f["entity"], f["action"]))
        return world

    def build_racks(self) -> dict[str, RackSpec]:
        racks = {}
        for r in self.doc.get("racks", []):
            racks[r["rack_id"]] = RackSpec(
                r["rack_id"], list(r["tag_ids"]),
                [tuple(p) for p in r["panel_poses"]],
                tuple(r.get("panel_size", (2.4, 1.2))),
                r.get("panel_center_height", 0.6),
                r.get("standoff", 2.0))
        return racks

    def build_goals(self) -> list[tuple[int, GoalMsg]]:
        out = []
        for g in self.doc.get("goals", []):
            out.append((g["tick"], GoalMsg(
                g["goal_id"], "control", g["target"],
                AutonomyLevel(g.get("level", 4)), GoalKind(g["kind"]),
                g.get("params", {}), g.get("priority", 0))))
        return out

    def bus_config(self) -> BusConfig:
        return BusConfig(**self.doc.get("bus", {}))

    def mapping_config(self) -> MappingConfig:
        return MappingConfig(**self.doc.get("mapping", {}))

    def tracker_config(self) -> TrackerConfig:
        cfg = TrackerConfig(**self.doc.get("tracker", {}))
        cfg.dt = self.dt
        return cfg

    def emergency_config(self) -> EmergencyConfig:
        e = dict(self.doc.get("emergency", {}))
        if isinstance(e.get("dangerous_classes"), list):
            e["dangerous_classes"] = frozenset(e["dangerous_classes"])
        cfg = EmergencyConfig(**e)
        cfg.dt = self.dt
        return cfg

    def locate_config(self) -> LocateConfig:
        cam = CameraConfig(**self.doc.get("camera", {}))
        return LocateConfig(max_range=cam.max_range)

    def exec_config(self, agent_id: str) -> ExecConfig:
        base = dict(self.doc.get("executive", {}))
        per_agent = base.pop("agents", {})
        merged = {**base, **per_agent.get(agent_id, {})}
        planner = PlannerConfig(**merged.pop("planner", self.doc.get("planner", {})))
        follower = FollowerConfig(**merged.pop("follower", {"goal_tolerance": 0.1}))
        cfg = ExecConfig(planner=planner, follower=follower, **merged)
        cfg.dt = self.dt
        return cfg

    def astronaut_config(self) -> AstronautConfig:
        a = dict(self.doc.get("astronaut", {}))
        if "dropouts" in a:
            a["dropouts"] = [tuple(d) for d in a["dropouts"]]
        return AstronautConfig(**a)

    def operator_resets(self) -> list[tuple[int, str]]:
        return [tuple(r) for r in self.doc.get("operator_resets", [])]

    def zones(self) -> list[dict]:
        return [dict(agent="lamarr", **z) if "agent" not in z else dict(z)
                for z in self.doc.get("zones", [])]


def _default_extent(kind: EntityKind) -> tuple[float, float, float]:
    return {
        EntityKind.ROVER_LAMARR: (0.5, 0.5, 0.5),
        EntityKind.ROVER_MAE: (0.45, 0.45, 0.45),
        EntityKind.ASTRONAUT: (0.7, 1.9, 0.35),
        EntityKind.ROCK: (0.6, 0.5, 0.6),
        EntityKind.SOLAR_PANEL: (2.4, 1.2, 0.1),
    }[kind]


def validate_scenario(doc: dict) -> None:
    """Schema validation; raises ScenarioInvalid with the offending path."""
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ScenarioInvalid(f"{path}: {exc.message}") from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioInvalid(f"cannot read scenario {path}: {exc}") from None
    validate_scenario(doc)
    sc = Scenario(doc, path)
    sc.build_world()    # surface entity/fault errors at load time
    return sc


def builtin_scenario_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.json"
