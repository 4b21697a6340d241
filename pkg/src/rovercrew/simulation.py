"""Deterministic fixed-timestep mission loop.

Per tick: deliver bus traffic, apply scheduled events, step physics, then
for each rover on its sensor cadence render a frame, localize detections,
track, classify events and integrate the masked depth into its map;
finally tick every executive and scripted agent and post their outboxes.
Everything of interest lands in the trace, which fully determines the
mission report.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bus import MessageBus
from .executive import (AstronautPolicy, ControlAgent, EscalationPhase,
                        Executive, WorldKnowledge)
from .messages import GoalMsg, ObsKind, ObservationMsg
from .metrics import MissionReport, metrics
from .navmap import OccupancyGrid, integrate_depth, mask_depth, save_grid
from .perception import EmergencyMonitor, LocatedDetection, Tracker, locate
from .scenario import Scenario
from .world import EntityKind, ROVER_KINDS, World, render_frame, step_physics

TRACKABLE = ("astronaut", "rover", "rock", "solar_panel")


def _plain(obj):
    """Recursively strip numpy scalar types so the trace serializes cleanly."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


@dataclass
class RoverRuntime:
    agent_id: str
    executive: Executive
    tracker: Tracker
    monitor: EmergencyMonitor
    grid: OccupancyGrid
    poses: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class SimResult:
    trace: list[dict]
    report: MissionReport
    grids: dict[str, OccupancyGrid]
    world: World

    def trace_bytes(self) -> bytes:
        return b"".join(json.dumps(ev, separators=(",", ":")).encode() + b"\n"
                        for ev in self.trace)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None,
                 drop_p: float | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.world = scenario.build_world(self.seed)
        self.dt = scenario.dt
        self.trace: list[dict] = []

        self.rover_ids = [e.id for e in self.world.entities.values()
                          if e.kind in ROVER_KINDS]
        self.astronaut_ids = [e.id for e in self.world.entities.values()
                              if e.kind is EntityKind.ASTRONAUT]
        agents = self.rover_ids + self.astronaut_ids + ["control"]

        bus_cfg = scenario.bus_config()
        if drop_p is not None:
            bus_cfg.drop_p = drop_p
        self.bus = MessageBus(agents, bus_cfg, seed=self.seed,
                              on_send=self._trace_send)

        racks = scenario.build_racks()
        size = self.world.terrain.size_m
        self.mapping = scenario.mapping_config()
        self.rovers: dict[str, RoverRuntime] = {}
        container = self.rover_ids[1] if len(self.rover_ids) > 1 else "none"
        astronaut = self.astronaut_ids[0] if self.astronaut_ids else "none"
        for rid in self.rover_ids:
            knowledge = WorldKnowledge(size, racks, astronaut_id=astronaut,
                                       container_agent=container)
            grid = OccupancyGrid(self.world.terrain.width,
                                 self.world.terrain.height,
                                 self.mapping.resolution, (0.0, 0.0), rid)
            ex = Executive(rid, scenario.exec_config(rid), knowledge, grid)
            ex.pose = self.world.entities[rid].pose
            self.rovers[rid] = RoverRuntime(
                rid, ex, Tracker(scenario.tracker_config()),
                EmergencyMonitor(scenario.emergency_config()), grid)

        self.locate_cfg = scenario.locate_config()
        self.astronauts = {
            aid: AstronautPolicy(aid, scenario.astronaut_config(), self.dt)
            for aid in self.astronaut_ids
        }
        self.control = ControlAgent("control", scenario.build_goals(),
                                    scenario.operator_resets())
        self.zones = list(scenario.zones())
        self._mission_goal_ids = [g.goal_id for _, g in self.control.mission]
        # the idle check must not fire before every scheduled event has had
        # a chance to propagate through perception and the executives
        scheduled = ([f.tick for f in self.world.faults]
                     + [t for t, _ in self.control.mission]
                     + [t for t, _ in self.control.operator_resets]
                     + [z["tick"] for z in self.zones]
                     + [end for _, end in scenario.astronaut_config().dropouts])
        self._idle_after = (max(scheduled) if scheduled else 0) + 50

    # -- tracing helpers ---------------------------------------------------

    def _emit(self, tick: int, source: str, kind: str, payload: dict):
        self.trace.append({"tick": tick, "source": source, "kind": kind,
                           "payload": _plain(payload)})

    def _trace_send(self, env):
        body = env.body
        payload = {"src": env.src, "dst": env.dst, "msg_id": env.msg_id,
                   "reliable": env.reliable}
        if isinstance(body, GoalMsg):
            payload["msg_kind"] = "goal"
            payload["goal_id"] = body.goal_id
            payload["goal_kind"] = body.kind.value
        else:
            payload["msg_kind"] = body.kind.value
            if body.kind in (ObsKind.GOAL_STATUS, ObsKind.ASTRONAUT_REPLY,
                             ObsKind.EMERGENCY, ObsKind.INTERESTING_ZONE):
                payload["payload"] = body.payload
        self._emit(self._tick_now, "bus", "message", payload)

    # -- perception + mapping for one rover on a sensor tick ------------------

    def _sense(self, rt: RoverRuntime, tick: int):
        frame = render_frame(self.world, rt.agent_id, tick)
        located = locate(frame, self.locate_cfg)

        world_located = []
        tag_points = []
        for ld in located:
            wp = frame.cam_pose.camera_to_world(ld.position)[0]
            if ld.raw.class_label in TRACKABLE:
                world_located.append(LocatedDetection(ld.raw, wp, ld.mean_depth))
            elif ld.raw.class_label == "april_tag" and ld.raw.tag_id is not None:
                tag_points.append((ld.raw.tag_id, wp))

        tracks = rt.tracker.step(world_located, tick)
        track_tags = {}
        for tag_id, wp in tag_points:
            best, best_d = None, 1.0
            for t in tracks:
                if t.class_label != "solar_panel":
                    continue
                d = float(np.linalg.norm(t.position - wp))
                if d < best_d:
                    best, best_d = t, d
            if best is not None:
                track_tags[best.id] = tag_id
        events = rt.monitor.step(tracks, tick)

        # positions at full precision: the replay tooling must reproduce the
        # run's association decisions bit for bit
        self._emit(tick, rt.agent_id, "detections", {
            "detections": [
                {**ld.raw.to_json(), "position": [float(v) for v in ld.position]}
                for ld in world_located],
            "depth_ref": None,
        })
        self._emit(tick, rt.agent_id, "tracks", {
            "tracks": [[t.id, t.class_label, t.status.value] for t in tracks],
        })
        for ev in events:
            self._emit(tick, rt.agent_id, "perception_event", {
                "event": ev.kind.value, "subject": ev.subject_track,
                "object": ev.object_track,
                "object_class": ev.details.get("object_class"),
            })

        masked = mask_depth(frame.depth, frame.seg_mask)
        rt.grid = integrate_depth(
            rt.grid, masked, frame.intrinsics, frame.cam_pose,
            obstacle_height=self.mapping.obstacle_height,
            max_range=self.mapping.max_range,
            l_hit=self.mapping.l_hit, l_miss=self.mapping.l_miss,
            terrain_fn=self.world.terrain.elevation_at,
            stride=self.mapping.ray_stride)
        rt.executive.grid = rt.grid
        return frame, tracks, events, track_tags

    # -- main loop --------------------------------------------------------------

    def _idle(self) -> bool:
        if self._tick_now <= self._idle_after:
            return False
        for rt in self.rovers.values():
            ex = rt.executive
            if ex.active is not None or ex.queue or ex.suspended:
                return False
            if ex.escalation.phase is EscalationPhase.ALERT_SENT:
                return False
        for gid in self._mission_goal_ids:
            if self.control.goal_results.get(gid) not in ("done", "failed",
                                                          "rejected"):
                return False
        for a in self.astronauts.values():
            if a._reply_due is not None:
                return False
        return self.bus.idle()

    def run(self) -> SimResult:
        sc = self.scenario
        started = time.perf_counter()
        self._tick_now = 0
        self._emit(0, "harness", "start", {
            "scenario": sc.name, "seed": self.seed, "dt": self.dt,
            "drop_p": self.bus.config.drop_p,
        })
        last_tick = 0
        for tick in range(1, sc.duration_ticks + 1):
            self._tick_now = tick
            last_tick = tick
            inboxes = self.bus.step(tick)

            # scheduled interesting-zone observations
            for z in [z for z in self.zones if z["tick"] == tick]:
                obs = ObservationMsg(z["agent"], tick, ObsKind.INTERESTING_ZONE,
                                     {"point": list(z["point"])})
                inboxes.setdefault(z["agent"], []).append((z["agent"], obs))
                self.bus.send(z["agent"], "*", obs, tick)
                self._emit(tick, z["agent"], "zone", {"point": list(z["point"])})
            self.zones = [z for z in self.zones if z["tick"] != tick]

            out = self.control.tick(tick, inboxes.get("control", []))
            self._post(out, "control", tick)

            step_physics(self.world, self.dt)

            sensor_tick = tick % sc.sensor_period == 0
            for rid in self.rover_ids:
                rt = self.rovers[rid]
                entity = self.world.entities[rid]
                rt.executive.pose = entity.pose
                frame = tracks = events = track_tags = None
                if sensor_tick:
                    frame, tracks, events, track_tags = self._sense(rt, tick)
                out = rt.executive.tick(
                    tick, inboxes.get(rid, []), tracks or (), events or (),
                    frame, track_tags)
                entity.cmd_v, entity.cmd_omega = out.wheel
                self._post(out, rid, tick)
                if tick % 10 == 0:
                    rt.poses.append((tick, entity.pose[0], entity.pose[1]))
                    self._emit(tick, rid, "pose", {
                        "x": round(entity.pose[0], 3),
                        "y": round(entity.pose[1], 3)})

            for aid, policy in self.astronauts.items():
                entity = self.world.entities[aid]
                out = policy.tick(tick, entity, inboxes.get(aid, []))
                entity.cmd_v, entity.cmd_omega = out.wheel
                self._post(out, aid, tick)
                if tick % 10 == 0:
                    self._emit(tick, aid, "pose", {
                        "x": round(entity.pose[0], 3),
                        "y": round(entity.pose[1], 3)})

            if len(self.rover_ids) > 1:
                poses = [self.world.entities[r].pose for r in self.rover_ids]
                for i in range(len(poses)):
                    for j in range(i + 1, len(poses)):
                        d = float(np.hypot(poses[i][0] - poses[j][0],
                                           poses[i][1] - poses[j][1]))
                        self._min_separation = min(
                            getattr(self, "_min_separation", np.inf), d)

            if sc.stop_when_idle and tick > 10 and self._idle():
                break

        for rid in self.rover_ids:
            self._emit(last_tick, rid, "coverage",
                       {"coverage": round(self.rovers[rid].grid.coverage(), 4)})
        sep = getattr(self, "_min_separation", None)
        self._emit(last_tick, "harness", "end",
                   {"ticks": last_tick, "dt": self.dt,
                    "min_rover_separation":
                        None if sep is None else round(sep, 4)})

        report = metrics(self.trace)
        report.wall_clock_s = round(time.perf_counter() - started, 3)
        grids = {rid: self.rovers[rid].grid for rid in self.rover_ids}
        return SimResult(self.trace, report, grids, self.world)

    def _post(self, out, source: str, tick: int):
        for dst, body, reliable in out.sends:
            self.bus.send(source, dst, body, tick, reliable)
        for ev in out.trace:
            ev = dict(ev)
            kind = ev.pop("kind")
            self._emit(tick, source, kind, ev)


def run_scenario(scenario: Scenario, seed: int | None = None,
                 drop_p: float | None = None) -> SimResult:
    return Simulation(scenario, seed, drop_p).run()


def save_outputs(result: SimResult, out_dir: str | Path) -> dict[str, Path]:
    """Write the trace, report, per-rover replay streams, grids and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    trace_path = out / "trace.jsonl"
    trace_path.write_bytes(result.trace_bytes())
    paths["trace"] = trace_path

    report_path = out / "report.json"
    report_path.write_text(json.dumps(result.report.to_json(), indent=2) + "\n")
    paths["report"] = report_path

    csv_path = out / "metrics.csv"
    rows = ["metric,value"]
    for k, v in result.report.to_json().items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                rows.append(f"{k}.{kk},{vv}")
        else:
            rows.append(f"{k},{v}")
    csv_path.write_text("\n".join(rows) + "\n")
    paths["metrics"] = csv_path

    by_agent: dict[str, list[dict]] = {}
    for ev in result.trace:
        if ev["kind"] == "detections":
            by_agent.setdefault(ev["source"], []).append(
                {"tick": ev["tick"], **ev["payload"]})
    for agent, lines in by_agent.items():
        p = out / f"detections-{agent}.jsonl"
        p.write_text("".join(json.dumps(l, separators=(",", ":")) + "\n"
                             for l in lines))
        paths[f"detections-{agent}"] = p

    for rid, grid in result.grids.items():
        p = out / f"grid-{rid}.pgm"
        save_grid(grid, p)
        paths[f"grid-{rid}"] = p

    from .figures import render_report_figures
    for p in render_report_figures(result, out):
        paths[p.stem] = p
    return paths
