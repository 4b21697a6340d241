"""Agent executive: E4 autonomy gating, goal decomposition, plan execution
with suspension and resume, inter-agent synchronisation, astronaut
monitoring and the emergency escalation protocol.

One Executive instance drives one rover. The scripted AstronautPolicy and
ControlAgent stand in for the suited astronaut's console and the mission
control centre on the same bus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import SimError, ContainerOutOfRange, UnknownGoalKind, UnplannableGoal
from .messages import (AutonomyLevel, E4_KINDS, GoalKind, GoalMsg, ObsKind,
                       ObservationMsg)
from .navmap import OccupancyGrid, digest_to_grid, fuse_maps, grid_to_digest
from .perception import EventKind, TrackStatus
from .planner import FollowerConfig, Path, PlannerConfig, follow, plan as plan_path
from .tasks import (RackSpec, SampleOp, SamplePhase, ToolPhase, ToolState,
                    classify_panel, collect_sample, Verdict, PanelRecord)
from .errors import TagNotSeen


# ---------------------------------------------------------------------------
# Emergency escalation state machine
# ---------------------------------------------------------------------------

class EscalationPhase(str, Enum):
    NOMINAL = "nominal"
    ALERT_SENT = "alert_sent"
    CONTROL_NOTIFIED = "control_notified"


ESCALATION_TRIGGERS = ("fall", "deviation", "comms_lost")
ESCALATION_EVENTS = ESCALATION_TRIGGERS + ("reply_ok", "reply_help", "tick",
                                           "operator_reset")


@dataclass(frozen=True)
class EscalationState:
    phase: EscalationPhase = EscalationPhase.NOMINAL
    subject: str = "astronaut"
    alert_tick: int | None = None
    reason: str | None = None
    ack_timeout: float = 30.0        # simulated seconds


def escalate(state: EscalationState, event: str, tick: int,
             dt: float = 0.1) -> tuple[EscalationState, list[dict]]:
    """One escalation transition; returns the new state plus side-effect
    requests ({action: send_alert | notify_control, reason}).

    Fully defined over phase x event; control-notified is absorbing until
    an operator reset.
    """
    if event not in ESCALATION_EVENTS:
        raise ValueError(f"unknown escalation event {event!r}")
    p = state.phase
    if p is EscalationPhase.NOMINAL:
        if event in ESCALATION_TRIGGERS:
            return (replace(state, phase=EscalationPhase.ALERT_SENT,
                            alert_tick=tick, reason=event),
                    [{"action": "send_alert", "reason": event}])
        return state, []
    if p is EscalationPhase.ALERT_SENT:
        if event == "reply_ok":
            return replace(state, phase=EscalationPhase.NOMINAL,
                           alert_tick=None, reason=None), []
        if event == "reply_help":
            return (replace(state, phase=EscalationPhase.CONTROL_NOTIFIED),
                    [{"action": "notify_control", "reason": "help_requested"}])
        if event == "tick":
            if tick - (state.alert_tick or tick) >= state.ack_timeout / dt:
                return (replace(state, phase=EscalationPhase.CONTROL_NOTIFIED),
                        [{"action": "notify_control", "reason": "no_answer"}])
            return state, []
        if event == "operator_reset":
            return EscalationState(subject=state.subject,
                                   ack_timeout=state.ack_timeout), []
        return state, []   # repeated triggers while already alerted
    # CONTROL_NOTIFIED: absorbing until reset
    if event == "operator_reset":
        return EscalationState(subject=state.subject,
                               ack_timeout=state.ack_timeout), []
    return state, []


# ---------------------------------------------------------------------------
# Plans and goal decomposition
# ---------------------------------------------------------------------------

class StepKind(str, Enum):
    NAVIGATE = "navigate"
    WAIT_PEER = "wait_peer"
    TOOLCHANGE = "toolchange"
    SCOOP = "scoop"
    TRANSFER = "transfer"
    CAPTURE_PANEL = "capture_panel"
    PUBLISH_REPORT = "publish_report"
    ISSUE_GOAL = "issue_goal"
    SUPERVISE = "supervise"
    STANDBY = "standby"


class StepStatus(str, Enum):
    PENDING = "pending"
    ACTIVE = "active"
    DONE = "done"
    FAILED = "failed"
    SUSPENDED = "suspended"


class PlanStatus(str, Enum):
    PENDING = "pending"
    ACTIVE = "active"
    DONE = "done"
    FAILED = "failed"
    SUSPENDED = "suspended"


@dataclass
class PlanStep:
    kind: StepKind
    params: dict = field(default_factory=dict)
    status: StepStatus = StepStatus.PENDING


@dataclass
class Plan:
    goal_id: str
    kind: GoalKind
    steps: list[PlanStep]
    priority: int = 0
    issuer: str = ""
    status: PlanStatus = PlanStatus.PENDING
    current: int = 0
    sample: SampleOp | None = None
    tool: ToolState | None = None
    records: list[PanelRecord] = field(default_factory=list)
    _seq: int = 0                  # arrival order, FIFO tie-break

    def active_step(self) -> PlanStep | None:
        return self.steps[self.current] if self.current < len(self.steps) else None


@dataclass
class WorldKnowledge:
    """Static mission knowledge an executive decomposes against."""
    map_size: tuple[float, float]
    racks: dict[str, RackSpec] = field(default_factory=dict)
    base_pose: tuple[float, float] = (2.0, 2.0)
    astronaut_id: str = "eva1"
    container_agent: str = "mae"


def boustrophedon(rect: tuple[float, float, float, float],
                  spacing: float) -> list[tuple[float, float]]:
    """Back-and-forth coverage lanes over a rectangle; lane count is
    ceil(height / spacing)."""
    x0, y0, x1, y1 = rect
    if spacing <= 0 or x1 <= x0 or y1 <= y0:
        raise UnplannableGoal("degenerate region or spacing")
    lanes = int(math.ceil((y1 - y0) / spacing))
    inset = min(spacing / 2.0, (x1 - x0) / 2.0)
    xa, xb = x0 + inset, x1 - inset
    pts = []
    for i in range(lanes):
        y = min(y0 + spacing / 2.0 + i * spacing, y1 - 1e-6)
        if i % 2 == 0:
            pts += [(xa, y), (xb, y)]
        else:
            pts += [(xb, y), (xa, y)]
    return pts


def decompose(goal: GoalMsg, knowledge: WorldKnowledge) -> Plan:
    """Turn an accepted goal into an ordered step plan. Deterministic."""
    k = goal.kind
    p = goal.params
    if k is GoalKind.EXPLORE_REGION:
        rect = tuple(p["rect"])
        w, h = knowledge.map_size
        if not (0 <= rect[0] < rect[2] <= w and 0 <= rect[1] < rect[3] <= h):
            raise UnplannableGoal(f"region {rect} outside the {w}x{h} m map")
        waypoints = boustrophedon(rect, float(p.get("spacing", 2.0)))
        steps = [PlanStep(StepKind.NAVIGATE, {"point": list(wp)}) for wp in waypoints]
        return Plan(goal.goal_id, k, steps, goal.priority, goal.issuer)
    if k is GoalKind.INSPECT_RACK:
        rack = knowledge.racks.get(p["rack_id"])
        if rack is None:
            raise UnplannableGoal(f"unknown rack {p['rack_id']!r}")
        steps = []
        for tag in rack.tag_ids:
            sx, sy, sh = rack.standoff_pose(tag)
            # tight pose tolerance: corner-visibility margins depend on it
            steps.append(PlanStep(StepKind.NAVIGATE,
                                  {"point": [sx, sy], "heading": sh,
                                   "tolerance": 0.15}))
            steps.append(PlanStep(StepKind.CAPTURE_PANEL,
                                  {"rack_id": rack.rack_id, "tag_id": tag}))
        steps.append(PlanStep(StepKind.PUBLISH_REPORT, {"rack_id": rack.rack_id}))
        return Plan(goal.goal_id, k, steps, goal.priority, goal.issuer)
    if k is GoalKind.COLLECT_SAMPLE:
        point = tuple(p["point"])
        if p.get("role", "collector") == "container":
            steps = [
                PlanStep(StepKind.NAVIGATE, {"point": list(point)}),
                PlanStep(StepKind.STANDBY,
                         {"watch_goal": p.get("collector_goal_id")}),
            ]
            return Plan(goal.goal_id, k, steps, goal.priority, goal.issuer)
        steps = [
            PlanStep(StepKind.NAVIGATE, {"point": list(point)}),
            PlanStep(StepKind.WAIT_PEER, {"peer": knowledge.container_agent}),
            PlanStep(StepKind.TOOLCHANGE, {"action": "assemble", "tool": "shovel"}),
            PlanStep(StepKind.NAVIGATE, {"point": list(point)}),
            PlanStep(StepKind.SCOOP, {}),
            PlanStep(StepKind.TRANSFER, {"container": knowledge.container_agent}),
        ]
        return Plan(goal.goal_id, k, steps, goal.priority, goal.issuer,
                    sample=SampleOp(point, knowledge.container_agent),
                    tool=ToolState())
    if k is GoalKind.REPAIR_PANEL:
        rack = knowledge.racks.get(p["rack_id"])
        if rack is None or p["tag_id"] not in rack.tag_ids:
            raise UnplannableGoal("unknown rack or tag for repair")
        tag = p["tag_id"]
        px, py, ph = rack.panel_poses[rack.tag_ids.index(tag)]
        workspace = [px + 0.8 * math.cos(ph), py + 0.8 * math.sin(ph)]
        post = [px + (rack.standoff + 2.0) * math.cos(ph),
                py + (rack.standoff + 2.0) * math.sin(ph)]
        steps = [
            PlanStep(StepKind.ISSUE_GOAL, {
                "to": knowledge.astronaut_id,
                "kind": GoalKind.ASSIST_REPAIR.value,
                "params": {"rack_id": rack.rack_id, "tag_id": tag,
                           "workspace": workspace,
                           "record": p.get("record", {})},
            }),
            PlanStep(StepKind.NAVIGATE, {"point": post,
                                         "heading": ph + math.pi}),
            PlanStep(StepKind.SUPERVISE, {"tag_id": tag, "workspace": workspace}),
        ]
        return Plan(goal.goal_id, k, steps, goal.priority, goal.issuer)
    if k is GoalKind.RETURN_TO_BASE:
        return Plan(goal.goal_id, k,
                    [PlanStep(StepKind.NAVIGATE,
                              {"point": list(knowledge.base_pose)})],
                    goal.priority, goal.issuer)
    if k is GoalKind.NAVIGATE_TO:
        return Plan(goal.goal_id, k,
                    [PlanStep(StepKind.NAVIGATE, {"point": list(p["point"])})],
                    goal.priority, goal.issuer)
    raise UnknownGoalKind(f"no decomposition for {k.value}")


# ---------------------------------------------------------------------------
# Executive configuration and per-tick output
# ---------------------------------------------------------------------------

@dataclass
class ExecConfig:
    autonomy_level: AutonomyLevel = AutonomyLevel.E4
    dt: float = 0.1
    deviation_radius: float = 10.0
    comms_timeout: float = 15.0       # s of heartbeat silence
    ack_timeout: float = 30.0         # s before escalation gives up
    safe_zone: float = 3.0
    rover_radius: float = 0.25
    replan_period: int = 30
    digest_period: int = 50
    arm_dwell: int = 8                # ticks per tool-changer event
    scoop_ticks: int = 15
    transfer_ticks: int = 10
    capture_frames: int = 3
    capture_dwell: int = 40
    supervise_timeout: float = 60.0   # s without interaction
    rendezvous_range: float = 1.5
    transfer_range: float = 1.0
    goal_tolerance: float = 0.25
    heading_tolerance: float = 0.06
    wait_timeout: float = 180.0       # s for wait/standby steps
    nav_fail_limit: int = 8
    tool_lock_failures: int = 0       # fault injection: failed lock attempts
    adapt_to_zones: bool = False      # only the lead rover reacts to zones
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    follower: FollowerConfig = field(
        default_factory=lambda: FollowerConfig(goal_tolerance=0.1))


@dataclass
class TickOutput:
    sends: list[tuple[str, object, bool | None]] = field(default_factory=list)
    wheel: tuple[float, float] = (0.0, 0.0)
    trace: list[dict] = field(default_factory=list)


class Executive:
    """Sequential per-agent controller; all inter-agent effects go through
    the returned outbox."""

    def __init__(self, agent_id: str, config: ExecConfig,
                 knowledge: WorldKnowledge, grid: OccupancyGrid):
        self.agent_id = agent_id
        self.config = config
        self.knowledge = knowledge
        self.grid = grid
        self.pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
        self.queue: list[Plan] = []
        self.suspended: list[Plan] = []
        self.active: Plan | None = None
        self.escalation = EscalationState(subject=knowledge.astronaut_id,
                                          ack_timeout=config.ack_timeout)
        self.peer_poses: dict[str, tuple[float, float, float, int]] = {}
        self.peer_digests: dict[str, OccupancyGrid] = {}
        self.peer_goal_status: dict[str, str] = {}
        self.goals_seen: set[str] = set()
        self.expected_astronaut: tuple[float, float] | None = None
        self.latest_frame = None
        self.track_tags: dict[int, int] = {}
        self._goal_seq = 0
        self._arrival_seq = 0
        self._path: Path | None = None
        self._next_replan = 0
        self._nav_fails = 0
        self._step_started = 0
        self._capture_frames: list = []
        self._capture_tag_hits = 0
        self._deviation_active = False
        self._comms_lost_active = False
        self._lock_failures_left = config.tool_lock_failures
        self._supervise_deadline: int | None = None
        self._zone_count = 0
        self._live_interactions: dict[tuple[int, int], tuple[int, str]] = {}
        self._notified_wrong: set[tuple[int, int]] = set()

    # -- inbox ---------------------------------------------------------------

    def _reject(self, goal: GoalMsg, reason: str, tick: int, out: TickOutput):
        out.sends.append((goal.issuer, ObservationMsg(
            self.agent_id, tick, ObsKind.GOAL_STATUS,
            {"goal_id": goal.goal_id, "status": "rejected", "reason": reason}), True))
        out.trace.append({"kind": "goal", "action": "rejected",
                          "goal_id": goal.goal_id, "reason": reason,
                          "goal_kind": goal.kind.value})

    def accept_goal(self, goal: GoalMsg, tick: int, out: TickOutput) -> Plan | None:
        """E4 gate plus decomposition; rejections answer with a goal status."""
        if goal.goal_id in self.goals_seen:
            return None
        self.goals_seen.add(goal.goal_id)
        if goal.level != self.config.autonomy_level:
            self._reject(goal, "AutonomyLevelMismatch", tick, out)
            return None
        if goal.kind not in E4_KINDS:
            self._reject(goal, "UnknownGoalKind", tick, out)
            return None
        try:
            new_plan = decompose(goal, self.knowledge)
        except (UnplannableGoal, UnknownGoalKind) as exc:
            self._reject(goal, f"UnplannableGoal: {exc}", tick, out)
            return None
        self._arrival_seq += 1
        new_plan._seq = self._arrival_seq  # FIFO tie-break within priority
        self.queue.append(new_plan)
        self.queue.sort(key=lambda pl: (-pl.priority, pl._seq))
        out.sends.append((goal.issuer, ObservationMsg(
            self.agent_id, tick, ObsKind.GOAL_STATUS,
            {"goal_id": goal.goal_id, "status": "accepted"}), True))
        out.trace.append({"kind": "goal", "action": "accepted",
                          "goal_id": goal.goal_id, "goal_kind": goal.kind.value,
                          "priority": goal.priority, "steps": len(new_plan.steps)})
        return new_plan

    def _ingest(self, src: str, msg, tick: int, out: TickOutput):
        if isinstance(msg, GoalMsg):
            if msg.target == self.agent_id:
                self.accept_goal(msg, tick, out)
            return
        kind = msg.kind
        if kind is ObsKind.POSE:
            p = msg.payload
            self.peer_poses[src] = (p["x"], p["y"], p.get("heading", 0.0), tick)
        elif kind is ObsKind.HEARTBEAT:
            self.peer_poses.setdefault(src, (0.0, 0.0, 0.0, tick))
            self._heartbeat(src, tick)
        elif kind is ObsKind.MAP_DIGEST:
            self.peer_digests[src] = digest_to_grid(msg.payload, frame_id=src)
        elif kind is ObsKind.INTERESTING_ZONE:
            if self.config.adapt_to_zones:
                self.adapt_to_zone(tuple(msg.payload["point"]), tick, out)
        elif kind is ObsKind.GOAL_STATUS:
            self.peer_goal_status[msg.payload.get("goal_id")] = \
                msg.payload.get("status")
        elif kind is ObsKind.ASTRONAUT_REPLY:
            reply = msg.payload["reply"]
            self._escalate("reply_ok" if reply == "OK" else "reply_help",
                           tick, out)
        elif kind is ObsKind.EMERGENCY:
            if msg.payload.get("operator_reset"):
                self._escalate("operator_reset", tick, out)

    def _heartbeat(self, src: str, tick: int):
        self._last_heartbeat = getattr(self, "_last_heartbeat", {})
        self._last_heartbeat[src] = tick

    # -- escalation and monitoring -------------------------------------------

    def _escalate(self, event: str, tick: int, out: TickOutput):
        before = self.escalation.phase
        self.escalation, actions = escalate(self.escalation, event, tick,
                                            self.config.dt)
        if self.escalation.phase is not before:
            out.trace.append({"kind": "escalation", "from": before.value,
                              "to": self.escalation.phase.value, "event": event})
        for act in actions:
            if act["action"] == "send_alert":
                out.sends.append((self.knowledge.astronaut_id, ObservationMsg(
                    self.agent_id, tick, ObsKind.EMERGENCY,
                    {"alert": "confirm_accident", "reason": act["reason"]}), True))
            elif act["action"] == "notify_control":
                out.sends.append(("control", ObservationMsg(
                    self.agent_id, tick, ObsKind.EMERGENCY,
                    {"escalation": act["reason"],
                     "subject": self.escalation.subject}), True))

    def monitor_astronaut(self, tracks, tick: int, out: TickOutput):
        """Deviation and comms-loss monitoring while a worksite is active."""
        cfg = self.config
        if self.expected_astronaut is not None:
            astro = [t for t in tracks if t.class_label == "astronaut"
                     and t.status is TrackStatus.CONFIRMED]
            if astro:
                exp = np.array(self.expected_astronaut)
                d = min(float(np.linalg.norm(t.position[:2] - exp)) for t in astro)
                if d > cfg.deviation_radius and not self._deviation_active:
                    self._deviation_active = True
                    out.trace.append({"kind": "monitor", "event": "deviation",
                                      "distance": round(d, 2)})
                    self._escalate("deviation", tick, out)
                elif d <= cfg.deviation_radius:
                    self._deviation_active = False
        hb = getattr(self, "_last_heartbeat", {}).get(self.knowledge.astronaut_id)
        if hb is not None:
            silent = (tick - hb) * cfg.dt > cfg.comms_timeout
            if silent and not self._comms_lost_active:
                self._comms_lost_active = True
                out.trace.append({"kind": "monitor", "event": "comms_lost"})
                self._escalate("comms_lost", tick, out)
            elif not silent:
                self._comms_lost_active = False

    # -- plan adaptation -------------------------------------------------------

    def adapt_to_zone(self, point: tuple[float, float], tick: int,
                      out: TickOutput):
        """Interesting zone: suspend exploration, inject a cooperative
        sample-collection plan, and call the container rover over."""
        if self.active is not None and self.active.kind is GoalKind.COLLECT_SAMPLE:
            return   # already sampling
        self._zone_count += 1
        gid = f"{self.agent_id}-sample-{self._zone_count}"
        prio = (self.active.priority if self.active else 0) + 5
        container = self.knowledge.container_agent
        peer = self.peer_poses.get(container)
        if peer is not None:
            d = np.array([peer[0] - point[0], peer[1] - point[1]])
            n = np.linalg.norm(d)
            d = d / n if n > 1e-6 else np.array([1.0, 0.0])
        else:
            d = np.array([1.0, 0.0])
        rendezvous = [point[0] + 0.85 * d[0], point[1] + 0.85 * d[1]]
        goal = GoalMsg(gid, self.agent_id, self.agent_id, AutonomyLevel.E4,
                       GoalKind.COLLECT_SAMPLE, {"point": list(point)}, prio)
        self.goals_seen.add(gid)
        sample_plan = decompose(goal, self.knowledge)
        sample_plan._seq = self._arrival_seq = self._arrival_seq + 1
        self.queue.append(sample_plan)
        self.queue.sort(key=lambda pl: (-pl.priority, pl._seq))
        out.trace.append({"kind": "goal", "action": "accepted", "goal_id": gid,
                          "goal_kind": goal.kind.value, "priority": prio,
                          "steps": len(sample_plan.steps)})
        ctr_goal = GoalMsg(gid + "-ctr", self.agent_id, container,
                           AutonomyLevel.E4, GoalKind.COLLECT_SAMPLE,
                           {"role": "container", "point": rendezvous,
                            "collector_goal_id": gid}, prio)
        out.sends.append((container, ctr_goal, True))

    # -- planning helpers -------------------------------------------------------

    def planning_grid(self) -> OccupancyGrid:
        """Own map fused with peer digests, with peer discs and the astronaut
        safety zone stamped in, and the cell under the rover cleared."""
        g = self.grid
        for src in sorted(self.peer_digests):
            g = fuse_maps(g, self.peer_digests[src])
        g = g.copy()
        res = g.resolution

        def stamp(cx, cy, radius, value):
            r0 = int((cy - radius - g.origin[1]) / res)
            r1 = int((cy + radius - g.origin[1]) / res) + 1
            c0 = int((cx - radius - g.origin[0]) / res)
            c1 = int((cx + radius - g.origin[0]) / res) + 1
            for r in range(max(r0, 0), min(r1, g.height)):
                for c in range(max(c0, 0), min(c1, g.width)):
                    x = g.origin[0] + (c + 0.5) * res
                    y = g.origin[1] + (r + 0.5) * res
                    if (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2:
                        g.logodds[r, c] = value

        for src in sorted(self.peer_poses):
            if src == self.knowledge.astronaut_id:
                continue
            px, py, _, _ = self.peer_poses[src]
            stamp(px, py, 2.0 * self.config.rover_radius, g.l_max)
        if self.expected_astronaut is not None:
            stamp(*self.expected_astronaut, self.config.safe_zone, g.l_max)
        stamp(self.pose[0], self.pose[1], self.config.rover_radius, g.l_min)
        return g

    # -- step execution ----------------------------------------------------------

    def _fail_plan(self, reason: str, tick: int, out: TickOutput):
        p = self.active
        p.status = PlanStatus.FAILED
        self.expected_astronaut = None
        self._supervise_deadline = None
        step = p.active_step()
        if step:
            step.status = StepStatus.FAILED
        out.sends.append(("*", ObservationMsg(
            self.agent_id, tick, ObsKind.GOAL_STATUS,
            {"goal_id": p.goal_id, "status": "failed", "reason": reason}), True))
        out.trace.append({"kind": "plan", "goal_id": p.goal_id,
                          "status": "failed", "reason": reason})
        self.active = None
        self._clear_nav()

    def _finish_plan(self, tick: int, out: TickOutput):
        p = self.active
        p.status = PlanStatus.DONE
        out.sends.append(("*", ObservationMsg(
            self.agent_id, tick, ObsKind.GOAL_STATUS,
            {"goal_id": p.goal_id, "status": "done"}), True))
        out.trace.append({"kind": "plan", "goal_id": p.goal_id, "status": "done"})
        self.active = None
        self._clear_nav()

    def _advance_step(self, tick: int, out: TickOutput):
        p = self.active
        step = p.active_step()
        step.status = StepStatus.DONE
        out.trace.append({"kind": "plan_step", "goal_id": p.goal_id,
                          "index": p.current, "step": step.kind.value,
                          "status": "done"})
        p.current += 1
        self._clear_nav()
        self._step_started = tick
        if p.current >= len(p.steps):
            self._finish_plan(tick, out)

    def _clear_nav(self):
        self._path = None
        self._next_replan = 0
        self._nav_fails = 0
        self._capture_frames = []
        self._capture_tag_hits = 0

    def _navigate(self, target, heading, tolerance, tick, out) -> tuple[float, float] | None:
        """Shared navigation: returns a wheel command, or None on arrival."""
        x, y, th = self.pose
        dist = math.hypot(target[0] - x, target[1] - y)
        if dist <= tolerance:
            if heading is not None:
                err = (heading - th + math.pi) % (2 * math.pi) - math.pi
                if abs(err) > self.config.heading_tolerance:
                    return 0.0, self.config.follower.k_heading * err
            return None
        if self._path is None or tick >= self._next_replan:
            try:
                self._path = plan_path(self.planning_grid(), (x, y),
                                       tuple(target), self.config.planner)
                self._nav_fails = 0
                out.trace.append({"kind": "plan_path",
                                  "goal_id": self.active.goal_id,
                                  "n": int(self._path.waypoints.shape[0]),
                                  "length": round(self._path.length, 3),
                                  "min_clearance":
                                      round(self._path.min_clearance, 3)})
            except SimError as exc:
                self._nav_fails += 1
                self._path = None
                if self._nav_fails > self.config.nav_fail_limit:
                    self._fail_plan(f"navigation: {exc}", tick, out)
                    return 0.0, 0.0
            self._next_replan = tick + self.config.replan_period
        if self._path is None:
            return 0.0, 0.0
        v, omega = follow(self._path, self.pose, self.config.follower)
        if dist < 1.0:
            v *= max(0.3, dist)      # slow, but never crawl, on final approach
        return v, omega

    def _drive_sample(self, event, tick, out, container_distance):
        """Feed one event into the sample machine, syncing the plan on abort."""
        p = self.active
        before = p.sample.phase
        try:
            p.sample, p.tool = collect_sample(
                p.sample, p.tool, event, container_distance,
                self.config.transfer_range)
        except ContainerOutOfRange as exc:
            p.sample, p.tool = exc.op, exc.tool   # hold with the scoop kept
            return
        if p.sample.phase is not before:
            out.trace.append({"kind": "sample", "goal_id": p.goal_id,
                              "phase": p.sample.phase.value})
        if p.sample.phase is SamplePhase.ABORTED:
            self._fail_plan(f"sample aborted: {p.sample.cause}", tick, out)

    def _exec_step(self, tracks, events, tick: int, out: TickOutput) -> tuple[float, float]:
        cfg = self.config
        p = self.active
        step = p.active_step()
        if step.status is StepStatus.PENDING:
            step.status = StepStatus.ACTIVE
            self._step_started = tick
            out.trace.append({"kind": "plan_step", "goal_id": p.goal_id,
                              "index": p.current, "step": step.kind.value,
                              "status": "active"})
        k = step.kind

        if k is StepKind.NAVIGATE:
            cmd = self._navigate(step.params["point"], step.params.get("heading"),
                                 step.params.get("tolerance", cfg.goal_tolerance),
                                 tick, out)
            if cmd is None:
                if p.sample is not None and p.sample.phase is SamplePhase.MOVE_TO_SITE:
                    self._drive_sample("success", tick, out,
                                       self._container_distance())
                self._advance_step(tick, out)
                return 0.0, 0.0
            return cmd

        if k is StepKind.WAIT_PEER:
            peer = step.params["peer"]
            pp = self.peer_poses.get(peer)
            if pp is not None:
                d = math.hypot(pp[0] - self.pose[0], pp[1] - self.pose[1])
                if d <= cfg.rendezvous_range:
                    self._advance_step(tick, out)
                    return 0.0, 0.0
            if (tick - self._step_started) * cfg.dt > cfg.wait_timeout:
                self._fail_plan(f"peer {peer} never arrived", tick, out)
            return 0.0, 0.0

        if k is StepKind.TOOLCHANGE:
            if (tick - self._step_started) % cfg.arm_dwell == cfg.arm_dwell - 1:
                event = "success"
                if (self._lock_failures_left > 0 and p.tool is not None
                        and p.tool.phase is ToolPhase.DOCKED):
                    event = "lock_failure"
                    self._lock_failures_left -= 1
                out.trace.append({"kind": "tool", "event": event,
                                  "phase": p.tool.phase.value if p.tool else None})
                self._drive_sample(event, tick, out, self._container_distance())
                if self.active is None:
                    return 0.0, 0.0
                if p.sample.phase is not SamplePhase.NEED_TOOL:
                    self._advance_step(tick, out)
            return 0.0, 0.0

        if k is StepKind.SCOOP:
            if (tick - self._step_started) % cfg.scoop_ticks == cfg.scoop_ticks - 1:
                self._drive_sample("success", tick, out, self._container_distance())
            if self.active is not None and (p.sample.scoop_done
                                            or p.sample.phase is SamplePhase.TRANSFER):
                # the transfer step closes any remaining gap to the container
                self._advance_step(tick, out)
            return 0.0, 0.0

        if k is StepKind.TRANSFER:
            d = self._container_distance()
            if d > 0.9 * cfg.transfer_range:
                # close the gap to the container before handing the sample over
                pp = self.peer_poses.get(step.params["container"])
                if pp is None:
                    return 0.0, 0.0
                gap = np.array([self.pose[0] - pp[0], self.pose[1] - pp[1]])
                n = np.linalg.norm(gap)
                u = gap / n if n > 1e-6 else np.array([1.0, 0.0])
                tgt = [pp[0] + 0.7 * u[0], pp[1] + 0.7 * u[1]]
                cmd = self._navigate(tgt, None, 0.15, tick, out)
                return cmd if cmd is not None else (0.0, 0.0)
            if p.sample.phase is SamplePhase.SCOOP:
                self._drive_sample(None, tick, out, d)   # re-check the range guard
                self._step_started = tick
            elif (tick - self._step_started) % cfg.transfer_ticks == cfg.transfer_ticks - 1:
                self._drive_sample("success", tick, out, d)
                if self.active is not None and p.sample.phase is SamplePhase.STORED:
                    self._advance_step(tick, out)
            return 0.0, 0.0

        if k is StepKind.CAPTURE_PANEL:
            tag = step.params["tag_id"]
            rack = self.knowledge.racks[step.params["rack_id"]]
            f = self.latest_frame
            if f is not None and f.tick == tick:
                self._capture_frames.append(f)
                if any(d.class_label == "april_tag" and d.tag_id == tag
                       for d in f.detections):
                    self._capture_tag_hits += 1
            done = self._capture_tag_hits >= cfg.capture_frames
            timed_out = tick - self._step_started > cfg.capture_dwell
            if done or timed_out:
                try:
                    rec = classify_panel(tag, self._capture_frames, rack)
                except TagNotSeen:
                    rec = PanelRecord(tag, Verdict.SPOTTED, {
                        "frames_observed": len(self._capture_frames),
                        "frames_with_tag": 0, "crack_detections": 0,
                        "corners_visible": [False] * 4, "tag_seen": False,
                    }, tick)
                p.records.append(rec)
                out.trace.append({"kind": "panel_record", **rec.to_json()})
                self._advance_step(tick, out)
            return 0.0, 0.0

        if k is StepKind.PUBLISH_REPORT:
            payload = {"rack_id": step.params["rack_id"],
                       "records": [r.to_json() for r in p.records]}
            out.sends.append(("control", ObservationMsg(
                self.agent_id, tick, ObsKind.PANEL_REPORT, payload), True))
            out.sends.append((self.knowledge.astronaut_id, ObservationMsg(
                self.agent_id, tick, ObsKind.PANEL_REPORT, payload), True))
            self._advance_step(tick, out)
            return 0.0, 0.0

        if k is StepKind.ISSUE_GOAL:
            self._goal_seq += 1
            sub = GoalMsg(f"{p.goal_id}-sub{self._goal_seq}", self.agent_id,
                          step.params["to"], AutonomyLevel.E2,
                          GoalKind(step.params["kind"]),
                          step.params.get("params", {}), p.priority)
            out.sends.append((sub.target, sub, True))
            self._advance_step(tick, out)
            return 0.0, 0.0

        if k is StepKind.SUPERVISE:
            self.expected_astronaut = tuple(step.params["workspace"])
            if self._supervise_deadline is None:
                self._supervise_deadline = tick + int(cfg.supervise_timeout / cfg.dt)
            assigned = step.params["tag_id"]
            memory = int(10.0 / cfg.dt)    # interactions stay relevant 10 s
            for (subj, obj), (seen, obj_class) in sorted(
                    self._live_interactions.items()):
                if tick - seen > memory or obj_class != "solar_panel":
                    continue
                tag = self.track_tags.get(obj)
                if tag is None:
                    continue
                if tag == assigned:
                    out.trace.append({"kind": "supervision", "result": "confirmed",
                                      "tag_id": tag})
                    self.expected_astronaut = None
                    self._supervise_deadline = None
                    self._advance_step(tick, out)
                    return 0.0, 0.0
                if (subj, obj) not in self._notified_wrong:
                    self._notified_wrong.add((subj, obj))
                    out.sends.append((self.knowledge.astronaut_id, ObservationMsg(
                        self.agent_id, tick, ObsKind.EMERGENCY,
                        {"notice": "wrong_target", "expected": assigned,
                         "got": tag}), True))
                    out.trace.append({"kind": "supervision",
                                      "result": "wrong_target",
                                      "expected": assigned, "got": tag})
            if self._supervise_deadline is not None and tick >= self._supervise_deadline:
                out.sends.append((self.knowledge.astronaut_id, ObservationMsg(
                    self.agent_id, tick, ObsKind.EMERGENCY,
                    {"notice": "reminder", "tag_id": assigned}), True))
                out.trace.append({"kind": "supervision", "result": "reminder",
                                  "tag_id": assigned})
                self._supervise_deadline = tick + int(cfg.supervise_timeout / cfg.dt)
            return 0.0, 0.0

        if k is StepKind.STANDBY:
            watched = step.params.get("watch_goal")
            status = self.peer_goal_status.get(watched)
            if status in ("done", "failed"):
                self._advance_step(tick, out)
            elif (tick - self._step_started) * cfg.dt > cfg.wait_timeout:
                self._fail_plan(f"standby on {watched} timed out", tick, out)
            return 0.0, 0.0

        self._fail_plan(f"unknown step kind {k}", tick, out)
        return 0.0, 0.0

    def _container_distance(self) -> float:
        p = self.active
        if p is None or p.sample is None:
            return math.inf
        pp = self.peer_poses.get(p.sample.container_agent)
        if pp is None:
            return math.inf
        return math.hypot(pp[0] - self.pose[0], pp[1] - self.pose[1])

    # -- scheduling ---------------------------------------------------------------

    def _suspend_active(self, out: TickOutput):
        p = self.active
        p.status = PlanStatus.SUSPENDED
        step = p.active_step()
        if step is not None and step.status is StepStatus.ACTIVE:
            step.status = StepStatus.PENDING   # re-enter the step on resume
        self.suspended.append(p)
        out.trace.append({"kind": "plan", "goal_id": p.goal_id,
                          "status": "suspended", "at_step": p.current})
        self.active = None
        self._clear_nav()

    def _schedule(self, tick: int, out: TickOutput):
        if self.active is not None:
            if self.queue and self.queue[0].priority > self.active.priority:
                self._suspend_active(out)
            else:
                return
        if self.queue and (not self.suspended
                           or self.queue[0].priority > self.suspended[-1].priority):
            self.active = self.queue.pop(0)
        elif self.suspended:
            self.active = self.suspended.pop()
            out.trace.append({"kind": "plan", "goal_id": self.active.goal_id,
                              "status": "resumed", "at_step": self.active.current})
        else:
            return
        if self.active.status is not PlanStatus.SUSPENDED:
            out.trace.append({"kind": "plan", "goal_id": self.active.goal_id,
                              "status": "active"})
        self.active.status = PlanStatus.ACTIVE
        self._step_started = tick

    # -- main tick ------------------------------------------------------------------

    def tick(self, tick: int, inbox, tracks=(), events=(), frame=None,
             track_tags=None) -> TickOutput:
        out = TickOutput()
        if frame is not None:
            self.latest_frame = frame
        if track_tags:
            self.track_tags.update(track_tags)

        for src, msg in inbox:
            self._ingest(src, msg, tick, out)

        for ev in events:
            if ev.kind is EventKind.ASTRONAUT_FALL:
                self._escalate("fall", tick, out)
            elif ev.kind is EventKind.INTERACTION:
                # interaction events fire once per episode; remember them so
                # a supervision step that starts mid-episode still sees them
                self._live_interactions[(ev.subject_track, ev.object_track)] = (
                    tick, ev.details.get("object_class"))
        self.monitor_astronaut(tracks, tick, out)
        self._escalate("tick", tick, out)

        self._schedule(tick, out)
        wheel = (0.0, 0.0)
        if self.active is not None:
            wheel = self._exec_step(tracks, events, tick, out)

        # periodic telemetry
        x, y, th = self.pose
        out.sends.append(("*", ObservationMsg(
            self.agent_id, tick, ObsKind.POSE,
            {"x": round(x, 4), "y": round(y, 4), "heading": round(th, 4)}), None))
        out.sends.append(("*", ObservationMsg(
            self.agent_id, tick, ObsKind.HEARTBEAT, {}), None))
        status = {"goal_id": self.active.goal_id, "status": "active",
                  "step": self.active.current} if self.active else \
                 {"goal_id": None, "status": "idle"}
        out.sends.append(("*", ObservationMsg(
            self.agent_id, tick, ObsKind.GOAL_STATUS, status), None))
        if self.active is not None and tick % self.config.digest_period == 0:
            out.sends.append(("*", ObservationMsg(
                self.agent_id, tick, ObsKind.MAP_DIGEST,
                grid_to_digest(self.grid, self.config.planner.p_occ)), None))
        out.wheel = wheel
        return out


# ---------------------------------------------------------------------------
# Scripted astronaut console and mission control
# ---------------------------------------------------------------------------

@dataclass
class AstronautConfig:
    reply: str = "ok"            # ok | help | silent
    reply_delay: float = 5.0     # seconds after an alert
    walk_speed: float = 0.7
    dropouts: list[tuple[int, int]] = field(default_factory=list)
    wrong_workspace: list[float] | None = None   # scripted mistake, if any
    work_duration: float = 20.0


class AstronautPolicy:
    """Stand-in for the suited astronaut's console: walks to assigned
    worksites, heartbeats, and answers alerts per its reply policy."""

    def __init__(self, agent_id: str, config: AstronautConfig, dt: float = 0.1):
        self.agent_id = agent_id
        self.config = config
        self.dt = dt
        self.target: tuple[float, float] | None = None
        self.working_since: int | None = None
        self.assist_goal: GoalMsg | None = None
        self._reply_due: tuple[int, str] | None = None

    def _in_dropout(self, tick: int) -> bool:
        return any(a <= tick < b for a, b in self.config.dropouts)

    def tick(self, tick: int, entity, inbox) -> TickOutput:
        out = TickOutput()
        cfg = self.config
        for src, msg in inbox:
            if isinstance(msg, GoalMsg) and msg.kind is GoalKind.ASSIST_REPAIR:
                self.assist_goal = msg
                ws = cfg.wrong_workspace or msg.params.get("workspace")
                self.target = (ws[0], ws[1]) if ws else None
                self.working_since = None
                out.sends.append((src, ObservationMsg(
                    self.agent_id, tick, ObsKind.GOAL_STATUS,
                    {"goal_id": msg.goal_id, "status": "accepted"}), True))
                out.trace.append({"kind": "goal", "action": "accepted",
                                  "goal_id": msg.goal_id,
                                  "goal_kind": msg.kind.value})
            elif isinstance(msg, ObservationMsg) and msg.kind is ObsKind.EMERGENCY:
                if msg.payload.get("alert") == "confirm_accident" \
                        and cfg.reply != "silent" and self._reply_due is None:
                    answer = "OK" if cfg.reply == "ok" else "HELP"
                    self._reply_due = (tick + int(cfg.reply_delay / self.dt),
                                       answer)
                    self._reply_to = src

        if self._reply_due is not None and tick >= self._reply_due[0] \
                and not self._in_dropout(tick):
            out.sends.append((self._reply_to, ObservationMsg(
                self.agent_id, tick, ObsKind.ASTRONAUT_REPLY,
                {"reply": self._reply_due[1]}), True))
            out.trace.append({"kind": "astronaut_reply",
                              "reply": self._reply_due[1]})
            self._reply_due = None

        # locomotion toward the assigned worksite
        v = omega = 0.0
        if entity.upright and self.target is not None:
            x, y, th = entity.pose
            dx, dy = self.target[0] - x, self.target[1] - y
            dist = math.hypot(dx, dy)
            if dist > 0.2:
                err = (math.atan2(dy, dx) - th + math.pi) % (2 * math.pi) - math.pi
                omega = 2.0 * err
                v = cfg.walk_speed * max(0.0, math.cos(err)) * min(1.0, dist)
            else:
                if self.working_since is None:
                    self.working_since = tick
                elif (tick - self.working_since) * self.dt >= cfg.work_duration \
                        and self.assist_goal is not None:
                    out.sends.append((self.assist_goal.issuer, ObservationMsg(
                        self.agent_id, tick, ObsKind.GOAL_STATUS,
                        {"goal_id": self.assist_goal.goal_id,
                         "status": "done"}), True))
                    self.assist_goal = None

        if not self._in_dropout(tick):
            x, y, th = entity.pose
            out.sends.append(("*", ObservationMsg(
                self.agent_id, tick, ObsKind.POSE,
                {"x": round(x, 4), "y": round(y, 4),
                 "heading": round(th, 4)}), None))
            out.sends.append(("*", ObservationMsg(
                self.agent_id, tick, ObsKind.HEARTBEAT, {}), None))
        out.wheel = (v, omega)
        return out


class ControlAgent:
    """Mission control: issues scheduled goals, reacts to cracked-panel
    reports with repair requests, and records escalations."""

    def __init__(self, agent_id: str = "control",
                 mission: list[tuple[int, GoalMsg]] = (),
                 operator_resets: list[tuple[int, str]] = ()):
        self.agent_id = agent_id
        self.mission = sorted(mission, key=lambda m: m[0])
        self.operator_resets = sorted(operator_resets, key=lambda m: m[0])
        self.notifications: list[dict] = []
        self.goal_results: dict[str, str] = {}
        self._repairs_requested: set[tuple[str, int]] = set()
        self._goal_seq = 0

    def tick(self, tick: int, inbox) -> TickOutput:
        out = TickOutput()
        for issue_tick, goal in self.mission:
            if issue_tick == tick:
                out.sends.append((goal.target, goal, True))
                out.trace.append({"kind": "goal", "action": "issued",
                                  "goal_id": goal.goal_id,
                                  "goal_kind": goal.kind.value,
                                  "target": goal.target})
        for reset_tick, target in self.operator_resets:
            if reset_tick == tick:
                out.sends.append((target, ObservationMsg(
                    self.agent_id, tick, ObsKind.EMERGENCY,
                    {"operator_reset": True}), True))

        for src, msg in inbox:
            if not isinstance(msg, ObservationMsg):
                continue
            if msg.kind is ObsKind.PANEL_REPORT:
                for rec in msg.payload.get("records", []):
                    key = (msg.payload["rack_id"], rec["tag_id"])
                    if rec["verdict"] == "cracked" \
                            and key not in self._repairs_requested:
                        self._repairs_requested.add(key)
                        self._goal_seq += 1
                        goal = GoalMsg(
                            f"control-repair-{self._goal_seq}", self.agent_id,
                            src, AutonomyLevel.E4, GoalKind.REPAIR_PANEL,
                            {"rack_id": key[0], "tag_id": key[1],
                             "record": rec}, priority=8)
                        out.sends.append((src, goal, True))
                        out.trace.append({"kind": "goal", "action": "issued",
                                          "goal_id": goal.goal_id,
                                          "goal_kind": goal.kind.value,
                                          "target": src})
            elif msg.kind is ObsKind.EMERGENCY and "escalation" in msg.payload:
                self.notifications.append({"tick": tick, "from": src,
                                           **msg.payload})
                out.trace.append({"kind": "control_notified",
                                  "reason": msg.payload["escalation"],
                                  "from": src})
            elif msg.kind is ObsKind.GOAL_STATUS:
                status = msg.payload.get("status")
                if status in ("done", "failed", "rejected"):
                    self.goal_results[msg.payload.get("goal_id")] = status
        return out
