"""Multi-agent wire currency: goals down, observations up and sideways.

Every message serializes to a single JSON object; the bus trace is a
JSON-lines file of these.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

from .errors import UnknownGoalKind


class AutonomyLevel(IntEnum):
    E1 = 1
    E2 = 2
    E3 = 3
    E4 = 4


class GoalKind(str, Enum):
    EXPLORE_REGION = "explore_region"
    INSPECT_RACK = "inspect_rack"
    COLLECT_SAMPLE = "collect_sample"
    REPAIR_PANEL = "repair_panel"
    RETURN_TO_BASE = "return_to_base"
    NAVIGATE_TO = "navigate_to"      # internal E2-equivalent subgoal
    ASSIST_REPAIR = "assist_repair"  # addressed to the astronaut console


# the only kinds acceptable as external E4 telecommands
E4_KINDS = frozenset({
    GoalKind.EXPLORE_REGION, GoalKind.INSPECT_RACK, GoalKind.COLLECT_SAMPLE,
    GoalKind.REPAIR_PANEL, GoalKind.RETURN_TO_BASE,
})


class ObsKind(str, Enum):
    POSE = "pose"
    MAP_DIGEST = "map_digest"
    DETECTION = "detection"
    INTERESTING_ZONE = "interesting_zone"
    PANEL_REPORT = "panel_report"
    EMERGENCY = "emergency"
    GOAL_STATUS = "goal_status"
    HEARTBEAT = "heartbeat"
    ASTRONAUT_REPLY = "astronaut_reply"


# periodic telemetry rides best-effort; everything else is retransmitted.
# goal-status transitions (accept/done/failed) are sent with an explicit
# reliable flag; the per-tick status snapshot is telemetry.
UNRELIABLE_KINDS = frozenset({ObsKind.POSE, ObsKind.HEARTBEAT,
                              ObsKind.MAP_DIGEST, ObsKind.DETECTION,
                              ObsKind.GOAL_STATUS})

ASTRONAUT_REPLIES = ("OK", "HELP")


@dataclass
class GoalMsg:
    goal_id: str
    issuer: str
    target: str
    level: AutonomyLevel
    kind: GoalKind
    params: dict = field(default_factory=dict)
    priority: int = 0

    def __post_init__(self):
        if self.level == AutonomyLevel.E4 and self.kind not in E4_KINDS:
            raise UnknownGoalKind(
                f"{self.kind.value} is not an E4 goal kind")

    def to_json(self) -> dict:
        return {"type": "goal", "goal_id": self.goal_id, "issuer": self.issuer,
                "target": self.target, "level": int(self.level),
                "kind": self.kind.value, "params": self.params,
                "priority": self.priority}


@dataclass
class ObservationMsg:
    source: str
    tick: int
    kind: ObsKind
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind is ObsKind.ASTRONAUT_REPLY:
            if self.payload.get("reply") not in ASTRONAUT_REPLIES:
                raise ValueError("astronaut reply must be OK or HELP")

    def to_json(self) -> dict:
        return {"type": "observation", "source": self.source, "tick": self.tick,
                "kind": self.kind.value, "payload": self.payload}


def message_from_json(obj: dict) -> GoalMsg | ObservationMsg:
    if obj.get("type") == "goal":
        return GoalMsg(obj["goal_id"], obj["issuer"], obj["target"],
                       AutonomyLevel(obj["level"]), GoalKind(obj["kind"]),
                       obj.get("params", {}), obj.get("priority", 0))
    if obj.get("type") == "observation":
        return ObservationMsg(obj["source"], obj["tick"],
                              ObsKind(obj["kind"]), obj.get("payload", {}))
    raise ValueError(f"unknown message type {obj.get('type')!r}")
