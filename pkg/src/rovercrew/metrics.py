"""Mission report: a pure fold over the trace, recomputable offline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorruptTrace


@dataclass
class MissionReport:
    goals_issued: int = 0
    goals_completed: int = 0
    goals_failed: int = 0
    goals_rejected: int = 0
    samples_stored: int = 0
    panel_verdicts: dict = field(default_factory=dict)   # tag id (str) -> verdict
    emergencies_raised: int = 0
    emergencies_resolved: int = 0
    control_notified: int = 0
    escalation_final: str = "nominal"
    interactions: int = 0
    falls_detected: int = 0
    hazards: int = 0
    map_coverage: float = 0.0
    min_clearance: float | None = None
    mean_clearance: float | None = None
    min_rover_separation: float | None = None
    messages_sent: int = 0
    sim_duration_s: float = 0.0
    wall_clock_s: float = 0.0

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["panel_verdicts"] = dict(self.panel_verdicts)
        return d


def metrics(trace: list[dict]) -> MissionReport:
    """Fold trace events into a MissionReport.

    Raises CorruptTrace on malformed events or non-monotone ticks.
    """
    r = MissionReport()
    issued: set[str] = set()
    clearances: list[float] = []
    coverage: dict[str, float] = {}
    last_tick = 0
    dt = 0.1
    for ev in trace:
        try:
            tick = ev["tick"]
            kind = ev["kind"]
            payload = ev.get("payload", {})
            source = ev["source"]
        except (KeyError, TypeError) as exc:
            raise CorruptTrace(f"malformed event {ev!r}: {exc}") from None
        if tick < last_tick:
            raise CorruptTrace(f"tick went backwards at {ev!r}")
        last_tick = tick

        if kind == "start":
            dt = payload.get("dt", dt)
        elif kind == "end":
            dt = payload.get("dt", dt)
            r.sim_duration_s = round(payload.get("ticks", last_tick) * dt, 3)
            r.min_rover_separation = payload.get("min_rover_separation")
        elif kind == "goal":
            action = payload.get("action")
            gid = payload.get("goal_id")
            if action in ("issued", "accepted") and gid not in issued:
                issued.add(gid)
            if action == "rejected":
                r.goals_rejected += 1
        elif kind == "plan":
            if payload.get("status") == "done":
                r.goals_completed += 1
            elif payload.get("status") == "failed":
                r.goals_failed += 1
        elif kind == "sample":
            if payload.get("phase") == "stored":
                r.samples_stored += 1
        elif kind == "panel_record":
            r.panel_verdicts[str(payload["tag_id"])] = payload["verdict"]
        elif kind == "escalation":
            if payload.get("to") == "alert_sent":
                r.emergencies_raised += 1
            if payload.get("to") == "nominal":
                r.emergencies_resolved += 1
            if payload.get("to") == "control_notified":
                r.control_notified += 1
            r.escalation_final = payload.get("to", r.escalation_final)
        elif kind == "perception_event":
            evt = payload.get("event")
            if evt == "interaction":
                r.interactions += 1
            elif evt == "astronaut_fall":
                r.falls_detected += 1
            elif evt == "hazard_proximity":
                r.hazards += 1
        elif kind == "plan_path":
            c = payload.get("min_clearance")
            if c is not None:
                clearances.append(float(c))
        elif kind == "coverage":
            coverage[source] = float(payload.get("coverage", 0.0))
        elif kind == "message":
            r.messages_sent += 1
    r.goals_issued = len(issued)
    if coverage:
        r.map_coverage = round(max(coverage.values()), 4)
    if clearances:
        r.min_clearance = round(min(clearances), 3)
        r.mean_clearance = round(sum(clearances) / len(clearances), 3)
    if r.sim_duration_s == 0.0:
        r.sim_duration_s = round(last_tick * dt, 3)
    return r


def load_trace(path: str | Path) -> list[dict]:
    events = []
    with open(path) as f:
        for i, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorruptTrace(f"{path}:{i}: {exc}") from None
    return events
