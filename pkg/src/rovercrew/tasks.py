"""Solar-panel rack inspection and the tool-changer / sample-collection
state machines.

Panel verdicts: a panel whose four projected corners all fit in at least
one frame (with margin) and that shows no crack evidence is good; a panel
never fully in view is spotted; any crack detection overlapping the
visible panel region wins over both. Cracked > Spotted > Good.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import (ContainerOutOfRange, IllegalTransition,
                     LockFailedPermanently, RackUnreachable, SimError, TagNotSeen)
from .geometry import project


class Verdict(str, Enum):
    GOOD = "good"
    SPOTTED = "spotted"
    CRACKED = "cracked"


@dataclass
class RackSpec:
    rack_id: str
    tag_ids: list[int]
    panel_poses: list[tuple[float, float, float]]   # x, y, facing heading
    panel_size: tuple[float, float] = (2.0, 1.2)    # width, height, meters
    panel_center_height: float = 1.0
    standoff: float = 1.5

    def __post_init__(self):
        if len(self.tag_ids) != len(self.panel_poses):
            raise ValueError("one pose per tag id required")
        if len(set(self.tag_ids)) != len(self.tag_ids):
            raise ValueError("tag ids must be unique")

    @property
    def panel_count(self) -> int:
        return len(self.tag_ids)

    def panel_corners(self, tag_id: int) -> np.ndarray:
        """World coordinates of the four face corners, shape (4, 3)."""
        i = self.tag_ids.index(tag_id)
        x, y, heading = self.panel_poses[i]
        w, h = self.panel_size
        lateral = np.array([-math.sin(heading), math.cos(heading), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        c = np.array([x, y, self.panel_center_height])
        return np.array([c + sx * (w / 2) * lateral + sy * (h / 2) * up
                         for sx in (-1, 1) for sy in (-1, 1)])

    def standoff_pose(self, tag_id: int) -> tuple[float, float, float]:
        """Rover pose facing the panel from the inspection standoff."""
        i = self.tag_ids.index(tag_id)
        x, y, heading = self.panel_poses[i]
        sx = x + self.standoff * math.cos(heading)
        sy = y + self.standoff * math.sin(heading)
        return sx, sy, heading + math.pi


@dataclass
class PanelRecord:
    tag_id: int
    verdict: Verdict
    evidence: dict = field(default_factory=dict)
    tick: int = 0

    def to_json(self) -> dict:
        return {"tag_id": self.tag_id, "verdict": self.verdict.value,
                "evidence": self.evidence, "tick": self.tick}


def classify_panel(tag_id: int, frames: list, rack: RackSpec,
                   margin_px: float = 5.0) -> PanelRecord:
    """Verdict for one panel from a set of frames.

    Raises TagNotSeen when no frame carries the panel's fiducial detection.
    """
    tag_frames = [f for f in frames
                  if any(d.class_label == "april_tag" and d.tag_id == tag_id
                         for d in f.detections)]
    if not tag_frames:
        raise TagNotSeen(f"tag {tag_id} not detected in any frame")

    corners = rack.panel_corners(tag_id)
    fully_visible = False
    crack_count = 0
    best_flags = [False, False, False, False]
    for f in frames:
        pc = f.cam_pose.world_to_camera(corners)
        u, v, z = project(f.intrinsics, pc)
        in_front = z > 0
        flags = [bool(in_front[k]
                      and margin_px <= u[k] < f.intrinsics.width - margin_px
                      and margin_px <= v[k] < f.intrinsics.height - margin_px)
                 for k in range(4)]
        if sum(flags) > sum(best_flags):
            best_flags = flags
        if all(flags):
            fully_visible = True

        # crack evidence: overlap with the projected panel region
        vis = [k for k in range(4) if in_front[k]]
        if not vis:
            continue
        pu0 = max(min(u[k] for k in vis), 0.0)
        pu1 = min(max(u[k] for k in vis), f.intrinsics.width - 1.0)
        pv0 = max(min(v[k] for k in vis), 0.0)
        pv1 = min(max(v[k] for k in vis), f.intrinsics.height - 1.0)
        if pu0 >= pu1 or pv0 >= pv1:
            continue
        for d in f.detections:
            if d.class_label != "crack":
                continue
            cx, cy, bw, bh = d.bbox
            if (cx + bw / 2 > pu0 and cx - bw / 2 < pu1
                    and cy + bh / 2 > pv0 and cy - bh / 2 < pv1):
                crack_count += 1

    if crack_count > 0:
        verdict = Verdict.CRACKED
    elif fully_visible:
        verdict = Verdict.GOOD
    else:
        verdict = Verdict.SPOTTED
    tick = max(f.tick for f in frames) if frames else 0
    return PanelRecord(tag_id, verdict, {
        "frames_observed": len(frames),
        "frames_with_tag": len(tag_frames),
        "crack_detections": crack_count,
        "corners_visible": best_flags,
        "tag_seen": True,
    }, tick)


def inspect_rack(rack: RackSpec, rover, frames_per_panel: int = 3,
                 dwell_limit: int = 10) -> list[PanelRecord]:
    """Visit every standoff pose in tag order and classify each panel.

    rover is any object with goto(x, y, heading) and capture() -> frame;
    goto failures propagate as RackUnreachable. A panel whose tag never
    shows up within the dwell limit is recorded spotted with a flag.
    """
    records = []
    for tag_id in rack.tag_ids:
        pose = rack.standoff_pose(tag_id)
        try:
            rover.goto(*pose)
        except SimError as exc:
            raise RackUnreachable(f"standoff for tag {tag_id}: {exc}") from exc
        frames = []
        tag_hits = 0
        for _ in range(dwell_limit):
            f = rover.capture()
            frames.append(f)
            if any(d.class_label == "april_tag" and d.tag_id == tag_id
                   for d in f.detections):
                tag_hits += 1
            if tag_hits >= frames_per_panel:
                break
        try:
            records.append(classify_panel(tag_id, frames, rack))
        except TagNotSeen:
            records.append(PanelRecord(tag_id, Verdict.SPOTTED, {
                "frames_observed": len(frames),
                "frames_with_tag": 0,
                "crack_detections": 0,
                "corners_visible": [False] * 4,
                "tag_seen": False,
            }, frames[-1].tick if frames else 0))
    return records


# ---------------------------------------------------------------------------
# Tool-changer state machine
# ---------------------------------------------------------------------------

class Tool(str, Enum):
    NONE = "none"
    SHOVEL = "shovel"
    PROBE = "probe"


class ToolPhase(str, Enum):
    STOWED = "stowed"
    APPROACH = "approach"
    DOCKED = "docked"
    LOCKED = "locked"
    VERIFIED = "verified"


_FORWARD = [ToolPhase.STOWED, ToolPhase.APPROACH, ToolPhase.DOCKED,
            ToolPhase.LOCKED, ToolPhase.VERIFIED]

MAX_RETRIES_DEFAULT = 3


@dataclass(frozen=True)
class ToolState:
    tool: Tool = Tool.NONE
    phase: ToolPhase = ToolPhase.STOWED
    retries: int = 0
    mode: str | None = None      # "assemble" | "disassemble" while mid-procedure


def toolchange_step(state: ToolState, action: str, event: str,
                    tool: Tool = Tool.SHOVEL,
                    max_retries: int = MAX_RETRIES_DEFAULT) -> ToolState:
    """Advance the tool-changer by one event.

    action is "assemble" or "disassemble"; events are "success" or
    "lock_failure". Assembling walks stowed -> approach -> docked ->
    locked -> verified; a lock failure falls back to approach and burns a
    retry; exhausting retries raises LockFailedPermanently with the tool
    back stowed. Disassembling runs the sequence in reverse.
    """
    if action not in ("assemble", "disassemble"):
        raise IllegalTransition(f"unknown action {action!r}")
    if event not in ("success", "lock_failure"):
        raise IllegalTransition(f"unknown event {event!r}")

    if state.mode is None:
        if action == "assemble":
            if state.phase is not ToolPhase.STOWED or state.tool is not Tool.NONE:
                raise IllegalTransition(
                    f"assemble requires a stowed empty changer, got {state.phase.value}")
            state = replace(state, mode="assemble", tool=tool, retries=0)
        else:
            if state.phase is not ToolPhase.VERIFIED:
                raise IllegalTransition(
                    f"disassemble requires a verified tool, got {state.phase.value}")
            state = replace(state, mode="disassemble", retries=0)
    elif state.mode != action:
        raise IllegalTransition(
            f"{action} requested while mid-{state.mode}")

    if event == "lock_failure":
        retries = state.retries + 1
        if retries > max_retries:
            # caller recovers the stowed state via toolchange_reset()
            raise LockFailedPermanently(f"lock failed {retries} times")
        fallback = ToolPhase.APPROACH if state.mode == "assemble" else ToolPhase.VERIFIED
        return replace(state, phase=fallback, retries=retries)

    seq = _FORWARD if state.mode == "assemble" else list(reversed(_FORWARD))
    idx = seq.index(state.phase)
    nxt = seq[min(idx + 1, len(seq) - 1)]
    if nxt is ToolPhase.VERIFIED and state.mode == "assemble":
        return replace(state, phase=nxt, mode=None)
    if nxt is ToolPhase.STOWED and state.mode == "disassemble":
        return replace(state, phase=nxt, tool=Tool.NONE, mode=None)
    return replace(state, phase=nxt)


def toolchange(state: ToolState, action: str, events: list[str],
               tool: Tool = Tool.SHOVEL,
               max_retries: int = MAX_RETRIES_DEFAULT) -> ToolState:
    """Fold a whole event sequence through toolchange_step.

    On permanent lock failure the changer resets to stowed; the raised
    error carries that reset state on its .state attribute.
    """
    for ev in events:
        try:
            state = toolchange_step(state, action, ev, tool, max_retries)
        except LockFailedPermanently as exc:
            exc.state = toolchange_reset(state)
            raise
    return state


def toolchange_reset(state: ToolState) -> ToolState:
    """State after a permanent failure: stowed, empty, procedure cleared."""
    return ToolState(Tool.NONE, ToolPhase.STOWED, state.retries + 1, None)


# ---------------------------------------------------------------------------
# Sample-collection state machine
# ---------------------------------------------------------------------------

class SamplePhase(str, Enum):
    NEED_TOOL = "need_tool"
    MOVE_TO_SITE = "move_to_site"
    SCOOP = "scoop"
    TRANSFER = "transfer"
    STORED = "stored"
    ABORTED = "aborted"


@dataclass(frozen=True)
class SampleOp:
    target: tuple[float, float]
    container_agent: str
    phase: SamplePhase = SamplePhase.NEED_TOOL
    scoop_done: bool = False
    cause: str | None = None


TRANSFER_RANGE_DEFAULT = 1.0


def collect_sample(op: SampleOp, tool: ToolState, event: str | None,
                   container_distance: float = 0.0,
                   transfer_range: float = TRANSFER_RANGE_DEFAULT,
                   max_retries: int = MAX_RETRIES_DEFAULT) -> tuple[SampleOp, ToolState]:
    """Advance sample collection by one event.

    Events: "success" advances the active stage ("lock_failure" feeds the
    tool-changer retry path during need_tool); "fail" aborts; None just
    re-evaluates guards (e.g. the container coming into range). Scooping
    requires a verified shovel; transfer requires the container agent
    within range, otherwise the op holds with the scoop completed.
    """
    if op.phase in (SamplePhase.STORED, SamplePhase.ABORTED):
        return op, tool

    if event == "fail":
        return replace(op, phase=SamplePhase.ABORTED,
                       cause=op.phase.value), tool

    if op.phase is SamplePhase.NEED_TOOL:
        if event in ("success", "lock_failure"):
            try:
                tool = toolchange_step(tool, "assemble", event,
                                       Tool.SHOVEL, max_retries)
            except LockFailedPermanently:
                return replace(op, phase=SamplePhase.ABORTED, cause="tool"), \
                    toolchange_reset(tool)
        if tool.phase is ToolPhase.VERIFIED and tool.tool is Tool.SHOVEL:
            op = replace(op, phase=SamplePhase.MOVE_TO_SITE)
        return op, tool

    if op.phase is SamplePhase.MOVE_TO_SITE:
        if event == "success":
            op = replace(op, phase=SamplePhase.SCOOP)
        return op, tool

    if op.phase is SamplePhase.SCOOP:
        if not (tool.tool is Tool.SHOVEL and tool.phase is ToolPhase.VERIFIED):
            raise IllegalTransition("scooping requires a verified shovel")
        if event == "success":
            op = replace(op, scoop_done=True)
        if op.scoop_done:
            if container_distance <= transfer_range:
                op = replace(op, phase=SamplePhase.TRANSFER)
            else:
                # hold after the scoop until the container arrives; the
                # raised error carries the held state on .op / .tool
                exc = ContainerOutOfRange(
                    f"container {op.container_agent} at {container_distance:.2f} m")
                exc.op, exc.tool = op, tool
                raise exc
        return op, tool

    if op.phase is SamplePhase.TRANSFER:
        if container_distance > transfer_range:
            exc = ContainerOutOfRange(
                f"container {op.container_agent} left range mid-transfer")
            exc.op, exc.tool = op, tool
            raise exc
        if event == "success":
            op = replace(op, phase=SamplePhase.STORED)
        return op, tool

    return op, tool
