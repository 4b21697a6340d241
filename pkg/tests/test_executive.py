"""Executive tests: the E4 gate, decomposition, escalation, suspension and
resume, peer avoidance, the astronaut safety zone, and supervision."""

from __future__ import annotations

import math

import numpy as np
import pytest

from rovercrew.errors import UnknownGoalKind, UnplannableGoal
from rovercrew.executive import (ESCALATION_EVENTS, EscalationPhase,
                                 EscalationState, ExecConfig, Executive,
                                 Plan, PlanStep, StepKind, StepStatus,
                                 TickOutput, WorldKnowledge, boustrophedon,
                                 decompose, escalate)
from rovercrew.messages import (AutonomyLevel, GoalKind, GoalMsg, ObsKind,
                                ObservationMsg)
from rovercrew.navmap import OccupancyGrid
from rovercrew.perception import EventKind, PerceptionEvent, Track, TrackStatus
from rovercrew.tasks import RackSpec

KNOWLEDGE = WorldKnowledge(
    (20.0, 20.0),
    racks={"rack1": RackSpec("rack1", [1, 2],
                             [(5.0, 12.0, -math.pi / 2),
                              (8.0, 12.0, -math.pi / 2)],
                             (2.4, 1.2), 0.6, 2.0)})


def _executive(agent="lamarr", **over):
    cfg = ExecConfig(**over)
    grid = OccupancyGrid(80, 80, 0.25)
    ex = Executive(agent, cfg, KNOWLEDGE, grid)
    ex.pose = (2.0, 2.0, 0.0)
    return ex


def _goal(kind=GoalKind.EXPLORE_REGION, level=AutonomyLevel.E4, gid="g1",
          priority=5, **params):
    defaults = {GoalKind.EXPLORE_REGION: {"rect": [2, 2, 12, 12], "spacing": 2.0},
                GoalKind.INSPECT_RACK: {"rack_id": "rack1"},
                GoalKind.COLLECT_SAMPLE: {"point": [5.0, 5.0]},
                GoalKind.REPAIR_PANEL: {"rack_id": "rack1", "tag_id": 1},
                GoalKind.RETURN_TO_BASE: {},
                GoalKind.NAVIGATE_TO: {"point": [3.0, 3.0]}}
    return GoalMsg(gid, "control", "lamarr", level, kind,
                   {**defaults.get(kind, {}), **params}, priority)


# -- E4 gate -------------------------------------------------------------------

def test_gate_rejects_external_sub_e4_goals():
    ex = _executive()
    out = TickOutput()
    nav = _goal(GoalKind.NAVIGATE_TO, AutonomyLevel.E2, gid="nav1")
    assert ex.accept_goal(nav, 0, out) is None
    status = [m for _, m, _ in out.sends
              if isinstance(m, ObservationMsg) and m.kind is ObsKind.GOAL_STATUS]
    assert status[0].payload["status"] == "rejected"
    assert status[0].payload["reason"] == "AutonomyLevelMismatch"


def test_gate_accepts_e4_and_rejects_every_sub_e4():
    rng = np.random.default_rng(2)
    ex = _executive()
    kinds = [GoalKind.EXPLORE_REGION, GoalKind.INSPECT_RACK,
             GoalKind.COLLECT_SAMPLE, GoalKind.RETURN_TO_BASE,
             GoalKind.NAVIGATE_TO, GoalKind.ASSIST_REPAIR]
    accepted = rejected = 0
    for i in range(200):
        kind = kinds[int(rng.integers(len(kinds)))]
        level = AutonomyLevel(int(rng.integers(1, 5)))
        if kind in (GoalKind.NAVIGATE_TO, GoalKind.ASSIST_REPAIR) \
                and level == AutonomyLevel.E4:
            with pytest.raises(UnknownGoalKind):
                _goal(kind, level, gid=f"g{i}")
            continue
        out = TickOutput()
        plan = ex.accept_goal(_goal(kind, level, gid=f"g{i}"), i, out)
        if level == AutonomyLevel.E4:
            assert plan is not None
            accepted += 1
        else:
            assert plan is None
            rejected += 1
    assert accepted > 20 and rejected > 50


def test_goal_dedup_by_id():
    ex = _executive()
    g = _goal(gid="dup")
    assert ex.accept_goal(g, 0, TickOutput()) is not None
    assert ex.accept_goal(g, 1, TickOutput()) is None
    assert len(ex.queue) == 1


def test_priority_ordering_fifo_within_priority():
    ex = _executive()
    out = TickOutput()
    ex.accept_goal(_goal(gid="p5a", priority=5), 0, out)
    ex.accept_goal(_goal(gid="p7", priority=7), 0, out)
    ex.accept_goal(_goal(gid="p5b", priority=5), 0, out)
    assert [p.goal_id for p in ex.queue] == ["p7", "p5a", "p5b"]


# -- decomposition ---------------------------------------------------------------

def test_boustrophedon_lane_count():
    pts = boustrophedon((0.0, 0.0, 10.0, 10.0), 2.0)
    ys = sorted({y for _, y in pts})
    assert len(ys) == 5           # ceil(10 / 2)
    assert len(pts) == 10


def test_decompose_explore_region():
    plan = decompose(_goal(), KNOWLEDGE)
    assert all(s.kind is StepKind.NAVIGATE for s in plan.steps)
    assert len(plan.steps) == 10


def test_decompose_rejects_region_outside_map():
    with pytest.raises(UnplannableGoal):
        decompose(_goal(rect=[5, 5, 25, 25]), KNOWLEDGE)


def test_decompose_collect_sample_ordering():
    plan = decompose(_goal(GoalKind.COLLECT_SAMPLE), KNOWLEDGE)
    kinds = [s.kind for s in plan.steps]
    assert kinds.index(StepKind.TOOLCHANGE) < kinds.index(StepKind.SCOOP)
    assert kinds.index(StepKind.SCOOP) < kinds.index(StepKind.TRANSFER)
    assert kinds[-1] is StepKind.TRANSFER
    assert plan.sample is not None and plan.tool is not None


def test_decompose_repair_first_step_addresses_astronaut():
    plan = decompose(_goal(GoalKind.REPAIR_PANEL), KNOWLEDGE)
    first = plan.steps[0]
    assert first.kind is StepKind.ISSUE_GOAL
    assert first.params["to"] == KNOWLEDGE.astronaut_id
    assert first.params["kind"] == GoalKind.ASSIST_REPAIR.value


def test_decompose_inspect_orders_by_tag():
    plan = decompose(_goal(GoalKind.INSPECT_RACK), KNOWLEDGE)
    tags = [s.params["tag_id"] for s in plan.steps
            if s.kind is StepKind.CAPTURE_PANEL]
    assert tags == [1, 2]
    assert plan.steps[-1].kind is StepKind.PUBLISH_REPORT


# -- escalation -------------------------------------------------------------------

def test_escalation_three_reference_flows():
    s0 = EscalationState(ack_timeout=30.0)
    # fall -> alert; OK after 10 s -> nominal
    s1, acts = escalate(s0, "fall", 100)
    assert s1.phase is EscalationPhase.ALERT_SENT
    assert acts[0]["action"] == "send_alert"
    s2, acts = escalate(s1, "reply_ok", 200)
    assert s2.phase is EscalationPhase.NOMINAL and acts == []
    # fall -> alert; HELP -> control notified
    s1, _ = escalate(s0, "fall", 100)
    s2, acts = escalate(s1, "reply_help", 150)
    assert s2.phase is EscalationPhase.CONTROL_NOTIFIED
    assert acts[0]["action"] == "notify_control"
    # fall -> alert; 30 s silence -> control notified
    s1, _ = escalate(s0, "fall", 100)
    s2, acts = escalate(s1, "tick", 100 + 299, dt=0.1)
    assert s2.phase is EscalationPhase.ALERT_SENT
    s3, acts = escalate(s1, "tick", 100 + 300, dt=0.1)
    assert s3.phase is EscalationPhase.CONTROL_NOTIFIED
    assert acts[0]["reason"] == "no_answer"


def test_escalation_exhaustive_table_defined_and_absorbing():
    for phase in EscalationPhase:
        for event in ESCALATION_EVENTS:
            state = EscalationState(phase=phase, alert_tick=10)
            out, acts = escalate(state, event, 20)
            assert isinstance(out, EscalationState)
            if phase is EscalationPhase.CONTROL_NOTIFIED \
                    and event != "operator_reset":
                assert out.phase is EscalationPhase.CONTROL_NOTIFIED
    with pytest.raises(ValueError):
        escalate(EscalationState(), "nonsense", 0)


def test_escalation_operator_reset():
    s = EscalationState(phase=EscalationPhase.CONTROL_NOTIFIED)
    out, _ = escalate(s, "operator_reset", 5)
    assert out.phase is EscalationPhase.NOMINAL


def test_deviation_and_comms_lost_trigger_same_machine():
    for event in ("deviation", "comms_lost"):
        out, acts = escalate(EscalationState(), event, 0)
        assert out.phase is EscalationPhase.ALERT_SENT
        assert acts[0]["reason"] == event


# -- suspension round trip ----------------------------------------------------------

def _instant_plan(gid, priority, n_steps=4):
    steps = [PlanStep(StepKind.ISSUE_GOAL,
                      {"to": "control", "kind": GoalKind.ASSIST_REPAIR.value,
                       "params": {"n": i}})
             for i in range(n_steps)]
    return Plan(gid, GoalKind.EXPLORE_REGION, steps, priority)


def test_suspension_resumes_exact_pending_steps():
    """Preempt an instant-step plan at every possible point; the resumed plan
    must execute exactly the steps that were pending, in order."""
    for preempt_after in range(4):
        ex = _executive()
        base = _instant_plan("base", priority=5, n_steps=4)
        base._seq = 1
        ex.queue.append(base)
        done_before = []
        tick = 0
        # run until preempt_after steps of the base plan completed
        while base.current < preempt_after:
            ex.tick(tick, [])
            tick += 1
        hi = _instant_plan("hi", priority=9, n_steps=2)
        hi._seq = 2
        ex.queue.append(hi)
        ex.queue.sort(key=lambda p: (-p.priority, p._seq))
        saved_pending = [s.params["params"]["n"] for s in base.steps
                         if s.status in (StepStatus.PENDING, StepStatus.ACTIVE)]
        for _ in range(40):
            ex.tick(tick, [])
            tick += 1
        assert hi.status.value == "done"
        assert base.status.value == "done"
        executed_after = [s.params["params"]["n"] for s in base.steps]
        assert [n for n in executed_after if n >= preempt_after] == saved_pending


def test_issue_goal_steps_send_messages():
    ex = _executive()
    plan = _instant_plan("p", 5, n_steps=2)
    plan._seq = 1
    ex.queue.append(plan)
    sends = []
    for tick in range(6):
        out = ex.tick(tick, [])
        sends.extend(m for _, m, _ in out.sends if isinstance(m, GoalMsg))
    assert len(sends) == 2
    assert plan.status.value == "done"


# -- peer avoidance and the safety zone ------------------------------------------------

def test_plan_avoids_peer_disc():
    ex = _executive()
    ex.pose = (2.0, 10.0, 0.0)
    peer = (10.0, 10.0)
    ex.peer_poses["mae"] = (*peer, 0.0, 0)
    g = ex.planning_grid()
    from rovercrew.planner import plan as plan_path
    p = plan_path(g, (2.0, 10.0), (18.0, 10.0), ex.config.planner)
    d = min(np.hypot(wp[0] - peer[0], wp[1] - peer[1]) for wp in p.waypoints)
    assert d >= 2 * ex.config.rover_radius


def test_plan_routes_around_safety_zone():
    ex = _executive()
    ex.pose = (2.0, 10.0, 0.0)
    ex.expected_astronaut = (10.0, 10.0)
    g = ex.planning_grid()
    from rovercrew.planner import plan as plan_path
    p = plan_path(g, (2.0, 10.0), (18.0, 10.0), ex.config.planner)
    d = min(np.hypot(wp[0] - 10.0, wp[1] - 10.0) for wp in p.waypoints)
    assert d >= ex.config.safe_zone - g.resolution


def test_map_digest_fusion_covers_union_extent():
    from rovercrew.navmap import grid_to_digest
    ex = _executive()
    other = OccupancyGrid(80, 80, 0.25, (10.0, 0.0), "mae")
    other.logodds[10, 10] = 3.0
    ex._ingest("mae", ObservationMsg("mae", 0, ObsKind.MAP_DIGEST,
                                     grid_to_digest(other)), 0, TickOutput())
    g = ex.planning_grid()
    assert g.origin[0] <= 0.0
    assert g.origin[0] + g.width * g.resolution >= 30.0 - 1e-6


# -- monitoring and supervision ------------------------------------------------------

def _astro_track(pos, tid=1):
    t = Track(tid, "astronaut", np.array([*pos, 0.0, 0.0, 0.0]), np.eye(6),
              status=TrackStatus.CONFIRMED)
    return t


def test_deviation_detected_beyond_radius():
    ex = _executive(deviation_radius=10.0)
    ex.expected_astronaut = (5.0, 5.0)
    out = TickOutput()
    ex.monitor_astronaut([_astro_track((17.0, 5.0, 1.0))], 0, out)
    assert ex.escalation.phase is EscalationPhase.ALERT_SENT
    assert any(e.get("event") == "deviation" for e in out.trace)
    # within the radius nothing happens
    ex2 = _executive(deviation_radius=10.0)
    ex2.expected_astronaut = (5.0, 5.0)
    out2 = TickOutput()
    ex2.monitor_astronaut([_astro_track((8.0, 5.0, 1.0))], 0, out2)
    assert ex2.escalation.phase is EscalationPhase.NOMINAL


def test_comms_lost_on_heartbeat_silence():
    ex = _executive(comms_timeout=15.0)
    ex._heartbeat(KNOWLEDGE.astronaut_id, 0)
    out = TickOutput()
    ex.monitor_astronaut([], 100, out)      # 10 s: fine
    assert ex.escalation.phase is EscalationPhase.NOMINAL
    ex.monitor_astronaut([], 151, out)      # 15.1 s of silence
    assert ex.escalation.phase is EscalationPhase.ALERT_SENT


def test_supervision_wrong_then_right_target():
    ex = _executive()
    plan = decompose(_goal(GoalKind.REPAIR_PANEL, tag_id=1), KNOWLEDGE)
    plan.current = 2                      # jump to the supervise step
    plan._seq = 1
    ex.queue.append(plan)
    ex.track_tags = {30: 2, 31: 1}        # track 30 = wrong panel, 31 = right
    wrong = PerceptionEvent(EventKind.INTERACTION, 9, 30, 5,
                            {"object_class": "solar_panel"})
    out = ex.tick(5, [], events=[wrong])
    notices = [m.payload for _, m, _ in out.sends
               if isinstance(m, ObservationMsg) and m.kind is ObsKind.EMERGENCY]
    assert any(n.get("notice") == "wrong_target" and n["got"] == 2
               for n in notices)
    assert plan.status.value == "active"
    right = PerceptionEvent(EventKind.INTERACTION, 9, 31, 6,
                            {"object_class": "solar_panel"})
    ex.tick(6, [], events=[right])
    assert plan.status.value == "done"


def test_supervision_reminder_after_timeout():
    ex = _executive(supervise_timeout=2.0)
    plan = decompose(_goal(GoalKind.REPAIR_PANEL, tag_id=1), KNOWLEDGE)
    plan.current = 2
    plan._seq = 1
    ex.queue.append(plan)
    reminders = []
    for tick in range(25):
        out = ex.tick(tick, [])
        reminders += [m.payload for _, m, _ in out.sends
                      if isinstance(m, ObservationMsg)
                      and m.kind is ObsKind.EMERGENCY
                      and m.payload.get("notice") == "reminder"]
    assert len(reminders) >= 1


def test_fall_event_drives_escalation_and_alert():
    ex = _executive()
    fall = PerceptionEvent(EventKind.ASTRONAUT_FALL, 3, None, 7, {})
    out = ex.tick(7, [], events=[fall])
    assert ex.escalation.phase is EscalationPhase.ALERT_SENT
    alerts = [m for dst, m, _ in out.sends
              if isinstance(m, ObservationMsg) and m.kind is ObsKind.EMERGENCY
              and m.payload.get("alert") == "confirm_accident"]
    assert len(alerts) == 1
