"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Tolerances are fixed here, not tuned at run time.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import deque

import numpy as np

from rovercrew.codec import decode_mask, encode_mask
from rovercrew.errors import (DescentStalled, GoalBlocked, IllegalTransition,
                              LockFailedPermanently, StartUnreachable)
from rovercrew.executive import (ESCALATION_EVENTS, EscalationPhase,
                                 EscalationState, escalate)
from rovercrew.geometry import SE2
from rovercrew.navmap import OccupancyGrid, fuse_maps, mask_depth, SegClass
from rovercrew.perception import (EmergencyConfig, GRAVITY_PRESETS,
                                  LocatedDetection, Track, Tracker,
                                  TrackerConfig, TrackStatus)
from rovercrew.planner import (PlannerConfig, arrival_field, distance_field,
                               extract_path, fast_march, plan, velocity_map,
                               _bilinear)
from rovercrew.scenario import builtin_scenario_path, load_scenario
from rovercrew.simulation import Simulation
from rovercrew.world import RawDetection

from oracles import astar_shortest, random_obstacle_grid, relax_eikonal
from test_events import simulate_fall_track, _run_fall_detector


def _report(n: int, ok: bool, detail: str):
    print(f"ACCEPTANCE {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


def test_criterion_01_eikonal_oracle_equivalence():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(50):
        size = int(rng.integers(8, 33))
        speed = rng.uniform(0.2, 1.0, (size, size))
        speed[rng.random((size, size)) < 0.08] = 0.0
        r, c = int(rng.integers(size)), int(rng.integers(size))
        speed[r, c] = 1.0
        fmm = fast_march(speed, [(r, c)], 0.5)
        ref = relax_eikonal(speed, [(r, c)], 0.5)
        both = np.isfinite(fmm) & np.isfinite(ref)
        assert np.array_equal(np.isfinite(fmm), np.isfinite(ref))
        if both.any():
            worst = max(worst, float(np.max(np.abs(fmm[both] - ref[both]))))
    elapsed = time.perf_counter() - t0
    _report(1, worst < 1e-9 and elapsed < 5.0,
            f"50 grids, max |narrow-band - relaxation| = {worst:.2e}, "
            f"{elapsed:.2f} s")


def test_criterion_02_fm2_safety_and_corridor():
    rng = np.random.default_rng(202)
    cfg = PlannerConfig(d_sat=1.0)
    fm2_clear, astar_clear = [], []
    planned = 0
    for i in range(200):
        g = random_obstacle_grid(rng, 30, n_blobs=int(rng.integers(3, 8)))
        occ = g.occupied_mask(cfg.p_occ)
        start, goal = (0.6, 0.6), (6.9, 6.9)
        try:
            dist = distance_field(g, cfg.p_occ)
            vmap = velocity_map(dist, g, cfg)
            af = arrival_field(vmap, goal, cfg)
            path = extract_path(af, start, cfg.step_frac * g.resolution)
        except (GoalBlocked, StartUnreachable, DescentStalled):
            continue
        planned += 1
        # strictly decreasing arrival time
        tf = np.where(np.isfinite(af.times), af.times, 1e9)
        vals = [_bilinear(tf, af.origin, g.resolution, x, y)
                for x, y in path.waypoints]
        assert all(b < a + 1e-12 for a, b in zip(vals, vals[1:])), \
            f"map {i}: arrival time not monotone"
        # never in an occupied cell
        for wp in path.waypoints:
            r, c = g.cell_of(wp[0], wp[1])
            assert not occ[r, c], f"map {i}: waypoint in occupied cell"
        fm2_clear.append(min(
            _bilinear(np.where(np.isfinite(dist), dist, 1e9), g.origin,
                      g.resolution, x, y) for x, y in path.waypoints))
        cells = astar_shortest(occ, g.cell_of(*start), g.cell_of(*goal))
        if cells is not None:
            astar_clear.append(min(dist[r, c] for r, c in cells))
    mean_fm2 = float(np.mean(fm2_clear))
    mean_astar = float(np.mean(astar_clear))

    # corridor of width 3 * d_sat: centerline deviation within one cell
    res, d_sat = 0.25, 0.75
    g = OccupancyGrid(60, 24, res)
    wc = int(3 * d_sat / res)
    c0 = 12 - wc // 2
    g.logodds[:c0 - 1, :] = g.l_max
    g.logodds[c0 + wc:, :] = g.l_max
    cy = (c0 + wc / 2.0) * res
    p = plan(g, (1.0, cy), (14.0, cy), PlannerConfig(d_sat=d_sat))
    dev = max(abs(wp[1] - cy) for wp in p.waypoints if 2.0 < wp[0] < 13.0)
    ok = planned >= 100 and mean_fm2 >= mean_astar and dev <= res
    _report(2, ok,
            f"{planned}/200 maps planned, mean clearance FM2 {mean_fm2:.3f} "
            f">= A* {mean_astar:.3f}, corridor deviation {dev:.3f} m "
            f"<= {res} m")


def _ldet(label, x, y, z):
    return LocatedDetection(RawDetection(label, (10.0, 10.0, 8.0, 8.0), 1.0),
                            np.array([x, y, z]), float(np.hypot(x, y)))


def test_criterion_03_tracker_cap_id_stability_spd():
    # 60-track cap with 61 persistent objects
    tr = Tracker(TrackerConfig(max_confirmed=60, gate_distance=0.4))
    dets61 = [_ldet("rock", 5.0 * i, 0.0, 0.0) for i in range(61)]
    cap_ok = True
    for k in range(8):
        tracks = tr.step(dets61, k)
        cap_ok &= sum(t.status is TrackStatus.CONFIRMED for t in tracks) <= 60
    cap_final = sum(t.status is TrackStatus.CONFIRMED for t in tracks)

    # single noisy linear target keeps its id
    rng = np.random.default_rng(303)
    tr2 = Tracker(TrackerConfig(dt=0.1))
    ids = set()
    for k in range(50):
        d = _ldet("astronaut", 0.03 * k + rng.normal(0, 0.05),
                  rng.normal(0, 0.05), 1.0 + rng.normal(0, 0.05))
        for t in tr2.step([d], k):
            ids.add(t.id)
    single_id = ids == {1}

    # 1e4 random frames: ids strictly increase, covariance SPD throughout
    tr3 = Tracker(TrackerConfig(delete_misses=3, gate_distance=1.0))
    max_id = 0
    monotone = True
    spd = True
    known: set[int] = set()
    for k in range(10_000):
        dets = [_ldet("rock", float(rng.uniform(0, 30)),
                      float(rng.uniform(0, 30)), 0.0)
                for _ in range(int(rng.integers(0, 4)))]
        for t in tr3.step(dets, k):
            if t.id not in known:
                monotone &= t.id > max_id
                known.add(t.id)
                max_id = t.id
            if k % 10 == 0:
                s = t.covariance
                spd &= bool(np.allclose(s, s.T, atol=1e-9)
                            and np.min(np.linalg.eigvalsh(s)) > 0)
    ok = cap_ok and cap_final == 60 and single_id and monotone and spd
    _report(3, ok,
            f"cap<=60 {cap_ok} (final {cap_final}), single-id {single_id}, "
            f"{max_id} ids monotone {monotone}, SPD {spd}")


def test_criterion_04_fall_detection_gravity_family():
    results = {}
    for name, g in GRAVITY_PRESETS.items():
        cfg = EmergencyConfig(g=g, dt=0.05)
        fired = _run_fall_detector(simulate_fall_track(g, dt=0.05), cfg)
        results[name] = len(fired)
    windows = {g: EmergencyConfig(g=g).fall_window()
               for g in GRAVITY_PRESETS.values()}
    # windows scale as 1/sqrt(g): w * sqrt(g) constant
    scaled = [w * math.sqrt(g) for g, w in windows.items()]
    scaling_ok = max(scaled) - min(scaled) < 1e-9

    crouch_cfg = EmergencyConfig(dt=0.05)
    w = crouch_cfg.fall_window()
    t = Track(1, "astronaut", np.zeros(6), np.eye(6),
              bbox_history=deque(maxlen=8192), pos_history=deque(maxlen=8192))
    n = int(10.0 * w / 0.05)
    for k in range(n):
        p = k / (n - 1)
        t.bbox_history.append((k, 10.0, 10.0, 8.0 * (0.4 + 1.8 * p), 8.0))
        t.pos_history.append((k, 0.0, 0.0, 1.0 - 0.9 * p))
    crouch_fires = len(_run_fall_detector(t, crouch_cfg))

    ok = all(v == 1 for v in results.values()) and scaling_ok \
        and crouch_fires == 0
    _report(4, ok,
            f"fires per fall {results}, window*sqrt(g) spread "
            f"{max(scaled) - min(scaled):.2e}, crouch fires {crouch_fires}")


def test_criterion_05_masking_efficacy():
    from rovercrew.geometry import CameraIntrinsics, CameraPose, pixel_dirs_world
    from rovercrew.navmap import integrate_depth

    intr = CameraIntrinsics.from_fov(64, 48, 90.0)
    pose = CameraPose(4.0, 1.0, 1.0, math.pi / 2)
    rng = np.random.default_rng(505)
    dirs = pixel_dirs_world(intr, pose)
    with np.errstate(divide="ignore"):
        t_ground = np.where(dirs[..., 2] < -1e-9, pose.z / -dirs[..., 2], np.inf)
    depth = np.minimum(t_ground, 8.0)
    speckle = rng.random(depth.shape) < 0.05
    depth = np.where(speckle, depth * rng.uniform(0.3, 0.7, depth.shape), depth)
    depth[~np.isfinite(t_ground)] = np.inf
    seg = np.ones(depth.shape, dtype=np.uint8)

    grid = OccupancyGrid(32, 32, 0.25)
    masked_occ = int((integrate_depth(grid, mask_depth(depth, seg), intr, pose,
                                      max_range=8.0).logodds > 0).sum())
    raw_occ = int((integrate_depth(grid, depth, intr, pose,
                                   max_range=8.0).logodds > 0).sum())

    # pixel-wise rules over random images
    rules_ok = True
    for _ in range(50):
        d = rng.uniform(0.5, 10.0, (20, 20))
        s = rng.integers(0, 5, (20, 20)).astype(np.uint8)
        out = mask_depth(d, s)
        free = (s == SegClass.SOIL) | (s == SegClass.LITTLE_ROCK)
        rules_ok &= bool(np.all(np.isinf(out[free]))
                         and np.array_equal(out[~free], d[~free]))
    ok = masked_occ == 0 and raw_occ > 0 and rules_ok
    _report(5, ok,
            f"speckle occupied cells masked {masked_occ} vs bypassed "
            f"{raw_occ}, pixel rules {rules_ok}")


def test_criterion_06_codec_identity_and_size():
    rng = np.random.default_rng(606)
    all_ok = True
    for _ in range(1000):
        h = int(rng.integers(1, 48))
        w = int(rng.integers(1, 48))
        mask = rng.integers(0, 5, (h, w)).astype(np.uint8)
        all_ok &= bool(np.array_equal(decode_mask(encode_mask(mask)), mask))
    uniform = encode_mask(np.ones((64, 64), dtype=np.uint8))
    size_ok = len(uniform.payload) == 3 and len(uniform.to_bytes()) == 11
    _report(6, all_ok and size_ok,
            f"1000 round trips {all_ok}, uniform 64x64 payload "
            f"{len(uniform.payload)} B + 8 B header")


def test_criterion_07_map_fusion_identities():
    rng = np.random.default_rng(707)
    a = OccupancyGrid(14, 11, 0.5)
    a.logodds = rng.uniform(-4, 4, (11, 14))
    empty = OccupancyGrid(14, 11, 0.5)
    ident = np.array_equal(fuse_maps(a, empty).logodds, a.logodds)
    comm = np.array_equal(fuse_maps(a, empty).logodds,
                          fuse_maps(empty, a).logodds)
    b = OccupancyGrid(14, 11, 0.5)
    b.logodds = rng.uniform(-4, 4, (11, 14))
    comm &= np.array_equal(fuse_maps(a, b).logodds, fuse_maps(b, a).logodds)
    k = 4
    shifted = OccupancyGrid(14, 11, 0.5, (k * 0.5, 0.0),
                            logodds=a.logodds.copy())
    t = SE2(-k * 0.5, 0.0, 0.0)
    shift_ok = np.array_equal(fuse_maps(a, shifted, t).logodds,
                              fuse_maps(a, a).logodds)
    _report(7, ident and comm and shift_ok,
            f"additive identity {ident}, commutative {comm}, "
            f"shifted copy == self-fusion {shift_ok}")


def test_criterion_08_inspection_verdicts():
    from test_tasks import (RACK, TeleportRover, _frames, _panel_world,
                            _rack4_world)
    from rovercrew.tasks import Verdict, classify_panel, inspect_rack

    w, rack = _rack4_world(cracked_tag=3)
    records = inspect_rack(rack, TeleportRover(w))
    verdicts = [r.verdict for r in records]
    counts_ok = (verdicts.count(Verdict.CRACKED) == 1
                 and records[2].verdict is Verdict.CRACKED
                 and all(v in (Verdict.GOOD, Verdict.SPOTTED)
                         for i, v in enumerate(verdicts) if i != 2)
                 and len(records) == 4)

    off = classify_panel(1, _frames(_panel_world(),
                                    heading_offset=math.radians(15)), RACK)
    off_ok = off.verdict is Verdict.SPOTTED

    # monotonicity across enumerated evidence sets
    mono_ok = True
    for offset, damage in itertools.product((0.0, math.radians(15)),
                                            ("none", "crack")):
        frames = _frames(_panel_world(damage=damage), heading_offset=offset)
        before = classify_panel(1, frames, RACK).verdict
        tag_det = next(d for f in frames for d in f.detections
                       if d.class_label == "april_tag")
        frames[0].detections.append(RawDetection("crack", tag_det.bbox, 0.9))
        after = classify_panel(1, frames, RACK).verdict
        mono_ok &= after is Verdict.CRACKED
        mono_ok &= not (before is Verdict.CRACKED and after is not Verdict.CRACKED)
    ok = counts_ok and off_ok and mono_ok
    _report(8, ok,
            f"rack of 4 -> {[v.value for v in verdicts]}, off-center "
            f"{off.verdict.value}, monotonicity {mono_ok}")


def test_criterion_09_executive_gate_and_escalation():
    from rovercrew.executive import ExecConfig, Executive, TickOutput, WorldKnowledge
    from rovercrew.messages import AutonomyLevel, GoalKind, GoalMsg

    ex = Executive("lamarr", ExecConfig(),
                   WorldKnowledge((20.0, 20.0)), OccupancyGrid(10, 10, 0.25))
    rng = np.random.default_rng(909)
    rejected = total = 0
    for i in range(300):
        level = AutonomyLevel(int(rng.integers(1, 4)))      # E1..E3 only
        goal = GoalMsg(f"sub{i}", "control", "lamarr", level,
                       GoalKind.RETURN_TO_BASE, {}, 1)
        total += 1
        if ex.accept_goal(goal, i, TickOutput()) is None:
            rejected += 1
    gate_ok = rejected == total

    table_ok = True
    for phase in EscalationPhase:
        for event in ESCALATION_EVENTS:
            out, _ = escalate(EscalationState(phase=phase, alert_tick=0),
                              event, 10)
            table_ok &= isinstance(out, EscalationState)
            if phase is EscalationPhase.CONTROL_NOTIFIED \
                    and event != "operator_reset":
                table_ok &= out.phase is EscalationPhase.CONTROL_NOTIFIED

    # the three reference flows, reproduced end to end in scenario 2
    finals = {}
    for policy in ("silent", "help", "ok"):
        sc = load_scenario(builtin_scenario_path("scenario2"))
        sc.doc["astronaut"]["reply"] = policy
        res = Simulation(sc).run()
        r = res.report
        finals[policy] = (r.escalation_final, r.falls_detected,
                          r.control_notified, r.emergencies_resolved)
    flows_ok = (finals["silent"][0] == "control_notified"
                and finals["help"][0] == "control_notified"
                and finals["ok"][0] == "nominal"
                and all(v[1] >= 1 for v in finals.values())
                and finals["ok"][3] >= 1)
    ok = gate_ok and table_ok and flows_ok
    _report(9, ok,
            f"gate rejected {rejected}/{total}, table defined {table_ok}, "
            f"scenario-2 flows {finals}")


def test_criterion_10_scenario1_end_to_end():
    sc = load_scenario(builtin_scenario_path("scenario1"))
    t0 = time.perf_counter()
    res0 = Simulation(sc).run()
    wall = time.perf_counter() - t0
    bytes_a = res0.trace_bytes()
    bytes_b = Simulation(sc).run().trace_bytes()
    deterministic = bytes_a == bytes_b

    def flow_ok(res):
        r = res.report
        suspended = {}
        resumed = {}
        for ev in res.trace:
            if ev["kind"] != "plan":
                continue
            p = ev["payload"]
            if p.get("status") == "suspended":
                suspended[p["goal_id"]] = p["at_step"]
            if p.get("status") == "resumed":
                resumed[p["goal_id"]] = p["at_step"]
        resume_exact = (suspended and suspended == {
            k: resumed.get(k) for k in suspended})
        explore_done = sum(
            1 for ev in res.trace if ev["kind"] == "plan"
            and ev["payload"].get("status") == "done"
            and ev["payload"]["goal_id"].startswith("m-explore")) == 2
        separated = (r.min_rover_separation is not None
                     and r.min_rover_separation >= 2 * 0.25)
        return r.samples_stored == 1 and resume_exact and explore_done \
            and separated

    clean_ok = flow_ok(res0)
    res_loss = Simulation(sc, drop_p=0.2).run()
    loss_ok = flow_ok(res_loss)
    ok = clean_ok and loss_ok and deterministic and wall < 60.0
    _report(10, ok,
            f"0% loss {clean_ok}, 20% loss {loss_ok}, deterministic "
            f"{deterministic}, wall {wall:.1f} s < 60 s")


def test_criterion_11_state_machines_exhaustive():
    from rovercrew.tasks import (MAX_RETRIES_DEFAULT, SampleOp, SamplePhase,
                                 Tool, ToolPhase, ToolState, collect_sample,
                                 toolchange_step)
    from test_tasks import _oracle_terminal

    tool_ok = True
    combos = 0
    for phase, tool, mode, retries in itertools.product(
            ToolPhase, (Tool.NONE, Tool.SHOVEL),
            (None, "assemble", "disassemble"), (0, MAX_RETRIES_DEFAULT)):
        for action in ("assemble", "disassemble"):
            for event in ("success", "lock_failure"):
                combos += 1
                try:
                    out = toolchange_step(
                        ToolState(tool, phase, retries, mode), action, event)
                    tool_ok &= isinstance(out, ToolState)
                except (IllegalTransition, LockFailedPermanently):
                    pass

    esc_ok = all(isinstance(escalate(EscalationState(phase=p, alert_tick=0),
                                     e, 5)[0], EscalationState)
                 for p in EscalationPhase for e in ESCALATION_EVENTS)

    alphabet = ("success", "lock_failure", "noise")
    checked = 0
    match = True

    def dfs(op, tool, prefix):
        nonlocal checked, match
        match &= op.phase.value == _oracle_terminal(prefix)
        checked += 1
        if len(prefix) == 12 or op.phase in (SamplePhase.STORED,
                                             SamplePhase.ABORTED):
            return
        for ev in alphabet:
            if ev == "noise":
                dfs(op, tool, prefix + (ev,))
            else:
                o2, t2 = collect_sample(op, tool, ev, container_distance=0.0)
                dfs(o2, t2, prefix + (ev,))

    dfs(SampleOp((0.0, 0.0), "mae"), ToolState(), ())
    ok = tool_ok and esc_ok and match and checked > 100_000
    _report(11, ok,
            f"tool-changer {combos} combos defined {tool_ok}, escalation "
            f"table {esc_ok}, sampling oracle match over {checked} "
            f"length<=12 strings {match}")
