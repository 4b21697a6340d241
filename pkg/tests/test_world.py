"""Scene simulation and sensor synthesis tests."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from rovercrew.errors import UnknownAgent
from rovercrew.navmap import SegClass
from rovercrew.world import (Entity, EntityKind, Fault, NoiseModel, Terrain,
                             World, export_world, ground_truth_visible,
                             render_frame, step_physics)

ENTITY_CLASSES = {"astronaut", "rover", "rock", "solar_panel"}


def _world(noise=None):
    t = Terrain(60, 60, 0.25)
    w = World(t, noise=noise or NoiseModel.none())
    w.add(Entity("lamarr", EntityKind.ROVER_LAMARR, (2.0, 7.0, 0.0),
                 (0.5, 0.5, 0.5)))
    return w


def test_empty_world_frame():
    w = _world()
    f = render_frame(w, "lamarr", 0)
    assert f.detections == []
    assert np.all(f.seg_mask == int(SegClass.SOIL))
    # above the horizon there is no return
    assert np.isinf(f.depth[0, :]).all()
    # the ground below the horizon is finite inside the terrain
    assert np.isfinite(f.depth[-1, :]).all()


def test_unknown_agent():
    w = _world()
    with pytest.raises(UnknownAgent):
        render_frame(w, "ghost", 0)
    with pytest.raises(UnknownAgent):
        ground_truth_visible(w, "nobody")


def test_centered_astronaut_detection():
    w = _world()
    w.add(Entity("eva", EntityKind.ASTRONAUT, (5.0, 7.0, 0.0)))
    f = render_frame(w, "lamarr", 0)
    astronauts = [d for d in f.detections if d.class_label == "astronaut"]
    assert len(astronauts) == 1
    cx = astronauts[0].bbox[0]
    assert abs(cx - f.intrinsics.cx) <= 1.0


def test_render_deterministic_bit_identical():
    noise = NoiseModel.uniform(0.05, 0.1, 1.0, 0.05, seed=99)
    w = _world(noise)
    w.add(Entity("eva", EntityKind.ASTRONAUT, (5.0, 7.0, 0.0)))
    w.add(Entity("rock", EntityKind.ROCK, (6.0, 8.0, 0.0), (0.8, 0.6, 0.8)))
    f1 = render_frame(w, "lamarr", 7)
    f2 = render_frame(w, "lamarr", 7)
    assert np.array_equal(f1.depth, f2.depth)
    assert np.array_equal(f1.seg_mask, f2.seg_mask)
    assert [d.bbox for d in f1.detections] == [d.bbox for d in f2.detections]
    assert [d.confidence for d in f1.detections] == \
           [d.confidence for d in f2.detections]
    # a different tick draws a different noise stream
    f3 = render_frame(w, "lamarr", 8)
    assert [d.bbox for d in f1.detections] != [d.bbox for d in f3.detections]


def test_noiseless_detections_biject_with_ground_truth():
    w = _world()
    w.add(Entity("eva", EntityKind.ASTRONAUT, (5.0, 7.0, 0.0)))
    w.add(Entity("rock", EntityKind.ROCK, (6.0, 9.0, 0.0), (0.8, 0.6, 0.8)))
    w.add(Entity("panel", EntityKind.SOLAR_PANEL, (7.0, 6.0, math.pi),
                 (2.4, 1.2, 0.1), tag_id=1))
    w.add(Entity("far_rock", EntityKind.ROCK, (55.0 * 0.25, 7.0, 0.0)))
    f = render_frame(w, "lamarr", 0)
    gt = ground_truth_visible(w, "lamarr")
    from rovercrew.world import DETECTION_LABEL
    gt_labels = sorted(DETECTION_LABEL[w.entities[e].kind] for e, _ in gt)
    det_labels = sorted(d.class_label for d in f.detections
                        if d.class_label in ENTITY_CLASSES)
    assert det_labels == gt_labels


def test_frustum_and_range_rules():
    w = _world()
    w.add(Entity("behind", EntityKind.ROCK, (0.5, 7.0, 0.0), (0.8, 0.6, 0.8)))
    just_out = 2.0 + w.camera.max_range + 0.2
    w.add(Entity("too_far", EntityKind.ROCK, (just_out, 7.0, 0.0),
                 (0.8, 0.6, 0.8)))
    ids = [e for e, _ in ground_truth_visible(w, "lamarr")]
    assert "behind" not in ids
    assert "too_far" not in ids


def test_entity_depth_is_euclidean_range():
    w = _world()
    w.add(Entity("rock", EntityKind.ROCK, (6.0, 7.0, 0.0), (0.8, 0.6, 0.8)))
    f = render_frame(w, "lamarr", 0)
    center = w.entities["rock"].center(w.terrain)
    cam = np.array([2.0, 7.0, 1.0])
    expect = float(np.linalg.norm(center - cam))
    # the rock spans the center column; its pixel carries the center range
    rock_px = f.depth[np.asarray(f.seg_mask) == int(SegClass.CLOSE_ROCK)]
    assert rock_px.size > 0
    assert np.allclose(rock_px, expect)


def test_entity_depth_within_four_sigma_under_noise():
    sigma = 0.05
    w = _world(NoiseModel.uniform(0.0, 0.0, 0.0, sigma, seed=3))
    w.add(Entity("rock", EntityKind.ROCK, (6.0, 7.0, 0.0), (0.8, 0.6, 0.8)))
    f = render_frame(w, "lamarr", 0)
    center = w.entities["rock"].center(w.terrain)
    expect = float(np.linalg.norm(center - np.array([2.0, 7.0, 1.0])))
    rock_px = f.depth[np.asarray(f.seg_mask) == int(SegClass.CLOSE_ROCK)]
    assert np.all(np.abs(rock_px - expect) <= 4.0 * sigma)


def test_seg_agrees_with_terrain_rock_map_on_flat_ground():
    t = Terrain(60, 60, 0.25)
    t.rock_map[20:24, 16:20] = 3    # close rock patch
    t.rock_map[10:12, 30:34] = 1    # little rock patch
    w = World(t)
    w.add(Entity("lamarr", EntityKind.ROVER_LAMARR, (2.0, 5.0, 0.2),
                 (0.5, 0.5, 0.5)))
    f = render_frame(w, "lamarr", 0)
    from rovercrew.geometry import pixel_dirs_world
    dirs = pixel_dirs_world(f.intrinsics, f.cam_pose)
    lut = {0: SegClass.SOIL, 1: SegClass.LITTLE_ROCK, 2: SegClass.FAR_ROCK,
           3: SegClass.CLOSE_ROCK}
    checked = 0
    for v in range(0, f.intrinsics.height, 5):
        for u in range(0, f.intrinsics.width, 5):
            if not np.isfinite(f.depth[v, u]):
                continue
            p = np.array([f.cam_pose.x, f.cam_pose.y, f.cam_pose.z]) \
                + dirs[v, u] * f.depth[v, u]
            if not t.contains(p[0], p[1]):
                continue
            r, c = t.cell_of(p[0], p[1])
            assert f.seg_mask[v, u] == int(lut[int(t.rock_map[r, c])])
            checked += 1
    assert checked > 50


def test_unicycle_advance_and_identity():
    w = _world()
    e = w.entities["lamarr"]
    e.cmd_v, e.cmd_omega = 0.5, 0.0
    step_physics(w, 1.0)
    assert e.pose[0] == pytest.approx(2.5)
    assert e.pose[1] == pytest.approx(7.0)
    e.cmd_v = 0.0
    before = e.pose
    step_physics(w, 1.0)
    assert e.pose == before


def test_rotation_integrates():
    w = _world()
    e = w.entities["lamarr"]
    e.cmd_v, e.cmd_omega = 0.0, 0.5
    step_physics(w, 1.0)
    assert e.pose[2] == pytest.approx(0.5)


def test_pose_clamped_to_terrain():
    w = _world()
    e = w.entities["lamarr"]
    e.pose = (0.2, 7.0, math.pi)   # heading straight at the boundary
    e.cmd_v = 1.0
    for _ in range(20):
        step_physics(w, 1.0)
    assert 0.0 <= e.pose[0] < 15.0
    assert e.pose[0] == pytest.approx(0.0, abs=1e-6)


def test_scheduled_fall_applies_and_animates():
    w = _world()
    w.add(Entity("eva", EntityKind.ASTRONAUT, (5.0, 7.0, 0.0)))
    w.faults.append(Fault(3, "eva", "fall"))
    e = w.entities["eva"]
    for _ in range(2):
        step_physics(w)
    assert e.upright
    step_physics(w)             # tick 3: the fall schedule lands
    assert not e.upright
    z0 = e.centroid_z()
    for _ in range(20):
        step_physics(w)
    assert not e.upright
    assert e.fall_progress == 1.0
    assert e.centroid_z() < z0
    bw, bh = e.body_size()
    assert bw / bh > 2.0        # swapped bbox disposition


def test_scheduled_panel_damage():
    w = _world()
    w.add(Entity("p1", EntityKind.SOLAR_PANEL, (7.0, 6.0, math.pi),
                 (2.4, 1.2, 0.1), tag_id=4))
    w.faults.append(Fault(5, "p1", "damage_crack"))
    for _ in range(4):
        step_physics(w)
    assert w.entities["p1"].damage == "none"
    step_physics(w)
    assert w.entities["p1"].damage == "crack"
    f = render_frame(w, "lamarr", w.tick)
    assert any(d.class_label == "crack" for d in f.detections)


def test_fallen_astronaut_has_flipped_bbox_in_frame():
    w = _world()
    w.add(Entity("eva", EntityKind.ASTRONAUT, (5.0, 7.0, 0.0)))
    w.faults.append(Fault(1, "eva", "fall"))
    for _ in range(15):
        step_physics(w)
    f = render_frame(w, "lamarr", w.tick)
    det = [d for d in f.detections if d.class_label == "astronaut"][0]
    assert det.bbox[2] / det.bbox[3] > 1.3


def test_duplicate_ids_and_tags_rejected():
    w = _world()
    with pytest.raises(ValueError):
        w.add(Entity("lamarr", EntityKind.ROCK, (1.0, 1.0, 0.0)))
    w.add(Entity("p1", EntityKind.SOLAR_PANEL, (7.0, 6.0, 0.0), tag_id=2))
    with pytest.raises(ValueError):
        w.add(Entity("p2", EntityKind.SOLAR_PANEL, (8.0, 6.0, 0.0), tag_id=2))


def test_procedural_terrain_deterministic():
    a = Terrain.procedural(40, 40, 0.25, seed=5, rock_density=0.05, relief=0.2)
    b = Terrain.procedural(40, 40, 0.25, seed=5, rock_density=0.05, relief=0.2)
    assert np.array_equal(a.elevation, b.elevation)
    assert np.array_equal(a.rock_map, b.rock_map)
    assert set(np.unique(a.rock_map)) <= {0, 1, 2, 3}


def test_export_world(tmp_path):
    w = _world()
    w.add(Entity("p1", EntityKind.SOLAR_PANEL, (7.0, 6.0, 0.0), tag_id=9))
    export_world(w, tmp_path)
    assert (tmp_path / "elevation.pgm").exists()
    assert (tmp_path / "rocks.ppm").exists()
    ents = json.loads((tmp_path / "entities.json").read_text())
    assert {e["id"] for e in ents} == {"lamarr", "p1"}
    assert [e for e in ents if e["id"] == "p1"][0]["tag_id"] == 9
