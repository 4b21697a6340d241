"""Detection post-processing: ROI depth localization, Kalman multi-object
tracking with monotone IDs, and interaction / hazard / fall classification.

The tracker consumes 3-D point measurements produced by locate(); bounding
boxes are kept per track only as history for the fall detector. Track
positions must live in a frame whose +z axis points up for the fall and
proximity rules to make sense (the harness converts camera-frame points
with the known camera pose before feeding the tracker).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import NonMonotoneTick
from .geometry import back_project

MACHINE_CLASSES = ("rover", "solar_panel")

GRAVITY_PRESETS = {"earth": 9.81, "mars": 3.71, "moon": 1.62}


@dataclass
class LocateConfig:
    min_range: float = 0.3
    max_range: float = 15.0


@dataclass
class LocatedDetection:
    raw: object                    # RawDetection from the world module
    position: np.ndarray           # 3-D point in the camera frame, meters
    mean_depth: float


def locate(frame, config: LocateConfig | None = None) -> list[LocatedDetection]:
    """Attach 3-D positions to detections from ROI depth averages.

    The mean is taken over finite pixels of the central sub-ROI covering
    50% of the bbox area; detections with no finite evidence or a mean
    outside [min_range, max_range] are dropped. The position is the
    back-projection of the bbox center at the mean range.
    """
    config = config or LocateConfig()
    depth = frame.depth
    h, w = depth.shape
    shrink = 1.0 / math.sqrt(2.0)  # sub-ROI side factor for 50% area
    out: list[LocatedDetection] = []
    for det in frame.detections:
        cx, cy, bw, bh = det.bbox
        hw = max(bw * shrink / 2.0, 0.5)
        hh = max(bh * shrink / 2.0, 0.5)
        c0 = max(int(math.floor(cx - hw)), 0)
        c1 = min(int(math.ceil(cx + hw)) + 1, w)
        r0 = max(int(math.floor(cy - hh)), 0)
        r1 = min(int(math.ceil(cy + hh)) + 1, h)
        if c0 >= c1 or r0 >= r1:
            continue
        roi = depth[r0:r1, c0:c1]
        finite = roi[np.isfinite(roi)]
        if finite.size == 0:
            continue
        mean = float(finite.mean())
        if not (config.min_range <= mean <= config.max_range):
            continue
        pos = back_project(frame.intrinsics, cx, cy, mean)
        out.append(LocatedDetection(det, pos, mean))
    return out


# ---------------------------------------------------------------------------
# Kalman multi-object tracker
# ---------------------------------------------------------------------------

class TrackStatus(Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass
class TrackerConfig:
    gate_distance: float = 2.0
    confirm_hits: int = 3
    delete_misses: int = 5
    max_confirmed: int = 60
    process_noise_accel: float = 0.5   # white-acceleration std, m/s^2
    measurement_noise: float = 0.1     # position std, m
    dt: float = 0.1                    # seconds per tick
    history_len: int = 64


@dataclass
class Track:
    id: int
    class_label: str
    state: np.ndarray                  # (x, y, z, vx, vy, vz)
    covariance: np.ndarray             # 6x6
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    misses: int = 0
    bbox_history: deque = field(default_factory=lambda: deque(maxlen=64))
    pos_history: deque = field(default_factory=lambda: deque(maxlen=64))
    last_tick: int = 0

    @property
    def position(self) -> np.ndarray:
        return self.state[:3]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[3:]


def _transition(dt: float) -> tuple[np.ndarray, np.ndarray]:
    f = np.eye(6)
    f[0, 3] = f[1, 4] = f[2, 5] = dt
    return f, f.T


def _process_noise(dt: float, accel_std: float) -> np.ndarray:
    q11 = dt ** 4 / 4.0
    q12 = dt ** 3 / 2.0
    q22 = dt ** 2
    q = np.zeros((6, 6))
    for i in range(3):
        q[i, i] = q11
        q[i, i + 3] = q[i + 3, i] = q12
        q[i + 3, i + 3] = q22
    return q * accel_std ** 2


class Tracker:
    """Greedy nearest-neighbor Kalman tracker; IDs increase monotonically
    and are never reused."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_tick: int | None = None

    @property
    def confirmed(self) -> list[Track]:
        return [t for t in self.tracks if t.status is TrackStatus.CONFIRMED]

    def step(self, located: list[LocatedDetection], tick: int) -> list[Track]:
        """Predict, associate, update, manage track lifecycles. Returns the
        live track list after this tick."""
        cfg = self.config
        if self._last_tick is not None and tick <= self._last_tick:
            raise NonMonotoneTick(f"tick {tick} after {self._last_tick}")
        gap = 1 if self._last_tick is None else tick - self._last_tick
        self._last_tick = tick

        dt = cfg.dt * gap
        f, ft = _transition(dt)
        q = _process_noise(dt, cfg.process_noise_accel)
        for t in self.tracks:
            t.state = f @ t.state
            t.covariance = f @ t.covariance @ ft + q

        # greedy nearest-neighbor association, same class, inside the gate;
        # ties break on lower track id then lower detection index
        pairs = []
        for ti, t in enumerate(self.tracks):
            for di, d in enumerate(located):
                if d.raw.class_label != t.class_label:
                    continue
                dist = float(np.linalg.norm(t.position - d.position))
                if dist <= cfg.gate_distance:
                    pairs.append((dist, t.id, di, ti))
        pairs.sort()
        used_t: set[int] = set()
        used_d: set[int] = set()
        matches: list[tuple[int, int]] = []
        for dist, _tid, di, ti in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            matches.append((ti, di))

        r = np.eye(3) * cfg.measurement_noise ** 2
        h = np.zeros((3, 6))
        h[0, 0] = h[1, 1] = h[2, 2] = 1.0
        for ti, di in matches:
            t = self.tracks[ti]
            d = located[di]
            innov = d.position - t.position
            s = h @ t.covariance @ h.T + r
            k = t.covariance @ h.T @ np.linalg.inv(s)
            t.state = t.state + k @ innov
            ikh = np.eye(6) - k @ h
            # Joseph form keeps the covariance symmetric positive-definite
            t.covariance = ikh @ t.covariance @ ikh.T + k @ r @ k.T
            t.covariance = (t.covariance + t.covariance.T) / 2.0
            t.hits += 1
            t.misses = 0
            t.last_tick = tick
            t.pos_history.append((tick, *map(float, d.position)))
            t.bbox_history.append((tick, *map(float, d.raw.bbox)))

        for ti, t in enumerate(self.tracks):
            if ti not in used_t:
                t.misses += 1
                t.hits = 0

        for di, d in enumerate(located):
            if di in used_d:
                continue
            cov = np.zeros((6, 6))
            cov[:3, :3] = r * 4.0 + np.eye(3) * 0.01
            cov[3:, 3:] = np.eye(3) * 4.0  # unknown initial velocity
            t = Track(self._next_id, d.raw.class_label,
                      np.concatenate([d.position, np.zeros(3)]), cov,
                      last_tick=tick,
                      bbox_history=deque(maxlen=cfg.history_len),
                      pos_history=deque(maxlen=cfg.history_len))
            self._next_id += 1
            t.pos_history.append((tick, *map(float, d.position)))
            t.bbox_history.append((tick, *map(float, d.raw.bbox)))
            self.tracks.append(t)

        n_confirmed = sum(1 for t in self.tracks if t.status is TrackStatus.CONFIRMED)
        for t in self.tracks:
            if t.status is TrackStatus.TENTATIVE and t.hits >= cfg.confirm_hits:
                if n_confirmed < cfg.max_confirmed:
                    t.status = TrackStatus.CONFIRMED
                    n_confirmed += 1
                # over budget: the track simply stays tentative
            if t.misses >= cfg.delete_misses:
                t.status = TrackStatus.LOST
        self.tracks = [t for t in self.tracks if t.status is not TrackStatus.LOST]
        return list(self.tracks)


def tracker_step(tracker: Tracker, located: list[LocatedDetection], tick: int):
    """Functional wrapper around Tracker.step."""
    return tracker, tracker.step(located, tick)


# ---------------------------------------------------------------------------
# Interaction, hazard and fall classification
# ---------------------------------------------------------------------------

class EventKind(Enum):
    INTERACTION = "interaction"
    ASTRONAUT_FALL = "astronaut_fall"
    HAZARD_PROXIMITY = "hazard_proximity"
    EQUIPMENT_ANOMALY = "equipment_anomaly"


@dataclass
class EmergencyConfig:
    g: float = GRAVITY_PRESETS["earth"]
    fall_aspect_upright: float = 0.7
    fall_aspect_fallen: float = 1.3
    fall_min_drop: float = 0.8          # meters of centroid drop
    fall_window_factor: float = 3.0
    interactive_distance: float = 2.0
    dangerous_classes: frozenset[str] = frozenset({"rock"})
    dt: float = 0.1                     # seconds per tick

    def fall_window(self) -> float:
        """Detection window in seconds; scales with free-fall time 1/sqrt(g)."""
        return self.fall_window_factor * math.sqrt(2.0 * self.fall_min_drop / self.g)


@dataclass
class PerceptionEvent:
    kind: EventKind
    subject_track: int
    object_track: int | None
    tick: int
    details: dict = field(default_factory=dict)


class EmergencyMonitor:
    """Stateful classifier over track snapshots.

    Interaction and hazard events fire once per continuous contact episode;
    falls fire once per fall and re-arm only after the bbox aspect returns
    below the upright threshold.
    """

    def __init__(self, config: EmergencyConfig | None = None):
        self.config = config or EmergencyConfig()
        self._interaction_active: set[tuple[int, int]] = set()
        self._hazard_active: set[tuple[int, int]] = set()
        self._fall_armed: dict[int, bool] = {}

    @staticmethod
    def _pairs(tracks, subject_label: str, object_pred, max_dist: float):
        subs = [t for t in tracks if t.class_label == subject_label
                and t.status is TrackStatus.CONFIRMED]
        objs = [t for t in tracks if object_pred(t)
                and t.status is TrackStatus.CONFIRMED]
        for s in subs:
            for o in objs:
                if s.id == o.id:
                    continue
                if float(np.linalg.norm(s.position - o.position)) <= max_dist:
                    yield s, o

    def detect_interaction(self, tracks, tick: int) -> list[PerceptionEvent]:
        """Astronaut within interactive distance of a rover or solar panel."""
        cfg = self.config
        current = set()
        events = []
        for s, o in self._pairs(tracks, "astronaut",
                                lambda t: t.class_label in MACHINE_CLASSES,
                                cfg.interactive_distance):
            key = (s.id, o.id)
            current.add(key)
            if key not in self._interaction_active:
                events.append(PerceptionEvent(
                    EventKind.INTERACTION, s.id, o.id, tick,
                    {"object_class": o.class_label}))
        self._interaction_active = current
        return events

    def detect_hazard_proximity(self, tracks, tick: int) -> list[PerceptionEvent]:
        """Astronaut within interactive distance of a configured dangerous class."""
        cfg = self.config
        current = set()
        events = []
        for s, o in self._pairs(tracks, "astronaut",
                                lambda t: t.class_label in cfg.dangerous_classes,
                                cfg.interactive_distance):
            key = (s.id, o.id)
            current.add(key)
            if key not in self._hazard_active:
                events.append(PerceptionEvent(
                    EventKind.HAZARD_PROXIMITY, s.id, o.id, tick,
                    {"object_class": o.class_label}))
        self._hazard_active = current
        return events

    def detect_fall(self, track, tick: int) -> PerceptionEvent | None:
        """Sudden bbox aspect flip plus centroid drop inside a g-scaled window."""
        cfg = self.config
        if track.class_label != "astronaut" or len(track.bbox_history) < 2:
            return None
        armed = self._fall_armed.setdefault(track.id, True)
        _, _, _, bw, bh = track.bbox_history[-1]
        aspect_now = bw / bh if bh > 0 else math.inf
        if aspect_now < cfg.fall_aspect_upright:
            self._fall_armed[track.id] = True
            return None
        if not armed or aspect_now <= cfg.fall_aspect_fallen:
            return None

        window_ticks = cfg.fall_window() / cfg.dt
        t_now = track.bbox_history[-1][0]
        was_upright = any(
            bw_ / bh_ < cfg.fall_aspect_upright
            for t_, _, _, bw_, bh_ in track.bbox_history
            if t_ >= t_now - window_ticks and bh_ > 0
        )
        if not was_upright:
            return None
        z_now = track.pos_history[-1][3]
        z_max = max(z for t_, _, _, z in track.pos_history if t_ >= t_now - window_ticks)
        if z_max - z_now < cfg.fall_min_drop:
            return None
        self._fall_armed[track.id] = False
        return PerceptionEvent(
            EventKind.ASTRONAUT_FALL, track.id, None, tick,
            {"drop": z_max - z_now, "aspect": aspect_now,
             "window_s": cfg.fall_window()})

    def step(self, tracks, tick: int) -> list[PerceptionEvent]:
        """All classifiers over one track snapshot."""
        events = self.detect_interaction(tracks, tick)
        events += self.detect_hazard_proximity(tracks, tick)
        for t in tracks:
            ev = self.detect_fall(t, tick)
            if ev is not None:
                events.append(ev)
        return events
