"""Shared geometry: SE(2) transforms and the pinhole range camera.

Conventions used throughout the package:
  - world frame: x east, y north, z up; headings are yaw angles from +x.
  - camera frame: x right, y down, z forward (optical axis).
  - depth images store Euclidean ray range in meters, not z-depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class SE2:
    """Rigid transform on the plane: p' = R(theta) @ p + (x, y)."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) array of points."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        pts = np.asarray(pts, dtype=float)
        out = np.empty_like(pts)
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + self.x
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + self.y
        return out

    def inverse(self) -> "SE2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return SE2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def compose(self, other: "SE2") -> "SE2":
        """self after other: (self * other).apply(p) == self.apply(other.apply(p))."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return SE2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            wrap_angle(self.theta + other.theta),
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "CameraIntrinsics":
        f = (width / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
        return cls(width, height, f, f, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class CameraPose:
    """Camera position in world coordinates plus yaw; the camera is level."""

    x: float
    y: float
    z: float
    yaw: float

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, down, forward) unit vectors in world coordinates."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        right = np.array([s, -c, 0.0])
        down = np.array([0.0, 0.0, -1.0])
        forward = np.array([c, s, 0.0])
        return right, down, forward

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        rel = pts - np.array([self.x, self.y, self.z])
        right, down, forward = self.axes()
        return np.stack([rel @ right, rel @ down, rel @ forward], axis=-1)

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        right, down, forward = self.axes()
        rot = np.stack([right, down, forward], axis=1)  # columns are camera axes
        return pts @ rot.T + np.array([self.x, self.y, self.z])


def project(intr: CameraIntrinsics, pts_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project camera-frame points to pixels; returns (u, v, z_cam)."""
    pts_cam = np.atleast_2d(pts_cam)
    z = pts_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.cx + intr.fx * pts_cam[..., 0] / z
        v = intr.cy + intr.fy * pts_cam[..., 1] / z
    return u, v, z


def back_project(intr: CameraIntrinsics, u: float, v: float, rng: float) -> np.ndarray:
    """Camera-frame point a given ray range along the pixel's viewing ray."""
    d = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d /= np.linalg.norm(d)
    return d * rng


@lru_cache(maxsize=8)
def _pixel_dirs_cam(intr: CameraIntrinsics) -> np.ndarray:
    """Unit viewing-ray directions in the camera frame, shape (H, W, 3). Cached."""
    u = np.arange(intr.width, dtype=float)
    v = np.arange(intr.height, dtype=float)
    xs = (u - intr.cx) / intr.fx
    ys = (v - intr.cy) / intr.fy
    dirs = np.empty((intr.height, intr.width, 3))
    dirs[..., 0] = xs[None, :]
    dirs[..., 1] = ys[:, None]
    dirs[..., 2] = 1.0
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs


def pixel_dirs_world(intr: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Unit viewing-ray directions in world coordinates, shape (H, W, 3)."""
    dirs = _pixel_dirs_cam(intr)
    right, down, forward = pose.axes()
    rot = np.stack([right, down, forward], axis=1)
    return dirs @ rot.T


def pixel_points_world(intr: CameraIntrinsics, pose: CameraPose, depth: np.ndarray) -> np.ndarray:
    """Back-project a full range image to world points, shape (H, W, 3).

    Infinite or non-positive ranges yield NaN coordinates.
    """
    dirs = pixel_dirs_world(intr, pose)
    d = np.where(np.isfinite(depth) & (depth > 0), depth, np.nan)
    return dirs * d[..., None] + np.array([pose.x, pose.y, pose.z])
