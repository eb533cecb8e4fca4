"""Frames, pinhole projection into normalized image space, and distance normalization.

Conventions: world frame is z-up with yaw measured counter-clockwise from +x.
Camera frame is (forward, right, down). Image coordinates u (rightward) and
v (downward) are normalized so the frustum border sits at |u| = 1 or |v| = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EPS_NEAR = 0.05  # meters along the optical axis
BORDER_TOL = 1e-12  # |u| = 1 must survive the rounding in tan(fov/2)


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    r = math.remainder(theta, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle` (no finiteness check)."""
    r = np.remainder(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(r <= -np.pi, r + 2.0 * np.pi, r)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if self.z < 0:
            raise ValueError(f"pose height must be >= 0, got {self.z}")
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def replace(self, **changes) -> "Pose":
        values = {"x": self.x, "y": self.y, "z": self.z, "yaw": self.yaw}
        values.update(changes)
        return Pose(**values)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z, "yaw": self.yaw}


@dataclass(frozen=True)
class CameraModel:
    fov_h: float = math.radians(90.0)
    aspect: float = 4.0 / 3.0
    mount_height: float = 1.2

    def __post_init__(self):
        if not 0.0 < self.fov_h < math.pi:
            raise ValueError(f"fov_h must lie in (0, pi), got {self.fov_h}")
        if self.aspect <= 0:
            raise ValueError(f"aspect must be positive, got {self.aspect}")
        if self.mount_height < 0:
            raise ValueError(f"mount_height must be >= 0, got {self.mount_height}")

    @property
    def tan_half_h(self) -> float:
        return math.tan(self.fov_h / 2.0)

    @property
    def tan_half_v(self) -> float:
        return self.tan_half_h / self.aspect

    @property
    def fov_v(self) -> float:
        return 2.0 * math.atan(self.tan_half_v)


@dataclass(frozen=True)
class ImagePoint:
    u: float
    v: float
    depth: float


def to_camera_frame(observer: Pose, point) -> np.ndarray:
    """Express a world point as (forward, right, down) relative to ``observer``."""
    return to_camera_frame_many(observer, np.asarray(point, dtype=float)[None, :])[0]


def to_camera_frame_many(observer: Pose, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    dx = points[:, 0] - observer.x
    dy = points[:, 1] - observer.y
    c, s = math.cos(observer.yaw), math.sin(observer.yaw)
    forward = dx * c + dy * s
    right = dx * s - dy * c
    down = observer.z - points[:, 2]
    return np.stack([forward, right, down], axis=1)


def from_camera_frame(observer: Pose, vec) -> np.ndarray:
    """Inverse of :func:`to_camera_frame`."""
    forward, right, down = (float(a) for a in vec)
    c, s = math.cos(observer.yaw), math.sin(observer.yaw)
    return np.array([
        observer.x + forward * c + right * s,
        observer.y + forward * s - right * c,
        observer.z - down,
    ])


def project(camera: CameraModel, observer: Pose, point) -> ImagePoint | None:
    """Pinhole projection; ``None`` marks a point outside the frustum."""
    forward, right, down = to_camera_frame(observer, point)
    if forward <= EPS_NEAR:
        return None
    u = (right / forward) / camera.tan_half_h
    v = (down / forward) / camera.tan_half_v
    if abs(u) > 1.0 + BORDER_TOL or abs(v) > 1.0 + BORDER_TOL:
        return None
    return ImagePoint(float(np.clip(u, -1, 1)), float(np.clip(v, -1, 1)), float(forward))


def project_many(camera: CameraModel, observer: Pose, points: np.ndarray):
    """Batch projection.

    Returns ``(uv, depth, in_frustum)`` where ``uv`` holds the raw (unclamped)
    image coordinates; entries with ``forward <= EPS_NEAR`` are NaN.
    """
    cam = to_camera_frame_many(observer, points)
    forward = cam[:, 0]
    ahead = forward > EPS_NEAR
    safe = np.where(ahead, forward, 1.0)
    u = np.where(ahead, cam[:, 1] / safe / camera.tan_half_h, np.nan)
    v = np.where(ahead, cam[:, 2] / safe / camera.tan_half_v, np.nan)
    uv = np.stack([u, v], axis=1)
    with np.errstate(invalid="ignore"):
        inside = ahead & (np.abs(u) <= 1.0 + BORDER_TOL) & (np.abs(v) <= 1.0 + BORDER_TOL)
    return uv, forward, inside


def border_clamped(camera: CameraModel, observer: Pose, points: np.ndarray) -> np.ndarray:
    """Image coordinates clamped onto the frame border along the direction of each point.

    In-frustum points are returned unchanged. Points outside are pulled
    radially onto the border; points behind the camera use the sign of their
    lateral/vertical offset, and a point dead behind maps to (1, 0).
    """
    cam = to_camera_frame_many(observer, points)
    forward, right, down = cam[:, 0], cam[:, 1], cam[:, 2]
    out = np.zeros((len(cam), 2))
    for i in range(len(cam)):
        a = right[i] / camera.tan_half_h
        b = down[i] / camera.tan_half_v
        if forward[i] > EPS_NEAR:
            u, v = a / forward[i], b / forward[i]
            m = max(abs(u), abs(v))
            if m > 1.0:
                u, v = u / m, v / m
        else:
            m = max(abs(a), abs(b))
            if m == 0.0:
                u, v = 1.0, 0.0
            else:
                u, v = a / m, b / m
        out[i] = (u, v)
    return np.clip(out, -1.0, 1.0)


def back_project(camera: CameraModel, observer: Pose, u: float, v: float, distance: float) -> np.ndarray:
    """World point at Euclidean ``distance`` along the ray through (u, v)."""
    ray = np.array([1.0, u * camera.tan_half_h, v * camera.tan_half_v])
    ray *= distance / np.linalg.norm(ray)
    return from_camera_frame(observer, ray)


def normalize_distances(distances, visible) -> np.ndarray:
    distances = np.asarray(distances, dtype=float)
    visible = np.asarray(visible, dtype=bool)
    if distances.shape != visible.shape:
        raise ValueError("distances and visible must have equal length")
    if not visible.any():
        return np.zeros_like(distances)
    scale = distances[visible].max()
    if scale <= EPS_NEAR:
        return np.zeros_like(distances)
    return np.clip(distances / scale, 0.0, 1.0)

