"""Yaw controller with constant forward velocity, reactive avoidance, and agent kinematics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, wrap_angle
from .guidance import Guidance
from .world import DepthScan, World, has_clearance


@dataclass(frozen=True)
class YawControllerConfig:
    k_p: float = 2.0  # 1/s, gain on horizontal image error
    v_forward: float = 0.5  # m/s
    lookahead: int = 2  # steps in the visible sequence
    omega_max: float = 1.5  # rad/s

    def __post_init__(self):
        if self.k_p <= 0 or self.v_forward <= 0 or self.lookahead < 0 or self.omega_max <= 0:
            raise ValueError("invalid yaw controller configuration")


@dataclass(frozen=True)
class ControlCommand:
    v_forward: float = 0.0
    omega: float = 0.0
    v_z: float = 0.0


HOLD = ControlCommand()


@dataclass(frozen=True)
class Target:
    index: int  # 0-based frame index of the steering target
    p: tuple[float, float]
    direction: int  # +1 toward later frames, -1 toward earlier ones
    nearest: int  # frame index k closest to the agent
    visible: bool


def select_target(g: Guidance, goal_index: int, lookahead: int) -> Target | None:
    """Pick the steering point along the visible sequence (0-based indices).

    k is the visible frame with the smallest normalized distance; the
    direction of travel is sign(goal - k) with ties going forward, and the
    target sits ``lookahead`` entries further along the visible sequence,
    clipped to its ends. With nothing visible, the closest out-of-view frame
    (border-clamped) is used.
    """
    n = len(g)
    if n == 0:
        return None
    if not 0 <= goal_index < n:
        raise ValueError(f"goal index {goal_index} outside [0, {n})")
    vis = np.flatnonzero(g.v_logit > 0.0)
    if len(vis) == 0:
        k = int(np.argmin(g.d))  # argmin returns the first of ties
        s = 1 if goal_index >= k else -1
        return Target(k, (float(g.p[k, 0]), float(g.p[k, 1])), s, k, False)
    j = int(np.argmin(g.d[vis]))
    k = int(vis[j])
    s = 1 if goal_index >= k else -1
    m = int(vis[min(max(j + s * lookahead, 0), len(vis) - 1)])
    return Target(m, (float(g.p[m, 0]), float(g.p[m, 1])), s, k, True)


def yaw_command(target: Target | None, cfg: YawControllerConfig) -> ControlCommand:
    if target is None:
        return HOLD
    omega = -cfg.k_p * target.p[0]
    omega = min(max(omega, -cfg.omega_max), cfg.omega_max)
    return ControlCommand(cfg.v_forward, omega, 0.0)


def stop_distance(cfg: YawControllerConfig, dt: float, agent_radius: float) -> float:
    return 3.0 * cfg.v_forward * dt + agent_radius


def avoid_obstacles(cmd: ControlCommand, scan: DepthScan, stop_dist: float,
                    omega_max: float, fov_h: float, cone: float = 0.25,
                    steer_limit: float = math.radians(60.0)) -> ControlCommand:
    """Reactive override when something blocks the forward cone.

    Turns at full rate toward the deepest ray within ``steer_limit`` of the
    heading and slows down proportionally to the remaining free distance.
    Equal depths break toward positive omega (left).
    """
    if len(scan) == 0:
        raise ValueError("empty depth scan")
    front = np.abs(scan.u) < cone
    if not front.any():
        front = np.abs(scan.u) == np.abs(scan.u).min()
    d_min = float(scan.depth[front].min())
    if d_min >= stop_dist:
        return cmd
    bearing = np.arctan(scan.u * math.tan(fov_h / 2.0))
    allowed = np.abs(bearing) <= steer_limit
    depth = np.where(allowed, scan.depth, -np.inf)
    best = depth.max()
    # scan.u ascends left-to-right, so the first maximum is the leftmost one
    u_best = float(scan.u[int(np.flatnonzero(depth == best)[0])])
    omega = -omega_max if u_best > 0 else omega_max
    return ControlCommand(cmd.v_forward * d_min / stop_dist, omega, cmd.v_z)


def _valid(world: World, x: float, y: float, radius: float) -> bool:
    return world.in_bounds(x, y) and has_clearance(world, x, y, radius)


def _clamp_motion(world: World, x0, y0, x1, y1, radius, iters: int = 30):
    """Furthest clearance-respecting point on the segment, found by bisection."""
    if _valid(world, x1, y1, radius):
        return x1, y1, False
    if not _valid(world, x0, y0, radius):
        return x0, y0, True
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _valid(world, x0 + mid * (x1 - x0), y0 + mid * (y1 - y0), radius):
            lo = mid
        else:
            hi = mid
    return x0 + lo * (x1 - x0), y0 + lo * (y1 - y0), True


def step_ground_agent(pose: Pose, cmd: ControlCommand, world: World, dt: float,
                      agent_radius: float) -> tuple[Pose, bool]:
    """Unicycle step: rotate first, then advance along the new heading."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    yaw = wrap_angle(pose.yaw + cmd.omega * dt)
    step = cmd.v_forward * dt
    if step == 0.0:
        return pose.replace(yaw=yaw), False
    x1 = pose.x + step * math.cos(yaw)
    y1 = pose.y + step * math.sin(yaw)
    x, y, hit = _clamp_motion(world, pose.x, pose.y, x1, y1, agent_radius)
    return Pose(x, y, pose.z, yaw), hit


def step_holonomic_agent(pose: Pose, v_xy, omega: float, v_z: float, world: World,
                         dt: float, agent_radius: float) -> tuple[Pose, bool]:
    """Single-integrator step with world-frame planar velocity and height rate."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    yaw = wrap_angle(pose.yaw + omega * dt)
    x1 = pose.x + v_xy[0] * dt
    y1 = pose.y + v_xy[1] * dt
    x, y, hit = _clamp_motion(world, pose.x, pose.y, x1, y1, agent_radius)
    return Pose(x, y, max(0.0, pose.z + v_z * dt), yaw), hit
