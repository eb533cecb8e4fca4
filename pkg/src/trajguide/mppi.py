"""Perception-aware MPPI on a planar single integrator.

State is (p_x, p_y, psi), control is world-frame (v_x, v_y, omega). Grounded
guidance points act as the goal for a distance cost and a bearing cost; a
distance-field penetration cost handles collisions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraModel, Pose, wrap_angles
from .guidance import Guidance
from .world import DepthScan, DistanceField


@dataclass(frozen=True)
class MppiConfig:
    samples: int = 256  # M
    horizon: int = 20  # K
    dt: float = 0.1
    sigma: tuple[float, float, float] = (0.3, 0.3, 0.5)
    beta: float = 1.0  # inverse temperature, in cost units
    w_goal: float = 10.0
    w_coll: float = 100.0
    w_vis: float = 10.0
    collision_radius: float = 0.2
    goal_rank: int = 3
    k_z: float = 0.5
    v_max: float = 1.0  # |v_x|, |v_y| clamp, m/s
    omega_max: float = 1.5
    hinge_collision: bool = False  # (r - DF)+ instead of 1[DF <= r] * DF
    grounding_scales: int = 64

    def __post_init__(self):
        if self.samples < 2 or self.horizon < 1 or self.beta <= 0:
            raise ValueError("MPPI needs samples >= 2, horizon >= 1 and beta > 0")
        if min(self.w_goal, self.w_coll, self.w_vis) < 0:
            raise ValueError("cost weights must be non-negative")
        if len(self.sigma) != 3:
            raise ValueError("sigma needs one entry per control axis")


@dataclass
class MppiState:
    x: np.ndarray  # (3,)
    nominal: np.ndarray = field(default=None)  # (K, 3)

    @classmethod
    def initial(cls, pose: Pose, cfg: MppiConfig) -> "MppiState":
        return cls(np.array([pose.x, pose.y, pose.yaw]), np.zeros((cfg.horizon, 3)))


def rollout(x0, controls, dt: float) -> np.ndarray:
    """Euler rollouts x_{k+1} = x_k + dt u_k with psi wrapped.

    ``controls`` is (K, 3) or batched (M, K, 3); returns (K+1, 3) or (M, K+1, 3).
    """
    controls = np.asarray(controls, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    batched = controls.ndim == 3
    if not batched:
        controls = controls[None]
    m, k, _ = controls.shape
    out = np.empty((m, k + 1, 3))
    out[:, 0] = x0
    out[:, 1:] = x0 + dt * np.cumsum(controls, axis=1)
    out[:, :, 2] = wrap_angles(out[:, :, 2])
    return out if batched else out[0]


def trajectory_cost(states, goal, df: DistanceField, cfg: MppiConfig, vis_goal=None) -> np.ndarray | float:
    """Summed stage cost over steps 1..K for one (K+1, 3) or many (M, K+1, 3) rollouts."""
    states = np.asarray(states, dtype=float)
    single = states.ndim == 2
    if single:
        states = states[None]
    goal = np.asarray(goal, dtype=float)
    vis_goal = goal if vis_goal is None else np.asarray(vis_goal, dtype=float)
    s = states[:, 1:] if states.shape[1] > 1 else states
    px, py, psi = s[..., 0], s[..., 1], s[..., 2]
    c_goal = np.hypot(px - goal[0], py - goal[1])
    bearing = np.arctan2(vis_goal[1] - py, vis_goal[0] - px)
    c_vis = wrap_angles(bearing - psi) ** 2
    dist = df(px, py)
    r = cfg.collision_radius
    if cfg.hinge_collision:
        c_coll = np.maximum(r - dist, 0.0)
    else:
        c_coll = np.where(dist <= r, dist, 0.0)
    j = (cfg.w_goal * c_goal + cfg.w_vis * c_vis + cfg.w_coll * c_coll).sum(axis=1)
    return float(j[0]) if single else j


def importance_weights(costs, beta: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    rho = costs.min()
    w = np.exp(-(costs - rho) / beta)
    return w / w.sum()


def mppi_step(state: MppiState, goal, df: DistanceField, cfg: MppiConfig,
              rng: np.random.Generator):
    """One receding-horizon update.

    Returns ``(command, next_nominal, info)`` where command is the first
    control (v_x, v_y, omega) of the weighted-average sequence and
    next_nominal is that sequence shifted left by one step.
    """
    k = cfg.horizon
    nominal = state.nominal if state.nominal is not None else np.zeros((k, 3))
    eps = rng.normal(0.0, 1.0, size=(cfg.samples, k, 3)) * np.asarray(cfg.sigma)
    v = nominal[None] + eps
    limits = np.array([cfg.v_max, cfg.v_max, cfg.omega_max])
    v = np.clip(v, -limits, limits)
    states = rollout(state.x, v, cfg.dt)
    costs = trajectory_cost(states, goal, df, cfg)
    w = importance_weights(costs, cfg.beta)
    u = np.tensordot(w, v, axes=1)
    nxt = np.vstack([u[1:], u[-1:]])
    return u[0].copy(), nxt, {"costs": costs, "weights": w, "sequence": u, "samples": v}


def ground_predictions(g: Guidance, scan: DepthScan, camera: CameraModel, observer: Pose,
                       df: DistanceField, r: float, n_scales: int = 64) -> np.ndarray:
    """Lift visible image points to world-frame 2D points.

    Each point goes along its horizontal viewing direction at range d. The
    whole set is then stretched by the largest of ``n_scales`` evenly spaced
    factors up to the scan depth behind the farthest point that keeps every
    point at least ``r`` from obstacles. Rows follow frame order.
    """
    vis = np.flatnonzero(g.v_logit > 0.0)
    if len(vis) == 0:
        return np.zeros((0, 2))
    u = g.p[vis, 0]
    d = g.d[vis]
    bearing = observer.yaw - np.arctan(u * camera.tan_half_h)
    unit = np.column_stack([d * np.cos(bearing), d * np.sin(bearing)])
    far = int(np.argmax(d))
    alpha_max = scan.depth_at(float(u[far])) / max(float(d[far]), 1e-9)
    origin = np.array([observer.x, observer.y])
    ny, nx = df.values.shape
    size = np.array([nx, ny]) * df.cell_size
    scales = alpha_max * np.arange(n_scales, 0, -1) / n_scales
    for a in scales:
        pts = origin + a * unit
        inside = (pts >= 0).all() and (pts <= size).all()
        if inside and (df(pts[:, 0], pts[:, 1]) >= r).all():
            return pts
    return origin + scales[-1] * unit


def goal_point(g: Guidance, grounded: np.ndarray, goal_index: int, rank: int):
    """The ``rank``-th grounded point counted from the closest visible frame toward the goal.

    Returns ``(frame_index, xy)`` or ``None`` when nothing is visible.
    """
    vis = np.flatnonzero(g.v_logit > 0.0)
    if len(vis) == 0:
        return None
    j = int(np.argmin(g.d[vis]))
    s = 1 if goal_index >= vis[j] else -1
    pos = min(max(j + s * (rank - 1), 0), len(vis) - 1)
    return int(vis[pos]), grounded[pos]


def height_command(g: Guidance, goal_index: int | None, cfg: MppiConfig) -> float:
    """Vertical rate that recenters the goal point's image row."""
    if goal_index is None or g.v_logit[goal_index] <= 0.0:
        return 0.0
    return -cfg.k_z * float(g.p[goal_index, 1])


class MppiController:
    """Holds the nominal sequence between steps of one episode."""

    def __init__(self, cfg: MppiConfig, pose: Pose, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.state = MppiState.initial(pose, cfg)
        self.goal = None

    def step(self, pose: Pose, g: Guidance, scan: DepthScan, camera: CameraModel,
             df: DistanceField, goal_index: int):
        """Return ``(v_xy, omega, v_z)`` for the current observation."""
        self.state.x = np.array([pose.x, pose.y, pose.yaw])
        grounded = ground_predictions(g, scan, camera, pose, df, self.cfg.collision_radius,
                                      self.cfg.grounding_scales)
        picked = goal_point(g, grounded, goal_index, self.cfg.goal_rank) if len(grounded) else None
        if picked is None:
            # nothing visible: replay the previous plan
            u = self.state.nominal[0].copy()
            self.state.nominal = np.vstack([self.state.nominal[1:], self.state.nominal[-1:]])
            return u[:2], float(u[2]), 0.0
        frame, self.goal = picked
        u, self.state.nominal, _ = mppi_step(self.state, self.goal, df, self.cfg, self.rng)
        return u[:2], float(u[2]), height_command(g, frame, self.cfg)
