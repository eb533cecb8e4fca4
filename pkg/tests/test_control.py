import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajguide.control import (
    HOLD,
    ControlCommand,
    YawControllerConfig,
    avoid_obstacles,
    select_target,
    step_ground_agent,
    stop_distance,
    yaw_command,
)
from trajguide.geometry import CameraModel, Pose
from trajguide.guidance import Guidance, oracle_guidance
from trajguide.world import DepthScan, ReferenceTrajectory, World, empty_world, generate_world, \
    WorldParams


def guidance(n, visible, d, p=None):
    vis = np.zeros(n, dtype=bool)
    vis[list(visible)] = True
    if p is None:
        p = np.column_stack([np.linspace(-0.9, 0.9, n), np.zeros(n)])
    return Guidance(np.asarray(p, float), np.where(vis, 10.0, -10.0), np.asarray(d, float))


def example_guidance():
    # frames 3, 4, 5 (1-based) visible with d = 0.2, 0.5, 0.9 among 10 frames
    d = np.ones(10)
    d[[2, 3, 4]] = [0.2, 0.5, 0.9]
    return guidance(10, [2, 3, 4], d)


def test_select_target_forward():
    t = select_target(example_guidance(), goal_index=9, lookahead=2)
    assert (t.nearest, t.direction, t.index) == (2, 1, 4)


def test_select_target_backward_clips_at_start():
    t = select_target(example_guidance(), goal_index=0, lookahead=2)
    assert (t.nearest, t.direction, t.index) == (2, -1, 2)


def test_select_target_goal_equals_nearest_goes_forward():
    t = select_target(example_guidance(), goal_index=2, lookahead=1)
    assert (t.direction, t.index) == (1, 3)


def test_select_target_fallback_to_closest_hidden():
    p = [(1.0, 0.0), (-1.0, 0.3), (0.2, 1.0)]
    t = select_target(guidance(3, [], [0.7, 0.4, 0.9], p), goal_index=2, lookahead=2)
    assert t.index == 1 and not t.visible and t.p == (-1.0, 0.3)


def test_select_target_edge_cases():
    assert select_target(Guidance(np.zeros((0, 2)), np.zeros(0), np.zeros(0)), 0, 2) is None
    with pytest.raises(ValueError):
        select_target(example_guidance(), goal_index=10, lookahead=2)
    # ties in d go to the smaller index
    t = select_target(guidance(4, [1, 2], [1, 0.5, 0.5, 1]), goal_index=3, lookahead=0)
    assert t.nearest == 1


@st.composite
def guidance_st(draw):
    n = draw(st.integers(1, 40))
    vis = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    d = draw(st.lists(st.floats(0.01, 1), min_size=n, max_size=n))
    return guidance(n, [i for i, v in enumerate(vis) if v], d), draw(st.integers(0, n - 1))


@given(guidance_st(), st.integers(0, 5), st.floats(0.01, 100))
def test_select_target_scale_invariant(gg, lookahead, scale):
    g, goal = gg
    a = select_target(g, goal, lookahead)
    b = select_target(Guidance(g.p, g.v_logit, g.d * scale), goal, lookahead)
    assert (a.index, a.direction, a.nearest) == (b.index, b.direction, b.nearest)


@given(guidance_st())
def test_zero_lookahead_beyond_visible_returns_min_d(gg):
    g, _ = gg
    vis = np.flatnonzero(g.visible)
    if len(vis) == 0:
        return
    t = select_target(g, len(g) - 1, 0)
    assert t.index == vis[np.argmin(g.d[vis])]


def test_yaw_command_examples():
    cfg = YawControllerConfig(k_p=1.0)
    t = select_target(guidance(1, [0], [1.0], [(0.0, 0.0)]), 0, 0)
    assert yaw_command(t, cfg) == ControlCommand(cfg.v_forward, 0.0, 0.0)
    t = select_target(guidance(1, [0], [1.0], [(0.5, 0.0)]), 0, 0)
    assert yaw_command(t, cfg).omega == pytest.approx(-0.5)
    assert yaw_command(None, cfg) == HOLD == ControlCommand(0.0, 0.0, 0.0)


@given(st.floats(-1, 1))
def test_yaw_command_odd_and_clamped(u):
    cfg = YawControllerConfig()
    mk = lambda x: select_target(guidance(1, [0], [1.0], [(x, 0.0)]), 0, 0)
    a, b = yaw_command(mk(u), cfg), yaw_command(mk(-u), cfg)
    assert a.omega == -b.omega
    assert abs(a.omega) <= cfg.omega_max


def test_right_target_turns_agent_right():
    # end-to-end sign check: a frame on the agent's right is approached by turning clockwise
    cam = CameraModel()
    w = empty_world(80, 80)
    frame = Pose(12, 8, 1.2, 0)
    traj = ReferenceTrajectory((frame, frame.replace(x=13)), cam, np.array([[12, 8], [13, 8]]),
                               np.array([0.0, 1.0]))
    agent = Pose(10, 10, 1.2, 0)
    g = oracle_guidance(w, cam, agent, traj)
    cmd = yaw_command(select_target(g, 1, 0), YawControllerConfig())
    assert g.p[0, 0] > 0 and cmd.omega < 0
    new, _ = step_ground_agent(agent, cmd, w, 0.25, 0.2)
    assert new.yaw < 0


# -- avoidance -----------------------------------------------------------------------------

def scan(depths):
    depths = np.asarray(depths, float)
    return DepthScan(np.linspace(-1, 1, len(depths)), depths, np.zeros(len(depths), bool))


FOV = math.radians(90)


def test_avoid_open_scan_passes_through():
    cmd = ControlCommand(0.5, 0.3, 0.0)
    assert avoid_obstacles(cmd, scan([10.0] * 16), 0.575, 1.5, FOV) is cmd


def test_avoid_frontal_wall_steers_to_deeper_side():
    depths = np.full(16, 0.3)
    depths[2] = 2.0  # deeper on the left (negative u)
    out = avoid_obstacles(ControlCommand(0.5, -0.2, 0.0), scan(depths), 0.575, 1.5, FOV)
    assert out.omega == 1.5
    assert out.v_forward == pytest.approx(0.5 * 0.3 / 0.575)
    depths = np.full(16, 0.3)
    depths[13] = 2.0
    assert avoid_obstacles(ControlCommand(0.5, 0, 0), scan(depths), 0.575, 1.5, FOV).omega == -1.5


def test_avoid_symmetric_dead_end_turns_left():
    out = avoid_obstacles(ControlCommand(0.5, 0.0, 0.0), scan([0.4] * 16), 0.575, 1.5, FOV)
    assert out.omega == 1.5 and out.v_forward < 0.5


def test_avoid_ignores_directions_beyond_60_degrees():
    depths = np.full(16, 0.3)
    depths[0] = 9.0  # u = -1 at 90 deg fov is 45 deg: allowed
    wide = math.radians(150)  # u = -1 is now 75 deg off-axis: excluded
    assert avoid_obstacles(ControlCommand(0.5, 0, 0), scan(depths), 0.575, 1.5, FOV).omega == 1.5
    depths[0], depths[10] = 9.0, 0.5  # u = 1/3 is about 51 deg off-axis at 150 deg fov
    assert avoid_obstacles(ControlCommand(0.5, 0, 0), scan(depths), 0.575, 1.5, wide).omega == -1.5


def test_stop_distance_default():
    assert stop_distance(YawControllerConfig(), 0.25, 0.2) == pytest.approx(3 * 0.5 * 0.25 + 0.2)


# -- agent step ---------------------------------------------------------------------------

def test_step_examples():
    w = empty_world(80, 80)
    pose = Pose(10, 10, 1.2, 0.4)
    assert step_ground_agent(pose, HOLD, w, 0.1, 0.2) == (pose, False)
    new, hit = step_ground_agent(Pose(10, 10, 1.2, 0.0), ControlCommand(1.0, 0.0), w, 0.1, 0.2)
    assert (new.x, new.y, hit) == (pytest.approx(10.1), 10.0, False)
    with pytest.raises(ValueError):
        step_ground_agent(pose, HOLD, w, 0.0, 0.2)


def _bisect_oracle(world, x0, x1, y, radius):
    # scan the motion segment finely; the last clear sample bounds the clamp point
    xs = np.linspace(x0, x1, 20001)
    ok = world.distance_field(xs, np.full_like(xs, y)) >= radius
    ok &= ~world.occupancy[(np.full_like(xs, y) // 0.25).astype(int), (xs // 0.25).astype(int)]
    return xs[np.flatnonzero(~ok)[0] - 1]


def test_step_into_wall_is_clamped():
    occ = empty_world(80, 80).occupancy.copy()
    occ[:, 41] = True  # wall face at x = 10.25
    w = World(occ, 0.25, 2.5)
    # DF is measured to obstacle cell centers, so it falls to 0.2 at x = 10.175
    start = Pose(9.95, 10.1, 1.2, 0.0)
    new, hit = step_ground_agent(start, ControlCommand(1.0, 0.0), w, 0.25, 0.2)
    assert hit
    assert new.x == pytest.approx(_bisect_oracle(w, 9.95, 10.2, 10.1, 0.2), abs=1e-4)
    assert new.x == pytest.approx(10.175, abs=1e-4)
    assert w.distance_field(new.x, new.y) >= 0.2


@given(st.integers(0, 20), st.floats(0, 2 * math.pi), st.floats(-1.5, 1.5), st.floats(0, 1.0))
def test_step_never_violates_clearance(seed, yaw, omega, v):
    w = generate_world(seed % 4, WorldParams(width=40, height=40))
    rng = np.random.default_rng(seed)
    ys, xs = np.nonzero((w.distance_field.values >= 0.45) & ~w.occupancy)
    k = rng.integers(len(xs))
    pose = Pose(*w.cell_center(xs[k], ys[k]), 1.2, yaw)
    for _ in range(20):
        pose, _ = step_ground_agent(pose, ControlCommand(v, omega), w, 0.25, 0.2)
        assert w.distance_field(pose.x, pose.y) >= 0.2 - w.cell_size
