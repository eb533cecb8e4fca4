"""Episode construction, execution and SR/SPL aggregation."""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .control import (
    YawControllerConfig,
    avoid_obstacles,
    select_target,
    step_ground_agent,
    step_holonomic_agent,
    stop_distance,
    yaw_command,
)
from .geometry import CameraModel, Pose, wrap_angle
from .guidance import NoiseModel, oracle_guidance, perturb_guidance, persistent_rng, trace_record
from .mppi import MppiConfig, MppiController
from .world import (
    NoPathError,
    NoValidStartError,
    QueryParams,
    TrajectoryParams,
    WorldGenerationError,
    WorldParams,
    distance_to_path,
    generate_world,
    plan_path,
    render_depth,
    sample_query_pose,
    sample_reference_trajectory,
)

TASKS = ("to_end", "to_start", "any_point")
INITS = ("on", "off")
CAMERA_MODES = ("matched", "cross", "sweep")
CONTROLLERS = ("yaw", "yaw_avoid", "mppi")
SWEEP_PARAMETERS = ("fov", "aspect", "height")

# (mean, max) of the absolute cross-camera offsets; fov in degrees
MISMATCH_STATS = {"fov": (20.0, 60.0), "aspect": (0.5, 1.5), "height": (0.5, 1.2)}

# stream tags for SeedSequence derivation
_SEED_TAGS = {"world": 1, "trajectory": 2, "pose": 3}
_STREAMS = {"init": 1, "noise": 2, "camera": 3, "controller": 4, "goal": 5, "anchor": 6}


def derive_seed(*words: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence(list(words)).generate_state(1, dtype=np.uint32)[0])


def episode_stream(pose_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([pose_seed, _STREAMS[name]]))


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.25  # ground agent step for the yaw controllers
    agent_radius: float = 0.2
    n_rays: int = 32


@dataclass(frozen=True)
class EpisodeConfig:
    episode_id: int = 0
    world_seed: int = 0
    trajectory_seed: int = 0
    pose_seed: int = 0
    task: str = "to_end"
    goal_index: int | None = None  # 0-based; any_point draws one when None
    init: str = "on"
    camera_mode: str = "matched"
    sweep_parameter: str | None = None
    sweep_magnitude: float = 0.0
    target_offset: float | None = None  # fixed off-trajectory path distance (m)
    controller: str = "yaw_avoid"
    noise: NoiseModel = NoiseModel()
    step_cap: int = 1000
    success_radius: float = 0.5
    sim: SimParams = SimParams()
    world: WorldParams = WorldParams()
    trajectory: TrajectoryParams = TrajectoryParams()
    query: QueryParams = QueryParams()
    recorder_camera: CameraModel = CameraModel()
    yaw: YawControllerConfig = YawControllerConfig()
    mppi: MppiConfig = MppiConfig()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init mode {self.init!r}")
        if self.camera_mode not in CAMERA_MODES:
            raise ValueError(f"unknown camera mode {self.camera_mode!r}")
        if self.camera_mode == "sweep" and self.sweep_parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"sweep needs a parameter in {SWEEP_PARAMETERS}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.step_cap < 1:
            raise ValueError("step_cap must be >= 1")
        if self.goal_index is not None and self.goal_index < 0:
            raise ValueError("goal_index must be non-negative")
        if self.target_offset is not None and self.target_offset < 0:
            raise ValueError("target_offset must be non-negative")


@dataclass
class EpisodeResult:
    episode_id: int
    valid: bool = True
    error: str | None = None
    success: bool = False
    steps: int = 0
    path_length: float = 0.0
    geodesic: float = 0.0
    collisions: int = 0
    final_distance: float = math.nan
    min_distance: float = math.nan
    init_distance: float = 0.0
    goal_index: int = -1
    n_frames: int = 0
    delta_fov_deg: float = 0.0
    delta_aspect: float = 0.0
    delta_height: float = 0.0
    success_step: int = -1
    step_trace: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# cameras


@lru_cache(maxsize=None)
def _half_normal_sigma(mean: float, cap: float) -> float:
    """Scale of a half-normal that has ``mean`` once truncated at ``cap``."""
    def truncated_mean(sigma):
        a = cap / sigma
        return sigma * math.sqrt(2 / math.pi) * (1 - math.exp(-a * a / 2)) / special.erf(a / math.sqrt(2))
    return optimize.brentq(lambda s: truncated_mean(s) - mean, mean * 0.5, mean * 20.0)


def mismatch_magnitude(parameter: str, rng: np.random.Generator) -> float:
    """|offset| drawn from a half-normal truncated at the stated maximum."""
    mean, cap = MISMATCH_STATS[parameter]
    scale = _half_normal_sigma(mean, cap) * math.sqrt(2.0)
    # inverse CDF of the half-normal restricted to [0, cap]
    return float(scale * special.erfinv(rng.uniform() * special.erf(cap / scale)))


def offset_camera(base: CameraModel, fov_deg: float = 0.0, aspect: float = 0.0,
                  height: float = 0.0) -> CameraModel:
    """Apply signed offsets, clamped to valid camera ranges."""
    fov = min(max(base.fov_h + math.radians(fov_deg), math.radians(10.0)), math.radians(170.0))
    return CameraModel(fov, max(base.aspect + aspect, 0.25), max(base.mount_height + height, 0.0))


def sample_cross_camera(base: CameraModel, seed) -> tuple[CameraModel, dict]:
    rng = np.random.default_rng(seed)
    deltas = {}
    for name in SWEEP_PARAMETERS:
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        deltas[name] = sign * mismatch_magnitude(name, rng)
    return offset_camera(base, deltas["fov"], deltas["aspect"], deltas["height"]), deltas


def episode_camera(cfg: EpisodeConfig) -> tuple[CameraModel, dict]:
    base = cfg.recorder_camera
    if cfg.camera_mode == "matched":
        return base, {"fov": 0.0, "aspect": 0.0, "height": 0.0}
    rng = episode_stream(cfg.pose_seed, "camera")
    if cfg.camera_mode == "cross":
        return sample_cross_camera(base, rng)
    sign = 1.0 if rng.uniform() < 0.5 else -1.0
    deltas = {"fov": 0.0, "aspect": 0.0, "height": 0.0}
    deltas[cfg.sweep_parameter] = sign * cfg.sweep_magnitude
    return offset_camera(base, deltas["fov"], deltas["aspect"], deltas["height"]), deltas


# ---------------------------------------------------------------------------
# episodes


@lru_cache(maxsize=64)
def _world(seed: int, params: WorldParams):
    return generate_world(seed, params)


@lru_cache(maxsize=256)
def _trajectory(world_seed: int, world_params: WorldParams, seed: int, camera: CameraModel,
                params: TrajectoryParams):
    return sample_reference_trajectory(_world(world_seed, world_params), seed, camera, params)


def _goal_and_anchor(cfg: EpisodeConfig, n: int) -> tuple[int, int]:
    if cfg.task == "to_end":
        return n - 1, 0
    if cfg.task == "to_start":
        return 0, n - 1
    goal = cfg.goal_index
    if goal is None:
        goal = int(episode_stream(cfg.pose_seed, "goal").integers(n))
    if goal >= n:
        raise ValueError(f"goal index {goal} outside trajectory of {n} frames")
    anchor = 0 if cfg.init == "on" else int(episode_stream(cfg.pose_seed, "anchor").integers(n))
    return goal, anchor


def _relation(pose: Pose, traj) -> tuple[bool, float]:
    """(facing against the nearest frame's heading, distance to the path)."""
    k = int(np.argmin(np.linalg.norm(traj.positions[:, :2] - pose.xy, axis=1)))
    opposing = abs(wrap_angle(pose.yaw - traj.poses[k].yaw)) > math.pi / 2
    return opposing, float(distance_to_path(traj, pose.xy)[0])


def run_episode(cfg: EpisodeConfig, trace: bool = False) -> EpisodeResult:
    """Simulate one episode; sampling failures yield an invalid result."""
    res = EpisodeResult(cfg.episode_id)
    try:
        world = _world(cfg.world_seed, cfg.world)
        traj = _trajectory(cfg.world_seed, cfg.world, cfg.trajectory_seed, cfg.recorder_camera,
                           cfg.trajectory)
        n = len(traj)
        goal_idx, anchor = _goal_and_anchor(cfg, n)
        camera, deltas = episode_camera(cfg)
        pose, init_dist = sample_query_pose(world, traj, cfg.init,
                                            episode_stream(cfg.pose_seed, "init"), camera,
                                            anchor, cfg.query, cfg.target_offset)
        goal_xy = traj.poses[goal_idx].xy
        geodesic = plan_path(world, pose.xy, goal_xy, cfg.sim.agent_radius).length
    except (WorldGenerationError, NoPathError, NoValidStartError) as exc:
        res.valid = False
        res.error = f"{type(exc).__name__}: {exc}"
        return res

    res.goal_index = goal_idx
    res.n_frames = n
    res.geodesic = geodesic
    res.init_distance = init_dist
    res.delta_fov_deg, res.delta_aspect, res.delta_height = deltas["fov"], deltas["aspect"], deltas["height"]

    df = world.distance_field
    noise_rng = episode_stream(cfg.pose_seed, "noise")
    noise_seed = int(noise_rng.integers(2**31)) if cfg.noise.persistence > 0 else 0
    # signed per-episode bias scale, uniform in [-1, 1]
    bias_scale = float(noise_rng.uniform(-1.0, 1.0)) if cfg.noise.bias_gain > 0 else 0.0
    radius = cfg.sim.agent_radius
    if cfg.controller == "mppi":
        ctrl = MppiController(cfg.mppi, pose, episode_stream(cfg.pose_seed, "controller"))
        dt = cfg.mppi.dt
    else:
        ctrl = None
        dt = cfg.sim.dt
        stop = stop_distance(cfg.yaw, dt, radius)

    dist = float(np.linalg.norm(pose.xy - goal_xy))
    res.min_distance = dist
    success = dist <= cfg.success_radius
    res.success_step = 0 if success else -1
    steps = 0
    while not success and steps < cfg.step_cap:
        g = oracle_guidance(world, camera, pose, traj)
        if not cfg.noise.is_zero:
            rng = noise_rng
            if cfg.noise.persistence > 0:
                rng = persistent_rng(noise_seed, pose, cfg.noise.persistence)
            g = perturb_guidance(g, cfg.noise, rng, *_relation(pose, traj), bias_scale)
        if trace:
            res.step_trace.append(trace_record(steps, pose, g))
        if ctrl is None:
            cmd = yaw_command(select_target(g, goal_idx, cfg.yaw.lookahead), cfg.yaw)
            if cfg.controller == "yaw_avoid":
                scan = render_depth(world, camera, pose, cfg.sim.n_rays)
                cmd = avoid_obstacles(cmd, scan, stop, cfg.yaw.omega_max, camera.fov_h)
            new_pose, hit = step_ground_agent(pose, cmd, world, dt, radius)
        else:
            scan = render_depth(world, camera, pose, cfg.sim.n_rays)
            v_xy, omega, v_z = ctrl.step(pose, g, scan, camera, df, goal_idx)
            new_pose, hit = step_holonomic_agent(pose, v_xy, omega, v_z, world, dt, radius)
        res.path_length += float(np.linalg.norm(new_pose.xy - pose.xy))
        res.collisions += int(hit)
        pose = new_pose
        steps += 1
        dist = float(np.linalg.norm(pose.xy - goal_xy))
        res.min_distance = min(res.min_distance, dist)
        if dist <= cfg.success_radius:
            success = True
            res.success_step = steps
    res.success = success
    res.steps = steps
    res.final_distance = dist
    return res


def run_suite(configs, workers: int = 1, trace: bool = False) -> list[EpisodeResult]:
    """Run episodes, optionally in a process pool; results come back sorted by id."""
    configs = list(configs)
    if workers <= 1 or len(configs) <= 1:
        results = [run_episode(c, trace) for c in configs]
    else:
        chunk = max(1, len(configs) // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_episode, configs, [trace] * len(configs), chunksize=chunk))
    return sorted(results, key=lambda r: r.episode_id)


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class SuiteConfig:
    n_trajectories: int = 50
    poses_per_trajectory: int = 2
    tasks: tuple[str, ...] = TASKS
    inits: tuple[str, ...] = INITS
    camera_modes: tuple[str, ...] = ("matched", "cross")
    controller: str = "yaw_avoid"
    offset_strata: tuple[float, ...] = ()  # replay each off start at these path distances
    master_seed: int = 0
    noise: NoiseModel = NoiseModel()
    step_cap: int = 1000
    success_radius: float = 0.5
    sim: SimParams = SimParams()
    world: WorldParams = WorldParams()
    trajectory: TrajectoryParams = TrajectoryParams()
    query: QueryParams = QueryParams()
    recorder_camera: CameraModel = CameraModel()
    yaw: YawControllerConfig = YawControllerConfig()
    mppi: MppiConfig = MppiConfig()


def build_suite(suite: SuiteConfig) -> list[EpisodeConfig]:
    """Cross tasks x init modes x camera modes x trajectories x initial poses.

    any_point is only paired with off-trajectory starts. With
    ``offset_strata`` every off-trajectory start is repeated once per
    stratum, reusing its seeds so the strata are paired samples.
    """
    configs = []
    eid = 0
    m = suite.master_seed
    for t in range(suite.n_trajectories):
        world_seed = derive_seed(m, _SEED_TAGS["world"], t)
        traj_seed = derive_seed(m, _SEED_TAGS["trajectory"], t)
        for p in range(suite.poses_per_trajectory):
            pose_seed = derive_seed(m, _SEED_TAGS["pose"], t, p)
            for task in suite.tasks:
                for init in suite.inits:
                    if task == "any_point" and init == "on":
                        continue
                    strata = suite.offset_strata if init == "off" and suite.offset_strata else (None,)
                    for cam, offset in itertools.product(suite.camera_modes, strata):
                        configs.append(EpisodeConfig(
                            episode_id=eid, world_seed=world_seed, trajectory_seed=traj_seed,
                            pose_seed=pose_seed, task=task, init=init, camera_mode=cam,
                            target_offset=offset,
                            controller=suite.controller, noise=suite.noise,
                            step_cap=suite.step_cap, success_radius=suite.success_radius,
                            sim=suite.sim, world=suite.world, trajectory=suite.trajectory,
                            query=suite.query, recorder_camera=suite.recorder_camera,
                            yaw=suite.yaw, mppi=suite.mppi))
                        eid += 1
    return configs


def check_sweep(parameter: str, magnitudes) -> None:
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}")
    cap = MISMATCH_STATS[parameter][1]
    for mag in magnitudes:
        if not 0 <= mag <= cap + 1e-12:
            raise ValueError(f"{parameter} magnitude {mag} outside [0, {cap}]")


def sweep_mismatch(parameter: str, magnitudes, base: list[EpisodeConfig],
                   workers: int = 1) -> dict[float, list[EpisodeResult]]:
    """Re-run ``base`` with one camera parameter offset by each magnitude.

    The sign of the offset is drawn per episode and shared across magnitudes.
    """
    check_sweep(parameter, magnitudes)
    out = {}
    for mag in magnitudes:
        cfgs = [replace(c, camera_mode="sweep", sweep_parameter=parameter, sweep_magnitude=float(mag))
                for c in base]
        out[float(mag)] = run_suite(cfgs, workers)
    return out


# ---------------------------------------------------------------------------
# metrics


def _valid(results):
    return [r for r in results if r.valid]


def success_rate(results) -> float:
    rs = _valid(results)
    if not rs:
        raise ValueError("no valid episodes")
    return sum(r.success for r in rs) / len(rs)


def spl_term(r: EpisodeResult) -> float:
    if not r.success:
        return 0.0
    if r.geodesic <= 0.0:
        return 1.0
    return r.geodesic / max(r.path_length, r.geodesic)


def spl(results) -> float:
    rs = _valid(results)
    if not rs:
        raise ValueError("no valid episodes")
    return sum(spl_term(r) for r in rs) / len(rs)


def result_record(cfg: EpisodeConfig, res: EpisodeResult) -> dict:
    rec = {k: v for k, v in asdict(res).items() if k != "step_trace"}
    rec["config"] = asdict(cfg)
    return rec


GROUP_KEYS = ("task", "init", "camera_mode", "controller")


def aggregate(records: list[dict], keys=GROUP_KEYS) -> list[dict]:
    """SR/SPL table from raw episode records (JSON-lines schema)."""
    groups = defaultdict(list)
    for rec in records:
        if not rec["valid"]:
            continue
        groups[tuple(rec["config"][k] for k in keys)].append(rec)
    rows = []
    for key in sorted(groups):
        rs = groups[key]
        n = len(rs)
        succ = [r["success"] for r in rs]
        terms = []
        for r in rs:
            if not r["success"]:
                terms.append(0.0)
            elif r["geodesic"] <= 0:
                terms.append(1.0)
            else:
                terms.append(r["geodesic"] / max(r["path_length"], r["geodesic"]))
        row = dict(zip(keys, key))
        row.update(SR=sum(succ) / n, SPL=sum(terms) / n, n=n,
                   mean_steps=sum(r["steps"] for r in rs) / n,
                   mean_collisions=sum(r["collisions"] for r in rs) / n)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# curves


def init_distance_curve(records: list[dict], bucket: float = 0.5) -> list[dict]:
    """SR per init-distance bucket over off-trajectory episodes."""
    groups = defaultdict(list)
    for rec in records:
        if rec["valid"] and rec["config"]["init"] == "off":
            groups[int(math.floor(rec["init_distance"] / bucket + 1e-9))].append(rec["success"])
    return [{"bucket_start": k * bucket, "n": len(v), "SR": sum(v) / len(v)}
            for k, v in sorted(groups.items())]


_MISMATCH_BINS = {"fov": 5.0, "aspect": 0.1, "height": 0.1}
_DELTA_FIELD = {"fov": "delta_fov_deg", "aspect": "delta_aspect", "height": "delta_height"}


def mismatch_curve(records: list[dict]) -> list[dict]:
    """SR against |camera offset| per parameter.

    Sweep episodes contribute to their swept parameter at the exact sweep
    magnitude; cross-camera episodes are binned by each parameter's offset.
    """
    groups = defaultdict(list)
    for rec in records:
        if not rec["valid"]:
            continue
        cfg = rec["config"]
        if cfg["camera_mode"] == "sweep":
            groups[(cfg["sweep_parameter"], float(cfg["sweep_magnitude"]))].append(rec["success"])
        elif cfg["camera_mode"] == "cross":
            for name, width in _MISMATCH_BINS.items():
                mag = abs(rec[_DELTA_FIELD[name]])
                groups[(name, round(math.floor(mag / width + 1e-9) * width, 6))].append(rec["success"])
    return [{"parameter": p, "magnitude": m, "n": len(v), "SR": sum(v) / len(v)}
            for (p, m), v in sorted(groups.items())]


def smooth(values, window: int = 3) -> list[float]:
    """Centered moving average; the window shrinks at the ends."""
    values = list(values)
    half = window // 2
    out = []
    for i in range(len(values)):
        chunk = values[max(0, i - half):i + half + 1]
        out.append(sum(chunk) / len(chunk))
    return out
