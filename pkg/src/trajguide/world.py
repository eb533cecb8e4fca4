"""Procedural 2.5D worlds: occupancy grids of extruded obstacles.

Cell (ix, iy) covers [ix*c, (ix+1)*c) x [iy*c, (iy+1)*c) in meters, with the
arena origin at (0, 0). Arrays are indexed ``[iy, ix]``.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import _raycast
from .geometry import CameraModel, Pose, project_many, wrap_angle

WORLD_HEADER = "trajguide-world"
WORLD_VERSION = "v1"
DF_SATURATION = 5.0
SQRT2 = math.sqrt(2.0)


class WorldGenerationError(RuntimeError):
    pass


class NoPathError(RuntimeError):
    pass


class NoValidStartError(RuntimeError):
    pass


@dataclass(frozen=True)
class WorldParams:
    width: int = 100
    height: int = 100
    cell_size: float = 0.25
    density: float = 0.15
    obstacle_height: float = 2.5
    min_rect: int = 4  # cells
    max_rect: int = 16
    max_retries: int = 2000

    def __post_init__(self):
        if not 0.0 <= self.density <= 0.35:
            raise ValueError(f"density must lie in [0, 0.35], got {self.density}")
        if self.width < 10 or self.height < 10:
            raise ValueError("world must be at least 10x10 cells")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")


@dataclass(frozen=True, eq=False)
class World:
    occupancy: np.ndarray  # bool, True = obstacle
    cell_size: float
    obstacle_height: float = 2.5

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if occ.all():
            raise ValueError("world has no free cell")

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (0.0, 0.0, self.width * self.cell_size, self.height * self.cell_size)

    def __eq__(self, other):
        if not isinstance(other, World):
            return NotImplemented
        return (self.cell_size == other.cell_size
                and self.obstacle_height == other.obstacle_height
                and np.array_equal(self.occupancy, other.occupancy))

    __hash__ = object.__hash__

    def in_bounds(self, x: float, y: float) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= x <= x1 and y0 <= y <= y1

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ix = min(max(int(math.floor(x / self.cell_size)), 0), self.width - 1)
        iy = min(max(int(math.floor(y / self.cell_size)), 0), self.height - 1)
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> np.ndarray:
        return np.array([(ix + 0.5) * self.cell_size, (iy + 0.5) * self.cell_size])

    def is_free(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        ix, iy = self.cell_of(x, y)
        return not self.occupancy[iy, ix]

    @cached_property
    def distance_field(self) -> "DistanceField":
        return build_distance_field(self)

    @cached_property
    def free_component(self) -> np.ndarray:
        """Mask of the largest 4-connected free component."""
        return _largest_component(~self.occupancy)

    # text format

    def to_text(self) -> str:
        lines = [f"{WORLD_HEADER} {WORLD_VERSION} {self.width} {self.height} "
                 f"{self.cell_size!r} {self.obstacle_height!r}"]
        for row in self.occupancy:
            lines.append("".join("#" if c else "." for c in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "World":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty world file")
        head = lines[0].split()
        if len(head) != 6 or head[0] != WORLD_HEADER:
            raise ValueError(f"bad world header: {lines[0]!r}")
        if head[1] != WORLD_VERSION:
            raise ValueError(f"unsupported world version {head[1]!r}")
        width, height = int(head[2]), int(head[3])
        rows = lines[1:]
        if len(rows) != height or any(len(r) != width for r in rows):
            raise ValueError("world grid does not match header dimensions")
        if any(set(r) - {".", "#"} for r in rows):
            raise ValueError("world grid may only contain '.' and '#'")
        occ = np.array([[c == "#" for c in r] for r in rows], dtype=bool)
        return cls(occ, float(head[4]), float(head[5]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "World":
        return cls.from_text(Path(path).read_text())


def _largest_component(free: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(free)
    if n == 0:
        return np.zeros_like(free)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def empty_world(width: int, height: int, cell_size: float = 0.25, obstacle_height: float = 2.5) -> World:
    occ = np.zeros((height, width), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True
    return World(occ, cell_size, obstacle_height)


def generate_world(seed: int, params: WorldParams = WorldParams()) -> World:
    """Closed arena with random axis-aligned rectangular obstacles.

    Rectangles are added until the interior obstacle fraction reaches
    ``params.density``; any rectangle that would leave the largest free
    component below 90% of the free cells is rejected.
    """
    rng = np.random.default_rng(seed)
    occ = empty_world(params.width, params.height).occupancy.copy()
    interior = (params.width - 2) * (params.height - 2)
    target = params.density * interior
    filled = 0
    rejections = 0
    while filled < target:
        w = int(rng.integers(params.min_rect, params.max_rect + 1))
        h = int(rng.integers(params.min_rect, params.max_rect + 1))
        w = min(w, params.width - 2)
        h = min(h, params.height - 2)
        x0 = int(rng.integers(1, params.width - 1 - w + 1))
        y0 = int(rng.integers(1, params.height - 1 - h + 1))
        trial = occ.copy()
        trial[y0:y0 + h, x0:x0 + w] = True
        free = ~trial
        n_free = int(free.sum())
        if n_free > 0 and _largest_component(free).sum() >= 0.9 * n_free:
            occ = trial
            filled = int(occ[1:-1, 1:-1].sum())
            rejections = 0
        else:
            rejections += 1
            if rejections > params.max_retries:
                raise WorldGenerationError(
                    f"could not place obstacles at density {params.density} (seed {seed})")
    return World(occ, params.cell_size, params.obstacle_height)


# ---------------------------------------------------------------------------
# raycasting and depth


def _check_point(world: World, p) -> None:
    if not world.in_bounds(p[0], p[1]):
        raise ValueError(f"point {tuple(p)} lies outside the world bounds {world.bounds}")


def raycast(world: World, origin, target) -> bool:
    """True iff the 3D segment origin -> target passes no obstacle."""
    _check_point(world, origin)
    _check_point(world, target)
    c = world.cell_size
    return bool(_raycast.segment_clear(
        world.occupancy, origin[0] / c, origin[1] / c, float(origin[2]),
        target[0] / c, target[1] / c, float(target[2]), world.obstacle_height))


def raycast_many(world: World, origin, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=float)
    if len(targets) == 0:
        return np.zeros(0, dtype=bool)
    c = world.cell_size
    ends = np.column_stack([targets[:, 0] / c, targets[:, 1] / c, targets[:, 2]])
    return _raycast.segments_clear(world.occupancy, origin[0] / c, origin[1] / c,
                                   float(origin[2]), ends, world.obstacle_height)


@dataclass(frozen=True)
class DepthScan:
    u: np.ndarray  # image column of each ray, in [-1, 1]
    depth: np.ndarray  # meters along the ray
    ground: np.ndarray  # True where the ray meets the floor before an obstacle

    def __len__(self) -> int:
        return len(self.depth)

    def depth_at(self, u: float) -> float:
        return float(self.depth[int(np.argmin(np.abs(self.u - u)))])


def render_depth(world: World, camera: CameraModel, observer: Pose, n_rays: int = 32,
                 v_row: float = 0.0) -> DepthScan:
    """Planar depth scan across one image row.

    Rays sit at evenly spaced u in [-1, 1]. With zero pitch the row ``v = 0``
    is horizontal and never reaches the floor; for ``v_row > 0`` the ground
    hit range caps the obstacle depth.
    """
    if n_rays < 8:
        raise ValueError("render_depth needs at least 8 rays")
    u = np.linspace(-1.0, 1.0, n_rays)
    angles = observer.yaw - np.arctan(u * camera.tan_half_h)
    c = world.cell_size
    max_range = math.hypot(world.width, world.height)
    depth_cells = _raycast.ray_depths(world.occupancy, observer.x / c, observer.y / c,
                                      angles, max_range)
    # horizontal distance -> distance along the (possibly tilted) ray
    slope = v_row * camera.tan_half_v / np.sqrt(1.0 + (u * camera.tan_half_h) ** 2)
    stretch = np.sqrt(1.0 + slope ** 2)
    depth = depth_cells * c * stretch
    ground = np.zeros(n_rays, dtype=bool)
    if v_row > 0 and observer.z > 0:
        ground_range = observer.z / slope * stretch
        ground = ground_range < depth
        depth = np.where(ground, ground_range, depth)
    return DepthScan(u, depth, ground)


# ---------------------------------------------------------------------------
# distance field


@dataclass(frozen=True, eq=False)
class DistanceField:
    values: np.ndarray  # meters at cell centers, indexed [iy, ix]
    cell_size: float
    saturation: float = DF_SATURATION

    def at_cell(self, ix: int, iy: int) -> float:
        return float(self.values[iy, ix])

    def __call__(self, x, y):
        """Bilinear interpolation between cell centers (clamped at the grid edge)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ny, nx = self.values.shape
        fx = np.clip(x / self.cell_size - 0.5, 0.0, nx - 1.0)
        fy = np.clip(y / self.cell_size - 0.5, 0.0, ny - 1.0)
        x0 = np.minimum(np.floor(fx).astype(np.intp), nx - 2)
        y0 = np.minimum(np.floor(fy).astype(np.intp), ny - 2)
        tx = fx - x0
        ty = fy - y0
        v = self.values
        out = ((1 - tx) * (1 - ty) * v[y0, x0] + tx * (1 - ty) * v[y0, x0 + 1]
               + (1 - tx) * ty * v[y0 + 1, x0] + tx * ty * v[y0 + 1, x0 + 1])
        return out if out.ndim else float(out)


def build_distance_field(world: World, saturation: float = DF_SATURATION) -> DistanceField:
    d = ndimage.distance_transform_edt(~world.occupancy) * world.cell_size
    d = np.minimum(d, saturation)
    d.setflags(write=False)
    return DistanceField(d, world.cell_size, saturation)


def has_clearance(world: World, x: float, y: float, radius: float) -> bool:
    if not world.is_free(x, y):
        return False
    return world.distance_field(x, y) >= radius


# ---------------------------------------------------------------------------
# planning

_MOVES = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]


@dataclass(frozen=True)
class PlannedPath:
    polyline: np.ndarray  # (n, 2) meters, smoothed
    length: float  # grid-optimal geodesic length, meters
    cells: np.ndarray  # (m, 2) ix, iy of the grid path

    @property
    def polyline_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())


def traversable(world: World, clearance: float) -> np.ndarray:
    return (~world.occupancy) & (world.distance_field.values >= clearance)


def _grid_graph(mask: np.ndarray, cell_size: float) -> csr_matrix:
    ny, nx = mask.shape
    idx = np.arange(nx * ny).reshape(ny, nx)
    rows, cols, costs = [], [], []
    for dx, dy in _MOVES:
        ys = slice(max(0, -dy), ny - max(0, dy))
        xs = slice(max(0, -dx), nx - max(0, dx))
        ys2 = slice(max(0, dy), ny - max(0, -dy))
        xs2 = slice(max(0, dx), nx - max(0, -dx))
        ok = mask[ys, xs] & mask[ys2, xs2]
        if dx and dy:
            # no corner cutting
            side_a = mask[ys, xs2]
            side_b = mask[ys2, xs]
            ok &= side_a & side_b
        rows.append(idx[ys, xs][ok])
        cols.append(idx[ys2, xs2][ok])
        costs.append(np.full(int(ok.sum()), cell_size * (SQRT2 if dx and dy else 1.0)))
    return csr_matrix((np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nx * ny, nx * ny))


_graph_cache: dict = {}


def _graph_for(world: World, clearance: float):
    key = (id(world), clearance)
    hit = _graph_cache.get(key)
    if hit is not None and hit[0] is world:
        return hit[1], hit[2]
    mask = traversable(world, clearance)
    graph = _grid_graph(mask, world.cell_size)
    if len(_graph_cache) > 64:
        _graph_cache.clear()
    _graph_cache[key] = (world, mask, graph)
    return mask, graph


def path_length_from_cells(cells: np.ndarray, cell_size: float) -> float:
    """Length of a grid path as ``(n_straight + sqrt(2) n_diagonal) * cell_size``."""
    if len(cells) < 2:
        return 0.0
    steps = np.abs(np.diff(cells, axis=0)).sum(axis=1)
    n_diag = int((steps == 2).sum())
    n_straight = int((steps == 1).sum())
    return (n_straight + SQRT2 * n_diag) * cell_size


def plan_path(world: World, start, goal, clearance: float = 0.2) -> PlannedPath:
    """Shortest 8-connected grid path, then string-pulled within ``clearance``.

    ``length`` is the grid-optimal length between the start and goal cell
    centers, i.e. before smoothing.
    """
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    mask, graph = _graph_for(world, clearance)
    sx, sy = world.cell_of(*start)
    gx, gy = world.cell_of(*goal)
    if not mask[sy, sx] or not mask[gy, gx]:
        raise NoPathError("start or goal is not in traversable free space")
    nx = world.width
    s_idx, g_idx = sy * nx + sx, gy * nx + gx
    if s_idx == g_idx:
        cells = np.array([[sx, sy]])
    else:
        dist, pred = dijkstra(graph, indices=s_idx, return_predecessors=True)
        if not np.isfinite(dist[g_idx]):
            raise NoPathError(f"goal {tuple(goal)} unreachable from {tuple(start)}")
        chain = [g_idx]
        while chain[-1] != s_idx:
            chain.append(int(pred[chain[-1]]))
        chain.reverse()
        cells = np.array([[i % nx, i // nx] for i in chain])
    length = path_length_from_cells(cells, world.cell_size)
    if len(cells) == 1 and np.allclose(start, goal):
        return PlannedPath(np.array([start, goal]), 0.0, cells)
    centers = (cells + 0.5) * world.cell_size
    waypoints = np.vstack([start, centers[1:-1], goal]) if len(cells) > 1 else np.array([start, goal])
    return PlannedPath(string_pull(world, waypoints, clearance), length, cells)


def segment_has_clearance(world: World, a, b, clearance: float) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / (world.cell_size / 4.0))) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = a + t * (b - a)
    ix = np.clip((pts[:, 0] // world.cell_size).astype(int), 0, world.width - 1)
    iy = np.clip((pts[:, 1] // world.cell_size).astype(int), 0, world.height - 1)
    if world.occupancy[iy, ix].any():
        return False
    return bool((world.distance_field(pts[:, 0], pts[:, 1]) >= clearance).all())


def string_pull(world: World, waypoints: np.ndarray, clearance: float) -> np.ndarray:
    out = [waypoints[0]]
    i = 0
    n = len(waypoints)
    while i < n - 1:
        j = n - 1
        while j > i + 1 and not segment_has_clearance(world, waypoints[i], waypoints[j], clearance):
            j -= 1
        out.append(waypoints[j])
        i = j
    return np.array(out)


def dijkstra_oracle(world: World, start_cell, goal_cell, clearance: float = 0.2) -> float:
    """Plain heap Dijkstra over cells, independent of :func:`plan_path`'s graph code."""
    mask = traversable(world, clearance)
    ny, nx = mask.shape
    best = {tuple(start_cell): (0.0, None)}
    heap = [(0.0, tuple(start_cell))]
    done = set()
    while heap:
        d, cur = heapq.heappop(heap)
        if cur in done:
            continue
        done.add(cur)
        if cur == tuple(goal_cell):
            break
        x, y = cur
        for dx, dy in _MOVES:
            x2, y2 = x + dx, y + dy
            if not (0 <= x2 < nx and 0 <= y2 < ny) or not mask[y2, x2]:
                continue
            if dx and dy and not (mask[y, x2] and mask[y2, x]):
                continue
            nd = d + (SQRT2 if dx and dy else 1.0) * world.cell_size
            if (x2, y2) not in best or nd < best[(x2, y2)][0]:
                best[(x2, y2)] = (nd, cur)
                heapq.heappush(heap, (nd, (x2, y2)))
    if tuple(goal_cell) not in done:
        raise NoPathError("oracle: unreachable")
    chain = [tuple(goal_cell)]
    while best[chain[-1]][1] is not None:
        chain.append(best[chain[-1]][1])
    return path_length_from_cells(np.array(chain[::-1]), world.cell_size)


# ---------------------------------------------------------------------------
# trajectories and query poses


@dataclass(frozen=True)
class TrajectoryParams:
    min_geodesic: float = 8.0
    max_geodesic: float = 60.0
    min_spacing: float = 0.5
    max_spacing: float = 1.5
    max_frames: int = 40
    sigma_rot: float = math.radians(5.0)
    clearance: float = 1.0  # recorder keeps this distance from obstacles
    max_retries: int = 200


@dataclass(frozen=True)
class ReferenceTrajectory:
    poses: tuple[Pose, ...]
    camera: CameraModel
    dense_path: np.ndarray = field(compare=False)
    arclengths: np.ndarray = field(compare=False)  # along dense_path, per kept frame
    max_frame_spacing: float = 1.5

    def __post_init__(self):
        if not 2 <= len(self.poses) <= 40:
            raise ValueError(f"trajectory must hold 2..40 frames, got {len(self.poses)}")

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.z] for p in self.poses])

    def to_json(self) -> str:
        return json.dumps([p.to_dict() for p in self.poses])

    @classmethod
    def from_json(cls, text: str, camera: CameraModel) -> "ReferenceTrajectory":
        poses = tuple(Pose(**d) for d in json.loads(text))
        xy = np.array([[p.x, p.y] for p in poses])
        arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
        gaps = np.diff(arc)
        return cls(poses, camera, xy, arc, float(gaps.max()) if len(gaps) else 0.0)


def frame_arclengths(rng: np.random.Generator, total: float, lo: float, hi: float) -> np.ndarray:
    """Frame positions along a path of length ``total`` with U(lo, hi) gaps."""
    s = [0.0]
    while True:
        nxt = s[-1] + rng.uniform(lo, hi)
        if nxt > total:
            break
        s.append(nxt)
    return np.array(s)


def _point_at(polyline: np.ndarray, cum: np.ndarray, s: float):
    k = int(np.searchsorted(cum, s, side="right") - 1)
    k = min(max(k, 0), len(polyline) - 2)
    seg = polyline[k + 1] - polyline[k]
    seg_len = cum[k + 1] - cum[k]
    t = 0.0 if seg_len == 0 else (s - cum[k]) / seg_len
    return polyline[k] + t * seg, math.atan2(seg[1], seg[0])


def _random_free_point(world: World, rng: np.random.Generator, mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    k = int(rng.integers(len(xs)))
    jitter = rng.uniform(-0.25, 0.25, size=2) * world.cell_size
    return world.cell_center(xs[k], ys[k]) + jitter


def sample_reference_trajectory(world: World, seed, recorder_camera: CameraModel,
                                params: TrajectoryParams = TrajectoryParams()) -> ReferenceTrajectory:
    """Recorded route between random start/goal cells with stochastic frame spacing.

    ``seed`` feeds a SeedSequence whose three children drive endpoint
    selection, frame spacing and yaw noise respectively.
    """
    ss = np.random.SeedSequence(seed)
    rng_ends, rng_gaps, rng_yaw = (np.random.default_rng(s) for s in ss.spawn(3))
    mask = traversable(world, params.clearance) & world.free_component
    if mask.sum() < 2:
        raise NoPathError("world too cluttered for a reference trajectory")
    path = None
    for _ in range(params.max_retries):
        a = _random_free_point(world, rng_ends, mask)
        b = _random_free_point(world, rng_ends, mask)
        if np.linalg.norm(a - b) < params.min_geodesic:
            continue
        try:
            cand = plan_path(world, a, b, params.clearance)
        except NoPathError:
            continue
        if params.min_geodesic <= cand.length <= params.max_geodesic:
            path = cand
            break
    if path is None:
        raise NoPathError("no start/goal pair with admissible geodesic separation")
    poly = path.polyline
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(poly, axis=0), axis=1))])
    s = frame_arclengths(rng_gaps, cum[-1], params.min_spacing, params.max_spacing)
    stride = 1
    if len(s) > params.max_frames:
        keep = np.round(np.linspace(0, len(s) - 1, params.max_frames)).astype(int)
        stride = int(np.diff(keep).max())
        s = s[keep]
    yaw_noise = rng_yaw.normal(0.0, params.sigma_rot, size=len(s)) if params.sigma_rot > 0 else np.zeros(len(s))
    poses = []
    for sk, eps in zip(s, yaw_noise):
        xy, heading = _point_at(poly, cum, sk)
        poses.append(Pose(float(xy[0]), float(xy[1]), recorder_camera.mount_height,
                          wrap_angle(heading + eps)))
    return ReferenceTrajectory(tuple(poses), recorder_camera, poly, s,
                               params.max_spacing * stride)


@dataclass(frozen=True)
class QueryParams:
    offset_min: float = 1.5
    offset_mode: float = 2.0
    offset_max: float = 10.0
    offset_law: str = "triangular"  # or "uniform" on [offset_min, offset_max]
    min_visible: int = 3
    clearance: float = 0.2
    max_retries: int = 5000

    def __post_init__(self):
        if not 0 <= self.offset_min <= self.offset_mode <= self.offset_max:
            raise ValueError("need 0 <= offset_min <= offset_mode <= offset_max")
        if self.offset_law not in ("triangular", "uniform"):
            raise ValueError(f"unknown offset_law {self.offset_law!r}")
        if self.min_visible < 0 or self.max_retries < 1:
            raise ValueError("min_visible must be >= 0 and max_retries >= 1")


def visible_count(world: World, camera: CameraModel, query: Pose, traj: ReferenceTrajectory) -> int:
    pts = traj.positions
    _, _, inside = project_many(camera, query, pts)
    inside &= np.linalg.norm(pts - query.position, axis=1) >= 0.05
    if not inside.any():
        return 0
    return int(raycast_many(world, query.position, pts[inside]).sum())


def distance_to_path(traj: ReferenceTrajectory, points) -> np.ndarray:
    """Planar distance from each point to the dense reference polyline."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))[:, :2]
    path = traj.dense_path[:, :2]
    if len(path) == 1:
        return np.linalg.norm(pts - path[0], axis=1)
    a, ab = path[:-1], np.diff(path, axis=0)
    ab2 = np.maximum((ab * ab).sum(axis=1), 1e-12)
    rel = pts[:, None, :] - a[None]
    t = np.clip((rel * ab[None]).sum(axis=2) / ab2, 0.0, 1.0)
    gap = rel - t[..., None] * ab[None]
    return np.sqrt((gap * gap).sum(axis=2)).min(axis=1)


_MARCH_STEP = 0.05


def _point_at_path_distance(traj, origin, theta: float, r: float, reach: float):
    """First point along a ray from ``origin`` whose path distance reaches ``r``."""
    s = np.arange(0.0, reach + _MARCH_STEP, _MARCH_STEP)
    pts = origin + s[:, None] * np.array([math.cos(theta), math.sin(theta)])
    d = distance_to_path(traj, pts)
    hit = np.flatnonzero(d >= r)
    if len(hit) == 0:
        return None
    i = hit[0]
    if i == 0:
        return pts[0]
    w = (r - d[i - 1]) / max(d[i] - d[i - 1], 1e-12)
    return pts[i - 1] + w * (pts[i] - pts[i - 1])


def sample_query_pose(world: World, traj: ReferenceTrajectory, mode: str, seed,
                      agent_camera: CameraModel, anchor: int = 0,
                      params: QueryParams = QueryParams(),
                      offset: float | None = None) -> tuple[Pose, float]:
    """Start pose for an episode and its distance from the reference path.

    ``on`` returns the anchor frame itself at the agent's mount height.
    ``off`` draws a target distance from the path (triangular law peaked at
    2 m by default), walks from the anchor frame in a uniform direction
    until the path is that far away, draws a uniform heading, and keeps the
    first candidate with enough clearance that sees at least
    ``min_visible`` reference frames. A given ``offset`` replaces the drawn
    distance while consuming the same random stream, so starts that share a
    seed differ only in how far out they sit.
    """
    ref = traj.poses[anchor]
    if mode == "on":
        return ref.replace(z=agent_camera.mount_height), 0.0
    if mode != "off":
        raise ValueError(f"unknown init mode {mode!r}")
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = world.bounds
    reach = math.hypot(x1 - x0, y1 - y0)
    for _ in range(params.max_retries):
        if params.offset_law == "uniform":
            r = rng.uniform(params.offset_min, params.offset_max)
        else:
            r = rng.triangular(params.offset_min, params.offset_mode, params.offset_max)
        if offset is not None:
            r = offset
        theta = rng.uniform(-math.pi, math.pi)
        yaw = rng.uniform(-math.pi, math.pi)
        xy = _point_at_path_distance(traj, ref.xy, theta, r, reach)
        if xy is None:
            continue
        x, y = float(xy[0]), float(xy[1])
        if not world.in_bounds(x, y) or not has_clearance(world, x, y, params.clearance):
            continue
        ix, iy = world.cell_of(x, y)
        if not world.free_component[iy, ix]:
            continue
        pose = Pose(x, y, agent_camera.mount_height, yaw)
        if visible_count(world, agent_camera, pose, traj) >= params.min_visible:
            return pose, float(distance_to_path(traj, pose.xy)[0])
    raise NoValidStartError("no off-trajectory start with enough visible reference frames")
