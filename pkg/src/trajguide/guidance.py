"""Guidance triplets (image point, visibility logit, normalized distance) per reference frame."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import EPS_NEAR, CameraModel, Pose, border_clamped, normalize_distances, project_many
from .world import ReferenceTrajectory, World, raycast_many

LOGIT_VISIBLE = 10.0


@dataclass(frozen=True)
class GuidanceTriplet:
    p: tuple[float, float]
    v_logit: float
    d: float

    @property
    def visible(self) -> bool:
        return self.v_logit > 0.0


@dataclass(frozen=True)
class Guidance:
    """Triplets for all N reference frames, stored column-wise.

    ``scale`` is the normalization constant (meters) that maps ``d`` back to
    Euclidean distance for the visible entries.
    """
    p: np.ndarray  # (N, 2)
    v_logit: np.ndarray  # (N,)
    d: np.ndarray  # (N,)
    scale: float = 0.0

    def __len__(self) -> int:
        return len(self.d)

    def __getitem__(self, i: int) -> GuidanceTriplet:
        return GuidanceTriplet((float(self.p[i, 0]), float(self.p[i, 1])),
                               float(self.v_logit[i]), float(self.d[i]))

    @property
    def visible(self) -> np.ndarray:
        return self.v_logit > 0.0

    @classmethod
    def from_triplets(cls, triplets) -> "Guidance":
        triplets = list(triplets)
        if not triplets:
            return cls(np.zeros((0, 2)), np.zeros(0), np.zeros(0))
        return cls(np.array([t.p for t in triplets], dtype=float),
                   np.array([t.v_logit for t in triplets], dtype=float),
                   np.array([t.d for t in triplets], dtype=float))

    def to_records(self) -> list[dict]:
        return [{"u": float(a), "v": float(b), "v_logit": float(l), "d": float(d)}
                for (a, b), l, d in zip(self.p, self.v_logit, self.d)]


@dataclass(frozen=True)
class NoiseModel:
    sigma_p: float = 0.0
    flip_prob: float = 0.0
    sigma_d: float = 0.0
    backward_degradation: float = 1.0
    offset_gain: float = 0.0  # extra multiplier per meter of path distance beyond offset_free
    offset_free: float = 0.0  # path distance (m) within which offset_gain has no effect
    persistence: float = 0.0  # > 0: noise frozen within cells of this size (m) and 30 deg headings
    bias_gain: float = 0.0  # horizontal image bias per meter beyond offset_free, scaled per episode

    def __post_init__(self):
        if min(self.sigma_p, self.flip_prob, self.sigma_d, self.offset_gain, self.offset_free,
               self.persistence, self.bias_gain) < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if self.flip_prob > 0.5:
            raise ValueError("flip_prob must not exceed 0.5")
        if self.backward_degradation < 1.0:
            raise ValueError("backward_degradation must be >= 1")

    @property
    def is_zero(self) -> bool:
        return self.sigma_p == 0 and self.flip_prob == 0 and self.sigma_d == 0 and self.bias_gain == 0


def oracle_guidance(world: World, camera: CameraModel, query: Pose,
                    traj: ReferenceTrajectory) -> Guidance:
    """Ground-truth triplets from projection plus occlusion tests.

    A frame is visible when it projects inside the frustum and the segment
    from the query camera to the frame's camera position is unobstructed.
    Out-of-view frames get their projection clamped to the frame border.
    When no frame is visible, distances are normalized by the farthest frame
    so the nearest out-of-view frame still ranks first.
    """
    pts = traj.positions
    _, _, inside = project_many(camera, query, pts)
    p = border_clamped(camera, query, pts)
    dist = np.linalg.norm(pts - query.position, axis=1)
    coincident = dist < EPS_NEAR
    inside &= ~coincident
    visible = np.zeros(len(pts), dtype=bool)
    if inside.any():
        visible[inside] = raycast_many(world, query.position, pts[inside])
    if visible.any():
        scale = float(dist[visible].max())
        d = normalize_distances(dist, visible)
    else:
        scale = float(dist.max())
        d = np.clip(dist / scale, 0.0, 1.0) if scale > EPS_NEAR else np.zeros_like(dist)
    d[coincident] = 0.0
    logits = np.where(visible, LOGIT_VISIBLE, -LOGIT_VISIBLE)
    return Guidance(p, logits, d, scale)


HEADING_BINS = 12


def persistent_rng(seed: int, pose: Pose, cell: float) -> np.random.Generator:
    """Generator keyed by the pose's spatial cell and heading bin.

    Revisiting the same cell with the same heading reproduces the same
    corruption, the way a learned predictor repeats its mistake on a
    repeated view.
    """
    ix, iy = (int(math.floor(c / cell)) for c in pose.xy)
    ih = int(math.floor((pose.yaw + math.pi) / (2 * math.pi) * HEADING_BINS)) % HEADING_BINS
    return np.random.default_rng([seed, ix + 2**20, iy + 2**20, ih])


def perturb_guidance(g: Guidance, noise: NoiseModel, rng: np.random.Generator,
                     opposing: bool = False, offset: float = 0.0, bias_scale: float = 0.0) -> Guidance:
    """Corrupt triplets to mimic a learned predictor.

    Visibility decisions flip with ``flip_prob``; image points and distances
    get Gaussian noise, then distances are renormalized over the (new)
    visible set. Every magnitude is scaled by ``backward_degradation`` when
    the agent faces against the recorded direction of travel, and by
    ``1 + offset_gain * max(offset - offset_free, 0)`` for a query
    ``offset`` meters away from the reference path. Image points also shift
    sideways by ``bias_scale * bias_gain * max(offset - offset_free, 0)``,
    a systematic error that grows as the view leaves the recorded path.
    """
    if noise.is_zero:
        return g
    excess = max(offset - noise.offset_free, 0.0)
    k = noise.backward_degradation if opposing else 1.0
    k *= 1.0 + noise.offset_gain * excess
    n = len(g)
    flip = rng.random(n) < min(0.5, noise.flip_prob * k)
    logits = np.where(flip, -g.v_logit, g.v_logit)
    p = g.p + rng.normal(0.0, noise.sigma_p * k, size=(n, 2))
    p[:, 0] += bias_scale * noise.bias_gain * excess
    p = np.clip(p, -1.0, 1.0)
    d = g.d + rng.normal(0.0, noise.sigma_d * k, size=n)
    d = np.maximum(d, 0.0)
    vis = logits > 0
    if vis.any() and d[vis].max() > 0:
        d = np.clip(d / d[vis].max(), 0.0, 1.0)
    else:
        d = np.clip(d, 0.0, 1.0)
    return Guidance(p, logits, d, g.scale)


def visible_set(g: Guidance | list) -> list[int]:
    """Ascending (0-based) indices with sigma(v_logit) > 0.5."""
    if not isinstance(g, Guidance):
        g = Guidance.from_triplets(g)
    return [int(i) for i in np.flatnonzero(g.v_logit > 0.0)]


def sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def trace_record(step: int, pose: Pose, g: Guidance) -> str:
    """One guidance-trace JSON line."""
    return json.dumps({"step": step, "pose": pose.to_dict(), "triplets": g.to_records()})
