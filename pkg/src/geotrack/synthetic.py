"""
Synthetic rigid-motion sequences with ground-truth track ids.

Each body is a fixed template cloud moved along a per-frame rigid trajectory,
perturbed by isotropic Gaussian noise and random point dropout. Per-frame
"predicted" instance ids are a random relabelling of the visible bodies, so
any temporal consistency in a tracker's output has to be earned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import RigidTransform, Scan, apply_transform, as_points, rot_z

CAR = 10
PERSON = 30
ROAD = 40
THING_CLASSES = (CAR, PERSON)


@dataclass(frozen=True, eq=False)
class RigidBody:
    body_id: int
    class_id: int
    template: np.ndarray
    trajectory: tuple
    visible: tuple

    def __post_init__(self):
        object.__setattr__(self, "template", as_points(self.template))
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        object.__setattr__(self, "visible", tuple(bool(v) for v in self.visible))
        if len(self.trajectory) != len(self.visible):
            raise ValueError("trajectory and visibility lengths differ")
        if self.body_id <= 0:
            raise ValueError("body ids must be positive")


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    bodies: tuple
    background: tuple = ()  # (class_id, points) pairs, static, instance 0
    noise_sigma: float = 0.0
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "background", tuple((int(c), as_points(p)) for c, p in self.background))
        lengths = {len(b.trajectory) for b in self.bodies}
        if len(lengths) > 1:
            raise ValueError("all trajectories must have the same frame count")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def n_frames(self) -> int:
        return len(self.bodies[0].trajectory) if self.bodies else 0


def generate_synthetic(scene: SyntheticScene, seed: int = 0) -> tuple[list[Scan], list[np.ndarray]]:
    """Render every frame; returns scans (frame-local instance ids) and per-point ground-truth ids."""
    scans, gts = [], []
    for k in range(scene.n_frames):
        rng = np.random.default_rng([seed, k])
        visible = [b for b in sorted(scene.bodies, key=lambda b: b.body_id) if b.visible[k]]
        local_ids = rng.permutation(len(visible)) + 1
        pts, sem, inst, gt = [], [], [], []
        for body, local in zip(visible, local_ids):
            p = apply_transform(body.trajectory[k], body.template)
            if scene.noise_sigma > 0:
                p = p + rng.normal(0.0, scene.noise_sigma, p.shape)
            if scene.dropout > 0:
                keep = rng.random(p.shape[0]) >= scene.dropout
                if not keep.any():
                    keep[rng.integers(p.shape[0])] = True
                p = p[keep]
            n = p.shape[0]
            pts.append(p)
            sem.append(np.full(n, body.class_id))
            inst.append(np.full(n, local))
            gt.append(np.full(n, body.body_id))
        for cls, p in scene.background:
            if scene.noise_sigma > 0:
                p = p + rng.normal(0.0, scene.noise_sigma, p.shape)
            pts.append(p)
            sem.append(np.full(p.shape[0], cls))
            inst.append(np.zeros(p.shape[0], dtype=np.int64))
            gt.append(np.zeros(p.shape[0], dtype=np.int64))
        if pts:
            scan = Scan(np.concatenate(pts), np.concatenate(sem), np.concatenate(inst), k)
            gt_ids = np.concatenate(gt).astype(np.int64)
        else:
            scan = Scan(np.zeros((0, 3)), np.zeros(0), np.zeros(0), k)
            gt_ids = np.zeros(0, dtype=np.int64)
        scans.append(scan)
        gts.append(gt_ids)
    return scans, gts


# ----------------------------------------------------------- scene builders


def blob_template(rng: np.random.Generator, n: int, size=(4.2, 1.8, 1.5), n_blobs: int = 5) -> np.ndarray:
    """
    Irregular object cloud: a mixture of anisotropic Gaussian blobs inside a
    box of the given size, centred on the origin. Different draws give
    clearly different shapes.
    """
    size = np.asarray(size, dtype=np.float64)
    centres = rng.uniform(-0.35, 0.35, (n_blobs, 3)) * size
    scales = rng.uniform(0.08, 0.25, (n_blobs, 3)) * size
    which = rng.integers(n_blobs, size=n)
    pts = centres[which] + rng.normal(size=(n, 3)) * scales[which]
    pts = np.clip(pts, -size / 2, size / 2)
    return pts - pts.mean(axis=0)


def ground_plane(rng: np.random.Generator, n: int, half_extent: float = 30.0) -> np.ndarray:
    xy = rng.uniform(-half_extent, half_extent, (n, 2))
    return np.column_stack([xy, np.full(n, -1.0)])


def _straight_path(start, heading: float, speed: float, yaw_rate: float, n_frames: int) -> list[RigidTransform]:
    out = []
    pos = np.asarray(start, dtype=np.float64).copy()
    yaw = heading
    for _ in range(n_frames):
        out.append(RigidTransform(rot_z(yaw), pos.copy()))
        pos = pos + speed * np.array([np.cos(yaw), np.sin(yaw), 0.0])
        yaw += yaw_rate
    return out


def make_scene(
    seed: int = 0,
    n_moving: int = 3,
    n_static: int = 2,
    n_frames: int = 10,
    noise_sigma: float = 0.02,
    dropout: float = 0.1,
    points_per_body: int = 300,
    occlusions: Optional[Mapping[int, Sequence[int]]] = None,
    background_points: int = 500,
    speed_range=(0.6, 1.4),
) -> SyntheticScene:
    """
    Street-like scene: moving bodies on parallel lanes plus parked ones.

    Bodies 1..n_moving move; the rest are static. The last moving body is a
    pedestrian-sized object when there are at least three movers. Lanes are
    10 m apart so distinct bodies never overlap. ``occlusions`` maps a body
    id to the frames in which it is hidden.
    """
    rng = np.random.default_rng(seed)
    occlusions = occlusions or {}
    bodies = []
    lane = 0
    for b in range(n_moving):
        body_id = b + 1
        person = n_moving >= 3 and b == n_moving - 1
        if person:
            cls, size, n, speed = PERSON, (0.6, 0.6, 1.7), max(60, points_per_body // 3), rng.uniform(0.3, 0.5)
        else:
            cls, size, n, speed = CAR, (4.2, 1.8, 1.5), points_per_body, rng.uniform(*speed_range)
        heading = rng.uniform(-0.15, 0.15)
        path = _straight_path((rng.uniform(-12, -8), lane * 10.0, 0.0), heading, speed, rng.uniform(-0.03, 0.03), n_frames)
        vis = [k not in set(occlusions.get(body_id, ())) for k in range(n_frames)]
        bodies.append(RigidBody(body_id, cls, blob_template(rng, n, size), path, vis))
        lane += 1
    for s in range(n_static):
        body_id = n_moving + s + 1
        place = RigidTransform(rot_z(rng.uniform(-np.pi, np.pi)), (rng.uniform(-5, 5), lane * 10.0, 0.0))
        vis = [k not in set(occlusions.get(body_id, ())) for k in range(n_frames)]
        bodies.append(RigidBody(body_id, CAR, blob_template(rng, points_per_body), [place] * n_frames, vis))
        lane += 1
    background = ((ROAD, ground_plane(rng, background_points)),) if background_points else ()
    return SyntheticScene(tuple(bodies), background, noise_sigma, dropout)
