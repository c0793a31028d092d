"""
Rigid-body geometry and panoptic-label primitives.

Point sets are ``(N, 3)`` float64 arrays in world coordinates. Everything
here is an immutable value type; operations return new objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptySegment, InvalidTransform

ORTHONORMAL_TOL = 1e-9


def as_points(points) -> np.ndarray:
    """Promote ``points`` to a contiguous ``(N, 3)`` float64 array."""
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {arr.shape}")
    return arr


def rot_z(angle: float) -> np.ndarray:
    """Rotation matrix of ``angle`` radians about the z axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues formula: rotation of ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        return np.eye(3)
    k = axis / norm
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def rotation_vector(rotation: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle from the trace, axis from the skew part)."""
    r = np.asarray(rotation, dtype=np.float64)
    skew = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_theta = np.linalg.norm(skew)
    cos_theta = np.clip(0.5 * (np.trace(r) - 1.0), -1.0, 1.0)
    theta = np.arctan2(sin_theta, cos_theta)
    if theta < 1e-12:
        return np.zeros(3)
    if sin_theta > 1e-8:
        return theta * skew / sin_theta
    # near a half turn the skew part vanishes; read the axis off R + I
    sym = 0.5 * (r + np.eye(3))
    col = int(np.argmax(np.diag(sym)))
    axis = sym[:, col] / np.sqrt(max(sym[col, col], 1e-300))
    return theta * axis / np.linalg.norm(axis)


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation, in radians."""
    return float(np.linalg.norm(rotation_vector(rotation)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``p -> rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise InvalidTransform("transform has non-finite entries")
        if np.linalg.norm(rot.T @ rot - np.eye(3)) > ORTHONORMAL_TOL:
            raise InvalidTransform("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidTransform("rotation has det != +1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, translation) -> "RigidTransform":
        return cls(np.eye(3), translation)

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        return apply_transform(self, points)

    @property
    def angle(self) -> float:
        return rotation_angle(self.rotation)

    def __repr__(self):
        return (
            f"RigidTransform(angle={np.degrees(self.angle):.4f} deg, "
            f"translation={np.array2string(self.translation, precision=4)})"
        )


def apply_transform(t: RigidTransform, points) -> np.ndarray:
    """Map every row of ``points`` through ``t``."""
    p = as_points(points)
    return p @ t.rotation.T + t.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def transform_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """(rotation angle error in rad, translation error in m) between two transforms."""
    angle = rotation_angle(estimate.rotation @ truth.rotation.T)
    return angle, float(np.linalg.norm(estimate.translation - truth.translation))


def segment_statistics(points) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population covariance (1/n normalisation) of a point set."""
    p = as_points(points)
    if p.shape[0] == 0:
        raise EmptySegment("segment_statistics needs at least one point")
    mean = p.mean(axis=0)
    centred = p - mean
    cov = centred.T @ centred / p.shape[0]
    cov = 0.5 * (cov + cov.T)
    return mean, cov


@dataclass(frozen=True, eq=False)
class InstanceSegment:
    """Points of one predicted instance with cached centre and covariance."""

    instance_id: int
    class_id: int
    points: np.ndarray
    mean: np.ndarray = field(init=False, repr=False)
    covariance: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = as_points(self.points)
        if pts.shape[0] == 0:
            raise EmptySegment(f"instance {self.instance_id} has no points")
        pts.setflags(write=False)
        mean, cov = segment_statistics(pts)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "instance_id", int(self.instance_id))
        object.__setattr__(self, "class_id", int(self.class_id))

    def __len__(self):
        return self.points.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def with_id(self, instance_id: int) -> "InstanceSegment":
        return InstanceSegment(instance_id, self.class_id, self.points)

    def __repr__(self):
        return f"InstanceSegment(id={self.instance_id}, class={self.class_id}, n={len(self)})"


@dataclass(frozen=True, eq=False)
class Scan:
    """One LiDAR frame: world-frame points with per-point semantic class and instance id."""

    points: np.ndarray
    semantic: np.ndarray
    instance: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        sem = np.ascontiguousarray(self.semantic, dtype=np.int64).reshape(-1)
        inst = np.ascontiguousarray(self.instance, dtype=np.int64).reshape(-1)
        if not (pts.shape[0] == sem.shape[0] == inst.shape[0]):
            raise ValueError(
                f"points/semantic/instance lengths differ: {pts.shape[0]}, {sem.shape[0]}, {inst.shape[0]}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValueError("scan contains non-finite coordinates")
        if np.any(inst < 0):
            raise ValueError("instance ids must be nonnegative")
        for arr in (pts, sem, inst):
            arr.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", inst)
        object.__setattr__(self, "frame_index", int(self.frame_index))

    def __len__(self):
        return self.points.shape[0]

    def things_consistent(self, thing_classes: Iterable[int]) -> bool:
        """True when every instance point carries a thing class."""
        mask = self.instance > 0
        return bool(np.all(np.isin(self.semantic[mask], list(thing_classes))))

    def with_instance(self, instance) -> "Scan":
        return Scan(self.points, self.semantic, instance, self.frame_index)

    def segments(self, thing_classes: Optional[Iterable[int]] = None) -> list[InstanceSegment]:
        """
        Group instance points into segments, ordered by instance id.

        Only points with ``instance > 0`` (and, when ``thing_classes`` is given,
        a thing semantic class) participate. A segment's class is the majority
        semantic label of its points, lowest class id on ties.
        """
        mask = self.instance > 0
        if thing_classes is not None:
            mask &= np.isin(self.semantic, np.fromiter(thing_classes, dtype=np.int64))
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return []
        ids = self.instance[idx]
        order = np.argsort(ids, kind="stable")
        idx, ids = idx[order], ids[order]
        bounds = np.flatnonzero(np.diff(ids)) + 1
        out = []
        for chunk in np.split(idx, bounds):
            classes, counts = np.unique(self.semantic[chunk], return_counts=True)
            cls = int(classes[np.argmax(counts)])
            out.append(InstanceSegment(int(self.instance[chunk[0]]), cls, self.points[chunk]))
        return out
