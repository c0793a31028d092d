"""
Reading and writing LiDAR sequences.

Two on-disk layouts are supported:

* SemanticKITTI: ``velodyne/*.bin`` (little-endian float32 x, y, z,
  remission), ``labels/*.label`` (little-endian uint32, low 16 bits semantic
  class, high 16 bits instance id), ``poses.txt`` and ``calib.txt``.
* A generic self-describing per-frame file: magic ``b"I4DS"``, version
  (uint16), point count (uint64), then one 32-byte record per point holding
  x, y, z as float64 and semantic, instance as uint32, all little-endian.

Points are moved into the world frame at load time.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, IoError
from .geometry import Scan

GENERIC_MAGIC = b"I4DS"
GENERIC_VERSION = 1
_GENERIC_HEADER = struct.Struct("<4sHQ")
_GENERIC_RECORD = np.dtype([("xyz", "<f8", (3,)), ("semantic", "<u4"), ("instance", "<u4")])
MAX_INSTANCE_ID = (1 << 16) - 1


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _read_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def apply_pose(pose: Optional[np.ndarray], points: np.ndarray) -> np.ndarray:
    if pose is None:
        return points
    pose = np.asarray(pose, dtype=np.float64)
    return points @ pose[:3, :3].T + pose[:3, 3]


def read_bin(path) -> np.ndarray:
    """Velodyne points as an ``(N, 3)`` float64 array (remission dropped)."""
    raw = _read_bytes(path)
    if len(raw) % 16:
        raise FormatError(f"{path}: {len(raw)} bytes is not a multiple of 16")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)[:, :3]
    return pts.astype(np.float64)


def read_labels(path) -> tuple[np.ndarray, np.ndarray]:
    """(semantic, instance) arrays from a ``.label`` file."""
    raw = _read_bytes(path)
    if len(raw) % 4:
        raise FormatError(f"{path}: {len(raw)} bytes is not a multiple of 4")
    words = np.frombuffer(raw, dtype="<u4")
    return (words & 0xFFFF).astype(np.int64), (words >> 16).astype(np.int64)


def load_kitti_scan(bin_path, label_path, pose: Optional[np.ndarray] = None, frame_index: int = 0) -> Scan:
    points = read_bin(bin_path)
    semantic, instance = read_labels(label_path)
    if points.shape[0] != semantic.shape[0]:
        raise FormatError(
            f"{bin_path} has {points.shape[0]} points but {label_path} has {semantic.shape[0]} labels"
        )
    return Scan(apply_pose(pose, points), semantic, instance, frame_index)


def _parse_row(line: str, path, lineno: int) -> np.ndarray:
    parts = line.split()
    if len(parts) != 12:
        raise FormatError(f"{path}:{lineno}: expected 12 numbers, got {len(parts)}")
    try:
        vals = np.array([float(p) for p in parts])
    except ValueError as exc:
        raise FormatError(f"{path}:{lineno}: {exc}") from exc
    m = np.eye(4)
    m[:3, :] = vals.reshape(3, 4)
    return m


def load_calib(calib_path) -> np.ndarray:
    """The ``Tr:`` velodyne-to-camera matrix as 4x4."""
    for lineno, line in enumerate(_read_text(calib_path).splitlines(), 1):
        key, _, rest = line.partition(":")
        if key.strip() == "Tr":
            return _parse_row(rest, calib_path, lineno)
    raise FormatError(f"{calib_path}: no 'Tr:' line")


def load_poses(poses_path, calib_path) -> list[np.ndarray]:
    """
    Per-frame LiDAR-to-world poses as 3x4 arrays.

    Camera poses from ``poses.txt`` are conjugated with the calibration:
    ``inv(Tr) @ P @ Tr``.
    """
    tr = load_calib(calib_path)
    tr_inv = np.linalg.inv(tr)
    poses = []
    for lineno, line in enumerate(_read_text(poses_path).splitlines(), 1):
        if not line.strip():
            continue
        p = _parse_row(line, poses_path, lineno)
        poses.append((tr_inv @ p @ tr)[:3, :])
    return poses


def encode_labels(semantic, instance) -> np.ndarray:
    sem = np.asarray(semantic, dtype=np.int64)
    inst = np.asarray(instance, dtype=np.int64)
    if sem.shape != inst.shape:
        raise ValueError("semantic and instance arrays differ in length")
    if inst.size and (inst.max() > MAX_INSTANCE_ID or inst.min() < 0):
        raise OverflowError(f"instance ids must lie in [0, {MAX_INSTANCE_ID}]")
    return ((inst.astype(np.uint32) << 16) | (sem.astype(np.uint32) & 0xFFFF)).astype("<u4")


def write_labels(scan: Scan, assigned_instance_ids, out_path) -> None:
    """Write a ``.label`` file keeping the scan's semantic classes and the given instance ids."""
    ids = np.asarray(assigned_instance_ids)
    if ids.shape[0] != len(scan):
        raise ValueError(f"got {ids.shape[0]} ids for {len(scan)} points")
    words = encode_labels(scan.semantic, ids)
    _write_bytes(out_path, words.tobytes())


def _write_bytes(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_generic(scan: Scan, path) -> None:
    if len(scan) and (scan.instance.max() > 0xFFFFFFFF or scan.semantic.min() < 0):
        raise OverflowError("labels do not fit in uint32")
    rec = np.zeros(len(scan), dtype=_GENERIC_RECORD)
    rec["xyz"] = scan.points
    rec["semantic"] = scan.semantic
    rec["instance"] = scan.instance
    _write_bytes(path, _GENERIC_HEADER.pack(GENERIC_MAGIC, GENERIC_VERSION, len(scan)) + rec.tobytes())


def read_generic(path, frame_index: int = 0) -> Scan:
    raw = _read_bytes(path)
    if len(raw) < _GENERIC_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n = _GENERIC_HEADER.unpack_from(raw)
    if magic != GENERIC_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != GENERIC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = raw[_GENERIC_HEADER.size :]
    if len(body) != n * _GENERIC_RECORD.itemsize:
        raise FormatError(f"{path}: header says {n} points, body holds {len(body) / _GENERIC_RECORD.itemsize:g}")
    rec = np.frombuffer(body, dtype=_GENERIC_RECORD)
    return Scan(rec["xyz"].astype(np.float64), rec["semantic"].astype(np.int64), rec["instance"].astype(np.int64), frame_index)


def _sorted_files(directory: Path, suffix: str) -> list[Path]:
    if not directory.is_dir():
        raise IoError(f"missing directory {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix == suffix)


def load_kitti_sequence(seq_dir, labels_dir=None) -> list[Scan]:
    """
    Load a SemanticKITTI sequence folder into world-frame scans.

    ``labels_dir`` defaults to ``<seq_dir>/labels``; pass a predictions
    folder to feed network output.
    """
    seq_dir = Path(seq_dir)
    poses_path = seq_dir / "poses.txt"
    calib_path = seq_dir / "calib.txt"
    for p in (poses_path, calib_path):
        if not p.is_file():
            raise IoError(f"missing {p}")
    poses = load_poses(poses_path, calib_path)
    bins = _sorted_files(seq_dir / "velodyne", ".bin")
    labels_dir = Path(labels_dir) if labels_dir is not None else seq_dir / "labels"
    if len(bins) != len(poses):
        raise FormatError(f"{len(bins)} scans but {len(poses)} poses in {seq_dir}")
    scans = []
    for k, (b, pose) in enumerate(zip(bins, poses)):
        lab = labels_dir / (b.stem + ".label")
        if not lab.is_file():
            raise IoError(f"missing {lab}")
        scans.append(load_kitti_scan(b, lab, pose, frame_index=k))
    return scans


def load_generic_sequence(directory) -> list[Scan]:
    files = _sorted_files(Path(directory), ".i4ds")
    return [read_generic(p, frame_index=k) for k, p in enumerate(files)]


def write_generic_sequence(scans: Sequence[Scan], directory) -> list[Path]:
    directory = Path(directory)
    paths = []
    for k, scan in enumerate(scans):
        path = directory / f"{k:06d}.i4ds"
        write_generic(scan, path)
        paths.append(path)
    return paths


def load_label_dir(directory) -> list[tuple[np.ndarray, np.ndarray]]:
    """(semantic, instance) per frame from every ``.label`` (or ``.i4ds``) file in a folder."""
    directory = Path(directory)
    files = _sorted_files(directory, ".label")
    if files:
        return [read_labels(p) for p in files]
    out = []
    for p in _sorted_files(directory, ".i4ds"):
        scan = read_generic(p)
        out.append((scan.semantic, scan.instance))
    return out
