"""
Sequence-level instance association.

Each frame runs three stages against the previous frame (current frame is the
source, previous frame the destination):

1. static: centre and covariance gates match instances that did not move;
2. dynamic: the remaining same-class pairs are registered and accepted on IoU,
   then resolved one-to-one;
3. bank: still-unmatched current instances are registered against recently
   terminated tracks kept in a memory bank, which bridges short occlusions.

Matched instances inherit the partner's global id; the rest get fresh ids.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

import numpy as np
from sklearn.cluster import DBSCAN

from .assignment import AcceptedPair, CostWeights, assign
from .geometry import InstanceSegment, Scan
from .icp import IcpConfig, register
from .static import StaticGateConfig, match_static

log = logging.getLogger(__name__)

BANK_POINT_LIMIT = 1024


@dataclass(frozen=True)
class DbscanConfig:
    eps: float
    min_points: int

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("dbscan eps must be positive")
        if self.min_points < 1:
            raise ValueError("dbscan min_points must be >= 1")


@dataclass(frozen=True)
class TrackerConfig:
    static: StaticGateConfig = StaticGateConfig()
    icp: IcpConfig = IcpConfig()
    assignment: Literal["greedy", "hungarian"] = "greedy"
    cost_weights: CostWeights = CostWeights()
    w_mem: int = 3
    dbscan: Optional[DbscanConfig] = None
    # None means every instance id > 0 is tracked
    thing_classes: Optional[tuple] = None
    enable_static_stage: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.w_mem < 0:
            raise ValueError("w_mem must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.assignment not in ("greedy", "hungarian"):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")
        if self.thing_classes is not None:
            object.__setattr__(self, "thing_classes", tuple(sorted(int(c) for c in self.thing_classes)))


# ------------------------------------------------------------------ state


@dataclass(frozen=True, eq=False)
class BankEntry:
    global_id: int
    class_id: int
    points: np.ndarray
    last_seen: int

    def segment(self) -> InstanceSegment:
        return InstanceSegment(self.global_id, self.class_id, self.points)


class MemoryBank:
    """Recently terminated tracks, kept for ``w_mem`` frames after they were last seen."""

    def __init__(self, w_mem: int, seed: int = 0):
        self.w_mem = w_mem
        self._entries: dict[int, BankEntry] = {}
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._entries)

    def __contains__(self, global_id):
        return global_id in self._entries

    @property
    def entries(self) -> list[BankEntry]:
        return [self._entries[k] for k in sorted(self._entries)]

    def add(self, segment: InstanceSegment, last_seen: int) -> None:
        pts = segment.points
        if pts.shape[0] > BANK_POINT_LIMIT:
            keep = np.sort(self._rng.choice(pts.shape[0], BANK_POINT_LIMIT, replace=False))
            pts = pts[keep]
        self._entries[segment.instance_id] = BankEntry(segment.instance_id, segment.class_id, pts, last_seen)

    def pop(self, global_id: int) -> BankEntry:
        return self._entries.pop(global_id)

    def evict(self, frame: int) -> int:
        """Drop entries unusable at ``frame``; returns how many were dropped."""
        stale = [k for k, e in self._entries.items() if e.last_seen < frame - self.w_mem]
        for k in stale:
            del self._entries[k]
        return len(stale)

    def clear(self) -> None:
        self._entries.clear()


class IdAllocator:
    """Monotone source of sequence-global track ids."""

    def __init__(self, start: int = 1):
        self.next_id = start

    def fresh(self) -> int:
        gid = self.next_id
        self.next_id += 1
        return gid


@dataclass
class StepStats:
    frame: int
    segments: int = 0
    candidates: int = 0
    static_matches: int = 0
    dynamic_registrations: int = 0
    dynamic_matches: int = 0
    bank_registrations: int = 0
    bank_matches: int = 0
    new_ids: int = 0
    bank_size: int = 0
    time_static: float = 0.0
    time_dynamic: float = 0.0
    time_bank: float = 0.0


# ------------------------------------------------------------ primitives


def build_candidates(src_segments: Sequence[InstanceSegment], dst_segments: Sequence[InstanceSegment]):
    """All (src, dst) pairs sharing a semantic class."""
    by_class: dict[int, list[InstanceSegment]] = {}
    for d in dst_segments:
        by_class.setdefault(d.class_id, []).append(d)
    return [(s, d) for s in src_segments for d in by_class.get(s.class_id, ())]


def refine_dbscan(scan: Scan, eps: float, min_points: int, thing_classes: Optional[Iterable[int]] = None) -> Scan:
    """
    Split every instance into its DBSCAN clusters.

    Each cluster gets a new id above the scan's current maximum; noise points
    keep their parent's id. Stuff points are untouched.
    """
    DbscanConfig(eps, min_points)
    inst = scan.instance.copy()
    mask = scan.instance > 0
    if thing_classes is not None:
        mask &= np.isin(scan.semantic, list(thing_classes))
    if not mask.any():
        return scan
    next_id = int(scan.instance.max()) + 1
    for raw in np.unique(scan.instance[mask]):
        idx = np.flatnonzero(mask & (scan.instance == raw))
        labels = DBSCAN(eps=eps, min_samples=min_points).fit_predict(scan.points[idx])
        for lab in range(labels.max() + 1):
            inst[idx[labels == lab]] = next_id
            next_id += 1
    return scan.with_instance(inst)


# --------------------------------------------------------------- tracker


class Tracker:
    """Stateful frame-by-frame associator; one instance per sequence."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.bank = MemoryBank(cfg.w_mem, seed=cfg.icp.seed)
        self.allocator = IdAllocator()
        self.prev_segments: list[InstanceSegment] = []
        self.prev_frame: Optional[int] = None
        self.stats: list[StepStats] = []
        self._pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def reset(self) -> None:
        self.bank.clear()
        self.allocator = IdAllocator()
        self.prev_segments = []
        self.prev_frame = None
        self.stats = []

    def _register_all(self, pairs):
        def job(pair):
            src, dst = pair
            return AcceptedPair(src.instance_id, dst.instance_id, register(src, dst, self.cfg.icp))

        if self._pool is not None and len(pairs) > 1:
            results = list(self._pool.map(job, pairs))
        else:
            results = [job(p) for p in pairs]
        return [r for r in results if r.iou >= self.cfg.icp.tau_iou]

    def step(self, scan: Scan) -> np.ndarray:
        """Global track id per point of ``scan`` (0 for points outside any tracked instance)."""
        cfg = self.cfg
        frame = self.prev_frame + 1 if self.prev_frame is not None else 0
        if cfg.dbscan is not None:
            scan = refine_dbscan(scan, cfg.dbscan.eps, cfg.dbscan.min_points, cfg.thing_classes)
        current = scan.segments(cfg.thing_classes)
        st = StepStats(frame=frame, segments=len(current))
        self.bank.evict(frame)

        mapping: dict[int, int] = {}  # raw current id -> global id
        matched_prev: set[int] = set()

        # static stage
        candidates = build_candidates(current, self.prev_segments)
        st.candidates = len(candidates)
        t0 = time.perf_counter()
        if cfg.enable_static_stage and candidates:
            static, candidates = match_static(candidates, cfg.static)
            for m in static:
                mapping[m.src_id] = m.dst_id
                matched_prev.add(m.dst_id)
            st.static_matches = len(static)
        st.time_static = time.perf_counter() - t0

        # dynamic stage
        t0 = time.perf_counter()
        st.dynamic_registrations = len(candidates)
        accepted = self._register_all(candidates)
        for s, d in sorted(assign(accepted, cfg.assignment, cfg.cost_weights).items()):
            mapping[s] = d
            matched_prev.add(d)
            st.dynamic_matches += 1
        st.time_dynamic = time.perf_counter() - t0

        # bank stage
        t0 = time.perf_counter()
        if len(self.bank):
            leftovers = [s for s in current if s.instance_id not in mapping]
            bank_pairs = build_candidates(leftovers, [e.segment() for e in self.bank.entries])
            st.bank_registrations = len(bank_pairs)
            accepted = self._register_all(bank_pairs)
            for s, gid in sorted(assign(accepted, cfg.assignment, cfg.cost_weights).items()):
                mapping[s] = gid
                self.bank.pop(gid)
                st.bank_matches += 1
        st.time_bank = time.perf_counter() - t0

        for seg in current:
            if seg.instance_id not in mapping:
                mapping[seg.instance_id] = self.allocator.fresh()
                st.new_ids += 1

        # terminated tracks enter the bank
        if self.prev_frame is not None:
            for seg in self.prev_segments:
                if seg.instance_id not in matched_prev:
                    self.bank.add(seg, self.prev_frame)
        self.bank.evict(frame + 1)
        st.bank_size = len(self.bank)

        self.prev_segments = [seg.with_id(mapping[seg.instance_id]) for seg in current]
        self.prev_frame = frame
        self.stats.append(st)
        log.info(
            "frame %d: %d segments, static %d, dynamic %d, bank %d, new %d",
            frame, st.segments, st.static_matches, st.dynamic_matches, st.bank_matches, st.new_ids,
        )
        return _relabel(scan, mapping, cfg.thing_classes)


def _relabel(scan: Scan, mapping: dict[int, int], thing_classes) -> np.ndarray:
    out = np.zeros(len(scan), dtype=np.int64)
    mask = scan.instance > 0
    if thing_classes is not None:
        mask &= np.isin(scan.semantic, list(thing_classes))
    if mapping:
        raw = np.fromiter(mapping.keys(), dtype=np.int64)
        gid = np.fromiter(mapping.values(), dtype=np.int64)
        order = np.argsort(raw)
        raw, gid = raw[order], gid[order]
        idx = np.flatnonzero(mask)
        out[idx] = gid[np.searchsorted(raw, scan.instance[idx])]
    return out


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def run_sequence(scans: Sequence[Scan], cfg: TrackerConfig = TrackerConfig(), tracker: Optional[Tracker] = None) -> list[np.ndarray]:
    """Track a whole sequence from a fresh state; pass ``tracker`` to inspect its stats afterwards."""
    own = tracker is None
    tracker = tracker or Tracker(cfg)
    tracker.reset()
    try:
        return [tracker.step(s) for s in scans]
    finally:
        if own:
            tracker.close()
