"""
Matching of non-moving instances by centre proximity and covariance shape.

Both gates are symmetric in source and destination and invariant under a
rigid motion applied to both segments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import InstanceSegment

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StaticGateConfig:
    tau_center: float = 0.1
    tau_cov: float = 0.1

    def __post_init__(self):
        if not (self.tau_center > 0 and self.tau_cov > 0):
            raise ValueError("static gate thresholds must be positive")


@dataclass(frozen=True)
class StaticMatch:
    src_id: int
    dst_id: int
    center_distance: float
    cov_score: float
    degenerate: bool = False


def center_distance(src: InstanceSegment, dst: InstanceSegment) -> float:
    return float(np.linalg.norm(dst.mean - src.mean))


def covariance_score(src: InstanceSegment, dst: InstanceSegment) -> tuple[float, bool]:
    """Frobenius distance of covariances over the sum of their traces; flag when both are zero."""
    denom = float(np.trace(dst.covariance) + np.trace(src.covariance))
    if denom <= 0.0:
        return 0.0, True
    return float(np.linalg.norm(dst.covariance - src.covariance, "fro") / denom), False


def center_gate(src: InstanceSegment, dst: InstanceSegment, cfg: StaticGateConfig = StaticGateConfig()) -> Optional[float]:
    d = center_distance(src, dst)
    return d if d < cfg.tau_center else None


def covariance_gate(
    src: InstanceSegment, dst: InstanceSegment, cfg: StaticGateConfig = StaticGateConfig()
) -> Optional[float]:
    """Shape ratio when it is below ``tau_cov``; two single-point segments pass with ratio 0."""
    ratio, degenerate = covariance_score(src, dst)
    if degenerate:
        log.debug("degenerate shape pair %s / %s", src, dst)
    return ratio if ratio < cfg.tau_cov else None


def match_static(
    candidates: Sequence[tuple[InstanceSegment, InstanceSegment]],
    cfg: StaticGateConfig = StaticGateConfig(),
) -> tuple[list[StaticMatch], list[tuple[InstanceSegment, InstanceSegment]]]:
    """
    Pick static pairs from class-consistent candidates.

    Pairs passing both gates are ranked by ascending covariance score, then
    centre distance, then ids; a greedy sweep keeps each source and each
    destination at most once. Every candidate touching a matched id is
    dropped from the returned remainder.
    """
    passing = []
    for src, dst in candidates:
        cd = center_gate(src, dst, cfg)
        if cd is None:
            continue
        ratio, degenerate = covariance_score(src, dst)
        if ratio >= cfg.tau_cov:
            continue
        passing.append((ratio, cd, src.instance_id, dst.instance_id, degenerate))
    passing.sort()
    used_src, used_dst = set(), set()
    matches = []
    for ratio, cd, sid, did, degenerate in passing:
        if sid in used_src or did in used_dst:
            continue
        used_src.add(sid)
        used_dst.add(did)
        matches.append(StaticMatch(sid, did, cd, ratio, degenerate))
    remaining = [
        (s, d) for s, d in candidates if s.instance_id not in used_src and d.instance_id not in used_dst
    ]
    return matches, remaining
