"""
Resolution of accepted registrations into a one-to-one source -> destination map.

Greedy selection ranks by IoU; the bijective option minimises a
transformation-aware cost combining translation, rotation angle and IoU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import rotation_vector
from .icp import RegistrationResult

SENTINEL = 1e6


@dataclass(frozen=True)
class AcceptedPair:
    src_id: int
    dst_id: int
    result: RegistrationResult

    @property
    def iou(self) -> float:
        return self.result.iou


@dataclass(frozen=True)
class MatchCost:
    src_id: int
    dst_id: int
    c_t: float
    c_r: float
    c_s: float
    total: float


@dataclass(frozen=True)
class CostWeights:
    gamma_t: float = 1.0
    gamma_r: float = 1.0
    gamma_s: float = 1.0
    normalization: Literal["max", "fixed"] = "max"
    # used when normalization == "fixed"
    translation_scale: float = 1.0
    rotation_scale: float = math.pi


def build_cost(pairs: Sequence[AcceptedPair], weights: CostWeights = CostWeights()) -> dict[tuple[int, int], MatchCost]:
    """
    Matching cost per accepted pair.

    Translation norm and rotation-vector norm are each divided by their
    maximum over ``pairs`` (or by fixed scales); the shape term is ``|1 - iou|``.
    """
    if not pairs:
        return {}
    t_raw = np.array([np.linalg.norm(p.result.transform.translation) for p in pairs])
    r_raw = np.array([np.linalg.norm(rotation_vector(p.result.transform.rotation)) for p in pairs])
    if weights.normalization == "max":
        t_scale = t_raw.max()
        r_scale = r_raw.max()
    else:
        t_scale = weights.translation_scale
        r_scale = weights.rotation_scale
    c_t = t_raw / t_scale if t_scale > 0 else np.zeros_like(t_raw)
    c_r = r_raw / r_scale if r_scale > 0 else np.zeros_like(r_raw)
    out = {}
    for p, ct, cr in zip(pairs, c_t, c_r):
        cs = abs(1.0 - p.iou)
        total = weights.gamma_t * ct + weights.gamma_r * cr + weights.gamma_s * cs
        out[(p.src_id, p.dst_id)] = MatchCost(p.src_id, p.dst_id, float(ct), float(cr), float(cs), float(total))
    return out


def assign_greedy(
    pairs: Sequence[AcceptedPair], costs: dict[tuple[int, int], MatchCost] | None = None
) -> dict[int, int]:
    """Claim pairs in order of descending IoU, then ascending cost, then ids."""
    if costs is None:
        costs = build_cost(pairs)
    ranked = sorted(pairs, key=lambda p: (-p.iou, costs[(p.src_id, p.dst_id)].total, p.src_id, p.dst_id))
    mapping: dict[int, int] = {}
    taken = set()
    for p in ranked:
        if p.src_id in mapping or p.dst_id in taken:
            continue
        mapping[p.src_id] = p.dst_id
        taken.add(p.dst_id)
    return mapping


def solve_table(table: np.ndarray, allowed: np.ndarray) -> list[tuple[int, int]]:
    """
    Optimal one-to-one assignment on a rectangular table.

    Entries with ``allowed == False`` are never returned. Among all
    assignments the one with the most allowed pairs is chosen, and among
    those the one of least total cost.
    """
    table = np.asarray(table, dtype=np.float64)
    allowed = np.asarray(allowed, dtype=bool)
    if table.size == 0:
        return []
    padded = np.where(allowed, table, SENTINEL)
    rows, cols = linear_sum_assignment(padded)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]


def assign_hungarian(
    pairs: Sequence[AcceptedPair], costs: dict[tuple[int, int], MatchCost] | None = None
) -> dict[int, int]:
    """Minimum-cost bijective assignment restricted to accepted pairs."""
    if not pairs:
        return {}
    if costs is None:
        costs = build_cost(pairs)
    src_ids = sorted({p.src_id for p in pairs})
    dst_ids = sorted({p.dst_id for p in pairs})
    row = {s: i for i, s in enumerate(src_ids)}
    col = {d: j for j, d in enumerate(dst_ids)}
    table = np.zeros((len(src_ids), len(dst_ids)))
    allowed = np.zeros_like(table, dtype=bool)
    for p in pairs:
        table[row[p.src_id], col[p.dst_id]] = costs[(p.src_id, p.dst_id)].total
        allowed[row[p.src_id], col[p.dst_id]] = True
    return {src_ids[r]: dst_ids[c] for r, c in solve_table(table, allowed)}


def assign(pairs: Sequence[AcceptedPair], mode: Literal["greedy", "hungarian"] = "greedy", weights: CostWeights = CostWeights()) -> dict[int, int]:
    costs = build_cost(pairs, weights)
    if mode == "greedy":
        return assign_greedy(pairs, costs)
    if mode == "hungarian":
        return assign_hungarian(pairs, costs)
    raise ValueError(f"unknown assignment mode {mode!r}")


def mapping_cost(mapping: dict[int, int], costs: dict[tuple[int, int], MatchCost]) -> float:
    return math.fsum(costs[(s, d)].total for s, d in sorted(mapping.items()))
