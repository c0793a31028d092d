"""
Sequence-level evaluation of 4D panoptic predictions.

* S_cls: class-wise point IoU accumulated over the sequence, averaged over
  the classes present in ground truth or prediction.
* S_assoc: association quality of whole-sequence tracks, each ground-truth
  track scoring ``sum_s |s & t| * IoU(s, t) / |t|`` over overlapping
  predicted tracks.
* LSTQ: ``sqrt(S_cls * S_assoc)``.
* MOTSA / sMOTSA and PTQ / sPTQ: per-frame mask matching at IoU > 0.5 with
  id switches counted against each ground-truth track's last matched
  predicted id.

Points whose ground-truth class equals ``ignore_label`` are dropped
everywhere. Instance masks are points with instance id > 0 (optionally also
restricted to thing classes). Float sums use ``math.fsum`` so results do not
depend on accumulation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class EvalFrame:
    gt_semantic: np.ndarray
    gt_instance: np.ndarray
    pred_semantic: np.ndarray
    pred_instance: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(a, dtype=np.int64).reshape(-1) for a in
                (self.gt_semantic, self.gt_instance, self.pred_semantic, self.pred_instance)]
        if len({a.shape[0] for a in arrs}) != 1:
            raise ValueError("gt and prediction arrays differ in length")
        for name, a in zip(("gt_semantic", "gt_instance", "pred_semantic", "pred_instance"), arrs):
            object.__setattr__(self, name, a)

    def __len__(self):
        return self.gt_semantic.shape[0]


@dataclass
class MetricReport:
    lstq: float
    s_assoc: float
    s_cls: float
    per_class_iou: dict
    motsa: float
    smotsa: float
    ptq: float
    sptq: float
    id_switches: int
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_iou"] = {str(k): v for k, v in sorted(self.per_class_iou.items())}
        return d

    def to_text(self) -> str:
        lines = [f"{k}={getattr(self, k)!r}" for k in
                 ("lstq", "s_assoc", "s_cls", "motsa", "smotsa", "ptq", "sptq", "id_switches", "tp", "fp", "fn")]
        lines += [f"iou_class_{c}={v!r}" for c, v in sorted(self.per_class_iou.items())]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- helpers


def _valid(frame: EvalFrame, ignore_label: Optional[int]) -> np.ndarray:
    if ignore_label is None:
        return np.ones(len(frame), dtype=bool)
    return frame.gt_semantic != ignore_label


def _thing_masks(frame: EvalFrame, valid: np.ndarray, thing_classes) -> tuple[np.ndarray, np.ndarray]:
    gt = valid & (frame.gt_instance > 0)
    pr = valid & (frame.pred_instance > 0)
    if thing_classes is not None:
        things = np.fromiter(thing_classes, dtype=np.int64)
        gt &= np.isin(frame.gt_semantic, things)
        pr &= np.isin(frame.pred_semantic, things)
    return gt, pr


def _pair_counts(a: np.ndarray, b: np.ndarray) -> dict[tuple[int, int], int]:
    if a.size == 0:
        return {}
    pairs, counts = np.unique(np.column_stack([a, b]), axis=0, return_counts=True)
    return {(int(x), int(y)): int(c) for (x, y), c in zip(pairs, counts)}


def _sizes(a: np.ndarray) -> dict[int, int]:
    ids, counts = np.unique(a, return_counts=True)
    return {int(i): int(c) for i, c in zip(ids, counts)}


def _majority(labels: np.ndarray) -> int:
    classes, counts = np.unique(labels, return_counts=True)
    return int(classes[np.argmax(counts)])


# ---------------------------------------------------------------- S_cls


def s_cls(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0) -> tuple[float, dict[int, float]]:
    """Mean class IoU over classes seen in ground truth or prediction, and the per-class values."""
    pairs: dict[tuple[int, int], int] = {}
    for fr in frames:
        v = _valid(fr, ignore_label)
        for k, c in _pair_counts(fr.gt_semantic[v], fr.pred_semantic[v]).items():
            pairs[k] = pairs.get(k, 0) + c
    classes = sorted({g for g, _ in pairs} | {p for _, p in pairs})
    per_class = {}
    for c in classes:
        tp = pairs.get((c, c), 0)
        fn = sum(n for (g, p), n in pairs.items() if g == c and p != c)
        fp = sum(n for (g, p), n in pairs.items() if p == c and g != c)
        per_class[c] = tp / (tp + fn + fp)
    if not per_class:
        return 0.0, {}
    return math.fsum(per_class.values()) / len(per_class), per_class


# -------------------------------------------------------------- S_assoc


def s_assoc(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0, thing_classes=None) -> float:
    gt_ids, pr_ids, both_gt, both_pr = [], [], [], []
    for fr in frames:
        v = _valid(fr, ignore_label)
        gt, pr = _thing_masks(fr, v, thing_classes)
        gt_ids.append(fr.gt_instance[gt])
        pr_ids.append(fr.pred_instance[pr])
        inter = gt & pr
        both_gt.append(fr.gt_instance[inter])
        both_pr.append(fr.pred_instance[inter])
    gt_size = _sizes(np.concatenate(gt_ids)) if gt_ids else {}
    if not gt_size:
        return 0.0
    pr_size = _sizes(np.concatenate(pr_ids))
    overlap = _pair_counts(np.concatenate(both_gt), np.concatenate(both_pr))
    per_track: dict[int, list[float]] = {t: [] for t in gt_size}
    for (t, s), tpa in overlap.items():
        union = gt_size[t] + pr_size[s] - tpa
        per_track[t].append(tpa * (tpa / union))
    scores = [math.fsum(per_track[t]) / gt_size[t] for t in sorted(gt_size)]
    return math.fsum(scores) / len(scores)


def lstq_value(s_cls_value: float, s_assoc_value: float) -> float:
    return math.sqrt(s_cls_value * s_assoc_value)


# ------------------------------------------------------ per-frame matching


@dataclass
class _TrackingCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    iou: list = field(default_factory=list)
    switch_iou: list = field(default_factory=list)


def _frame_segments(fr: EvalFrame, mask_gt, mask_pr):
    gt_size = _sizes(fr.gt_instance[mask_gt])
    pr_size = _sizes(fr.pred_instance[mask_pr])
    inter = mask_gt & mask_pr
    overlap = _pair_counts(fr.gt_instance[inter], fr.pred_instance[inter])
    gt_cls = {g: _majority(fr.gt_semantic[mask_gt & (fr.gt_instance == g)]) for g in gt_size}
    pr_cls = {p: _majority(fr.pred_semantic[mask_pr & (fr.pred_instance == p)]) for p in pr_size}
    return gt_size, pr_size, overlap, gt_cls, pr_cls


def _match(gt_size, pr_size, overlap, gt_keep, pr_keep) -> dict[int, tuple[int, float]]:
    """gt id -> (pred id, IoU) for pairs with IoU > 0.5; such matches are unique on both sides."""
    out = {}
    for (g, p), n in sorted(overlap.items()):
        if g not in gt_keep or p not in pr_keep:
            continue
        iou = n / (gt_size[g] + pr_size[p] - n)
        if iou > 0.5:
            out[g] = (p, iou)
    return out


def _accumulate(counts: _TrackingCounts, last: dict, matches, n_gt: int, n_pr: int) -> None:
    counts.tp += len(matches)
    counts.fn += n_gt - len(matches)
    counts.fp += n_pr - len(matches)
    for g in sorted(matches):
        p, iou = matches[g]
        counts.iou.append(iou)
        if g in last and last[g] != p:
            counts.idsw += 1
            counts.switch_iou.append(iou)
        last[g] = p


def tracking_counts(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0, thing_classes=None):
    """Class-agnostic counts (for MOTSA) and per-class counts (for PTQ)."""
    overall = _TrackingCounts()
    per_class: dict[int, _TrackingCounts] = {}
    last_all: dict = {}
    last_cls: dict = {}
    for fr in frames:
        v = _valid(fr, ignore_label)
        mg, mp = _thing_masks(fr, v, thing_classes)
        gt_size, pr_size, overlap, gt_cls, pr_cls = _frame_segments(fr, mg, mp)
        m = _match(gt_size, pr_size, overlap, gt_size.keys(), pr_size.keys())
        _accumulate(overall, last_all, m, len(gt_size), len(pr_size))
        for c in sorted(set(gt_cls.values()) | set(pr_cls.values())):
            gk = {g for g, k in gt_cls.items() if k == c}
            pk = {p for p, k in pr_cls.items() if k == c}
            mc = _match(gt_size, pr_size, overlap, gk, pk)
            _accumulate(per_class.setdefault(c, _TrackingCounts()), last_cls.setdefault(c, {}), mc, len(gk), len(pk))
    return overall, per_class


def motsa(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0, thing_classes=None) -> tuple[float, float]:
    counts, _ = tracking_counts(frames, ignore_label, thing_classes)
    return _motsa_from(counts)


def _motsa_from(c: _TrackingCounts) -> tuple[float, float]:
    n_gt = c.tp + c.fn
    if n_gt == 0:
        return 0.0, 0.0
    return (c.tp - c.fp - c.idsw) / n_gt, (math.fsum(c.iou) - c.fp - c.idsw) / n_gt


def ptq(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0, thing_classes=None) -> tuple[float, float]:
    _, per_class = tracking_counts(frames, ignore_label, thing_classes)
    return _ptq_from(per_class)


def _ptq_from(per_class: dict[int, _TrackingCounts]) -> tuple[float, float]:
    if not per_class:
        return 0.0, 0.0
    hard, soft = [], []
    for c in sorted(per_class):
        k = per_class[c]
        denom = k.tp + 0.5 * k.fp + 0.5 * k.fn
        total = math.fsum(k.iou)
        hard.append((total - k.idsw) / denom)
        soft.append((total - math.fsum(k.switch_iou)) / denom)
    return math.fsum(hard) / len(hard), math.fsum(soft) / len(soft)


# --------------------------------------------------------------- driver


def evaluate(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0, thing_classes: Optional[Iterable[int]] = None) -> MetricReport:
    """Full metric suite for one sequence."""
    thing_classes = None if thing_classes is None else tuple(thing_classes)
    cls_mean, per_class_iou = s_cls(frames, ignore_label)
    assoc = s_assoc(frames, ignore_label, thing_classes)
    overall, per_class = tracking_counts(frames, ignore_label, thing_classes)
    mo, smo = _motsa_from(overall)
    pt, spt = _ptq_from(per_class)
    return MetricReport(
        lstq=lstq_value(cls_mean, assoc),
        s_assoc=assoc,
        s_cls=cls_mean,
        per_class_iou=per_class_iou,
        motsa=mo,
        smotsa=smo,
        ptq=pt,
        sptq=spt,
        id_switches=overall.idsw,
        tp=overall.tp,
        fp=overall.fp,
        fn=overall.fn,
    )


def lstq(frames: Sequence[EvalFrame], ignore_label: Optional[int] = 0, thing_classes=None) -> MetricReport:
    return evaluate(frames, ignore_label, thing_classes)
