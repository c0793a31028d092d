import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geotrack.geometry import InstanceSegment, RigidTransform, apply_transform, axis_angle_matrix
from geotrack.static import (
    StaticGateConfig,
    center_gate,
    covariance_gate,
    covariance_score,
    match_static,
)


class _Seg:
    """Stand-in exposing only the statistics the gates read."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, float)
        self.covariance = np.asarray(cov, float)


def _cloud(seed=0, n=200):
    return np.random.default_rng(seed).normal(size=(n, 3)) * [2.0, 1.0, 0.5]


def test_identical_segments_pass_both_gates():
    s = InstanceSegment(1, 10, _cloud())
    assert center_gate(s, s) == 0.0
    assert covariance_gate(s, s) == 0.0


def test_center_gate_examples():
    p = _cloud()
    s = InstanceSegment(1, 10, p)
    assert center_gate(s, InstanceSegment(2, 10, p + [0.2, 0, 0])) is None
    assert center_gate(s, InstanceSegment(2, 10, p + [0.05, 0, 0])) == pytest.approx(0.05, abs=1e-12)


def test_covariance_gate_examples():
    assert covariance_gate(_Seg(0, np.eye(3)), _Seg(0, np.eye(3))) == 0.0
    src, dst = _Seg(0, np.diag([1, 0, 0])), _Seg(0, np.diag([4, 0, 0]))
    assert covariance_score(src, dst)[0] == pytest.approx(0.6, abs=1e-12)
    assert covariance_gate(src, dst) is None
    # ||diag(0.01, 0, 0)||_F / (2 + 2.01)
    src, dst = _Seg(0, np.diag([1, 1, 0])), _Seg(0, np.diag([1.01, 1, 0]))
    assert covariance_gate(src, dst) == pytest.approx(0.01 / 4.01, rel=1e-9)


def test_single_point_segments_are_degenerate_but_pass():
    a = InstanceSegment(1, 10, [[1.0, 2.0, 3.0]])
    assert covariance_score(a, a) == (0.0, True)
    matches, _ = match_static([(a, a)])
    assert matches[0].degenerate


def test_invalid_thresholds():
    with pytest.raises(ValueError):
        StaticGateConfig(tau_center=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(0, 0.3))
def test_gates_symmetric_and_rigid_invariant(seed, angle, shift):
    a = _cloud(seed)
    b = _cloud(seed + 1) + [shift, 0, 0]
    t = RigidTransform(axis_angle_matrix((1, 2, 3), angle), (5, -2, 1))
    sa, sb = InstanceSegment(1, 10, a), InstanceSegment(2, 10, b)
    ta, tb = InstanceSegment(1, 10, apply_transform(t, a)), InstanceSegment(2, 10, apply_transform(t, b))
    cfg = StaticGateConfig(1.0, 1.0)
    assert center_gate(sa, sb, cfg) == pytest.approx(center_gate(sb, sa, cfg), abs=1e-12)
    assert covariance_gate(sa, sb, cfg) == pytest.approx(covariance_gate(sb, sa, cfg), abs=1e-12)
    assert center_gate(sa, sb, cfg) == pytest.approx(center_gate(ta, tb, cfg), abs=1e-9)
    assert covariance_gate(sa, sb, cfg) == pytest.approx(covariance_gate(ta, tb, cfg), abs=1e-9)


def test_match_static_single_pair():
    s = InstanceSegment(1, 10, _cloud())
    d = InstanceSegment(7, 10, _cloud())
    matches, remaining = match_static([(s, d)])
    assert [(m.src_id, m.dst_id) for m in matches] == [(1, 7)] and remaining == []


def test_two_sources_one_destination():
    p = _cloud()
    a, b = InstanceSegment(1, 10, p), InstanceSegment(2, 10, p)
    d = InstanceSegment(5, 10, p)
    matches, remaining = match_static([(a, d), (b, d)])
    assert len(matches) == 1 and matches[0].src_id == 1
    assert remaining == []  # the loser's only candidate touched a matched destination
    extra = InstanceSegment(6, 10, p + [4, 0, 0])
    _, remaining = match_static([(a, d), (b, d), (b, extra)])
    assert [(s.instance_id, t.instance_id) for s, t in remaining] == [(2, 6)]


def test_static_car_matched_moving_car_left():
    rng = np.random.default_rng(3)
    still = rng.normal(size=(300, 3)) * [2.0, 0.9, 0.7]
    mover = rng.normal(size=(300, 3)) * [2.0, 0.9, 0.7] + [0, 10, 0]
    s_still, s_move = InstanceSegment(1, 10, still), InstanceSegment(2, 10, mover)
    d_still = InstanceSegment(11, 10, still + rng.normal(scale=0.005, size=still.shape))
    d_move = InstanceSegment(12, 10, mover + [2, 0, 0])
    cands = [(s, d) for s in (s_still, s_move) for d in (d_still, d_move)]
    matches, remaining = match_static(cands)
    assert [(m.src_id, m.dst_id) for m in matches] == [(1, 11)]
    assert [(s.instance_id, d.instance_id) for s, d in remaining] == [(2, 12)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_match_static_injective_and_relabel_invariant(seed):
    rng = np.random.default_rng(seed)
    bases = [rng.normal(size=(50, 3)) * rng.uniform(0.5, 2, 3) for _ in range(4)]
    srcs = [InstanceSegment(i + 1, 10, b) for i, b in enumerate(bases)]
    dsts = [InstanceSegment(20 + i, 10, bases[k] + rng.normal(scale=0.01, size=(50, 3)))
            for i, k in enumerate(rng.integers(0, 4, 4))]
    cands = [(s, d) for s in srcs for d in dsts]
    matches, _ = match_static(cands, StaticGateConfig(0.2, 0.2))
    assert len({m.dst_id for m in matches}) == len(matches)
    assert len({m.src_id for m in matches}) == len(matches)
    # renumbering the sources by an order-preserving map renames the matches and nothing else
    ren = {s.instance_id: 100 + 2 * s.instance_id for s in srcs}
    srcs2 = [InstanceSegment(ren[s.instance_id], 10, s.points) for s in srcs]
    matches2, _ = match_static([(s, d) for s in srcs2 for d in dsts], StaticGateConfig(0.2, 0.2))
    assert sorted((ren[m.src_id], m.dst_id) for m in matches) == sorted((m.src_id, m.dst_id) for m in matches2)
