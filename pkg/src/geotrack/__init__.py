"""
Temporal instance association for LiDAR panoptic sequences.

Per-scan instance predictions are linked over time by a static-instance
gate, ICP registration with entropic-transport correspondences and a short
memory bank for occlusions. The metrics module scores the result.
"""

__version__ = "0.1.0"

from .errors import EmptySegment, FormatError, GeotrackError, InvalidTransform, IoError
from .geometry import (
    InstanceSegment,
    RigidTransform,
    Scan,
    apply_transform,
    compose,
    segment_statistics,
    transform_error,
)
from .ot import TransportPlan, build_cost, sinkhorn, soft_correspondences, transport
from .icp import IcpConfig, RegistrationResult, accept, histogram_init, kabsch_update, register
from .static import StaticGateConfig, StaticMatch, center_gate, covariance_gate, match_static
from .assignment import AcceptedPair, CostWeights, MatchCost, assign, assign_greedy, assign_hungarian
from .tracker import MemoryBank, IdAllocator, Tracker, TrackerConfig, build_candidates, refine_dbscan, run_sequence
from .metrics import EvalFrame, MetricReport, evaluate, s_assoc, s_cls, motsa, ptq
from .synthetic import RigidBody, SyntheticScene, generate_synthetic, make_scene

__all__ = [name for name in dir() if not name.startswith("_")]
