"""
Entropy-regularised optimal transport between two point sets.

Each point set is treated as a uniform discrete distribution and the coupling
is found by Sinkhorn-Knopp matrix scaling. Two numerical paths share one loop:
plain scaling of the Gibbs kernel when its dynamic range is safe, and
log-domain (log-sum-exp) updates otherwise, so the solver never produces NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptySegment
from .geometry import as_points

# kernel path only when exp(-cost/eps) stays far from underflow
_KERNEL_RANGE = 50.0


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Coupling matrix with the marginals it was fitted to."""

    matrix: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    epsilon: float
    iterations: int
    converged: bool
    marginal_error: float
    log_domain: bool
    dual_history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape


def build_cost(src_points, dst_points) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape ``(len(src), len(dst))``."""
    src = as_points(src_points)
    dst = as_points(dst_points)
    if src.shape[0] == 0 or dst.shape[0] == 0:
        raise EmptySegment("cost matrix needs two nonempty point sets")
    return cdist(src, dst, "sqeuclidean")


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    out = np.log(np.exp(a - m).sum(axis=axis)) + np.squeeze(m, axis=axis)
    return out


def dual_objective(cost: np.ndarray, f: np.ndarray, g: np.ndarray, epsilon: float) -> float:
    """
    Dual value of the entropic problem at log-scalings ``f``, ``g``.

    With ``Q = diag(e^f) K diag(e^g)`` this is
    ``eps * (<f, a> + <g, b> - sum(Q) + 1)``; it is a lower bound on the
    primal optimum and increases monotonically under Sinkhorn updates.
    """
    cost = np.asarray(cost, dtype=np.float64)
    i, j = cost.shape
    q = np.exp(f[:, None] + g[None, :] - cost / epsilon)
    return float(epsilon * (f.sum() / i + g.sum() / j - q.sum() + 1.0))


def entropic_objective(cost: np.ndarray, plan: np.ndarray, epsilon: float) -> float:
    """Primal value ``<Z, Q>_F - eps * H(Q)`` with ``H(Q) = -sum Q log Q``."""
    q = np.asarray(plan, dtype=np.float64)
    pos = q > 0
    entropy = -float(np.sum(q[pos] * np.log(q[pos])))
    return float(np.sum(cost * q)) - epsilon * entropy


def sinkhorn(
    cost,
    epsilon: float,
    max_iters: int = 200,
    tol: float = 1e-6,
    record_dual: bool = False,
) -> TransportPlan:
    """
    Solve ``min_Q <Z, Q> - eps H(Q)`` over couplings with uniform marginals.

    Parameters
    ----------
    cost : array (I, J)
        Finite transport costs.
    epsilon : float
        Entropic regularisation strength, same units as ``cost``.
    max_iters : int
        Upper bound on full (row then column) scaling sweeps.
    tol : float
        Stop once the largest row-marginal violation is below ``tol``; the
        column marginals are exact after every sweep.
    record_dual : bool
        Keep the dual objective after every sweep in ``dual_history``.

    Returns
    -------
    TransportPlan
    """
    z = np.asarray(cost, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0 or z.shape[1] == 0:
        raise EmptySegment("sinkhorn needs a nonempty 2-D cost matrix")
    if not np.all(np.isfinite(z)):
        raise ValueError("cost matrix has non-finite entries")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n_rows, n_cols = z.shape
    a = np.full(n_rows, 1.0 / n_rows)
    b = np.full(n_cols, 1.0 / n_cols)
    # a constant shift of the cost only rescales the kernel
    shift = z.min()
    zs = z - shift
    log_domain = bool(zs.max() / epsilon > _KERNEL_RANGE)
    history = [] if record_dual else None

    f = np.zeros(n_rows)
    g = np.zeros(n_cols)
    err = np.inf
    converged = False
    iters = 0
    if log_domain:
        m = -zs / epsilon
        log_a, log_b = np.log(a), np.log(b)
        for iters in range(1, max_iters + 1):
            row_lse = _logsumexp(m + g[None, :], axis=1)
            if iters > 1:
                err = float(np.max(np.abs(np.exp(f + row_lse) - a)))
                if err < tol:
                    converged = True
                    iters -= 1
                    break
            f = log_a - row_lse
            g = log_b - _logsumexp(m + f[:, None], axis=0)
            if history is not None:
                history.append(dual_objective(zs, f, g, epsilon))
        else:
            row_lse = _logsumexp(m + g[None, :], axis=1)
            err = float(np.max(np.abs(np.exp(f + row_lse) - a)))
            converged = err < tol
        plan = np.exp(m + f[:, None] + g[None, :])
    else:
        k = np.multiply(zs, -1.0 / epsilon)
        np.exp(k, out=k)
        u = np.ones(n_rows)
        v = np.ones(n_cols)
        for iters in range(1, max_iters + 1):
            kv = k @ v
            if iters > 1:
                err = float(np.max(np.abs(u * kv - a)))
                if err < tol:
                    converged = True
                    iters -= 1
                    break
            u = a / kv
            v = b / (k.T @ u)
            if history is not None:
                history.append(dual_objective(zs, np.log(u), np.log(v), epsilon))
        else:
            err = float(np.max(np.abs(u * (k @ v) - a)))
            converged = err < tol
        k *= u[:, None]
        k *= v[None, :]
        plan = k

    return TransportPlan(
        matrix=plan,
        row_marginal=a,
        col_marginal=b,
        epsilon=float(epsilon),
        iterations=iters,
        converged=converged,
        marginal_error=err,
        log_domain=log_domain,
        dual_history=None if history is None else np.array(history),
    )


def soft_correspondences(plan) -> np.ndarray:
    """
    Row-wise argmax of a transport plan as an ``(I, 2)`` index array.

    Ties resolve to the lowest column index.
    """
    q = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan)
    cols = np.argmax(q, axis=1)
    return np.column_stack([np.arange(q.shape[0]), cols])


def mutual_correspondences(plan) -> np.ndarray:
    """Subset of the row argmax pairs whose column argmax points back to the same row."""
    q = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan)
    pairs = soft_correspondences(q)
    back = np.argmax(q, axis=0)
    keep = back[pairs[:, 1]] == pairs[:, 0]
    return pairs[keep]


def transport(
    src_points,
    dst_points,
    epsilon: float = 0.2,
    normalize_cost: bool = True,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> TransportPlan:
    """
    Plan between two point sets.

    With ``normalize_cost`` the squared distances are divided by their
    maximum, so ``epsilon`` is relative to the pair's spatial extent.
    """
    z = build_cost(src_points, dst_points)
    if normalize_cost:
        zmax = z.max()
        if zmax > 0:
            z = z / zmax
    return sinkhorn(z, epsilon, max_iters=max_iters, tol=tol)
