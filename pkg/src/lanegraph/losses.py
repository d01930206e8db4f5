"""Training objectives: symmetric polyline loss with hand-derived gradients,
gradient-descent polyline fitting, and the counting-supervision losses.

The symmetric loss between polylines P and Q densifies both, then sums each
side's per-point distance to the nearest point of the other side (pairwise
distances, min-pool, sum). Gradients treat the nearest-match assignment as
locally constant and flow through every densified sample back onto the two
vertices it is a convex combination of.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import DensifiedPolyline, Polyline, densify_params, nearest_to_set

__all__ = [
    "DivergenceError",
    "polyline_loss",
    "polyline_loss_value",
    "nearest_match_indices",
    "finite_difference_gradient",
    "fit_polyline",
    "region_cross_entropy",
    "halting_bce",
    "write_loss_trace_csv",
]

PROB_CLAMP = 1e-12


class DivergenceError(RuntimeError):
    """Raised when an optimization loop blows past the divergence guard."""


def _match(dp: DensifiedPolyline, dq: DensifiedPolyline, q_tree: cKDTree | None = None):
    """Nearest-neighbor matching in both directions between two densified polylines."""
    d_pq, i_pq = nearest_to_set(dp.points, dq.points, tree=q_tree)
    d_qp, i_qp = nearest_to_set(dq.points, dp.points)
    return d_pq, i_pq, d_qp, i_qp


def _scatter_onto_vertices(grad, dp: DensifiedPolyline, sample_idx, unit_residuals):
    """Accumulate per-sample residuals onto the parent vertices with convex weights."""
    seg = dp.seg[sample_idx]
    t = dp.t[sample_idx]
    np.add.at(grad, seg, (1.0 - t)[:, None] * unit_residuals)
    np.add.at(grad, seg + 1, t[:, None] * unit_residuals)


def _unit_residuals(diff: np.ndarray, dist: np.ndarray) -> np.ndarray:
    # exactly-zero distances contribute zero gradient (subgradient choice)
    u = np.zeros_like(diff)
    nz = dist > 0
    u[nz] = diff[nz] / dist[nz][:, None]
    return u


def polyline_loss(
    p: Polyline,
    q: Polyline,
    step: float = 1.0,
    normalized: bool = False,
) -> tuple[float, np.ndarray]:
    """Symmetric polyline loss and its gradient w.r.t. the vertices of ``p``.

    Returns (value, gradient) where gradient has shape (len(p), 2). With
    ``normalized`` each directed term is divided by its own point count,
    giving a mean-per-point loss; the default is the plain sum.
    """
    dq = densify_params(q, step)
    return _loss_and_grad_raw(p.vertices, dq, None, step, normalized)


def polyline_loss_value(
    p: Polyline | np.ndarray,
    q: Polyline | np.ndarray,
    step: float = 1.0,
    normalized: bool = False,
    q_dense: DensifiedPolyline | None = None,
    q_tree: cKDTree | None = None,
) -> float:
    """Value-only symmetric loss; accepts raw vertex arrays mid-optimization."""
    dp = densify_params(p, step)
    dq = q_dense if q_dense is not None else densify_params(q, step)
    d_pq, _, d_qp, _ = _match(dp, dq, q_tree)
    if normalized:
        return float(np.sum(d_pq) / len(dp.points) + np.sum(d_qp) / len(dq.points))
    return float(np.sum(d_pq) + np.sum(d_qp))


def nearest_match_indices(p: Polyline | np.ndarray, q: Polyline | np.ndarray, step: float = 1.0):
    """The two argmin index arrays behind the loss; used to detect matching flips."""
    dp = densify_params(p, step)
    dq = densify_params(q, step)
    _, i_pq, _, i_qp = _match(dp, dq)
    return i_pq, i_qp


def loss_value_and_matching(
    p: Polyline | np.ndarray,
    q: Polyline | np.ndarray,
    step: float = 1.0,
    q_dense: DensifiedPolyline | None = None,
    q_tree: cKDTree | None = None,
):
    """(value, i_pq, i_qp) in one pass; lets gradient checks probe for match
    flips without paying for a second matching."""
    dp = densify_params(p, step)
    dq = q_dense if q_dense is not None else densify_params(q, step)
    d_pq, i_pq, d_qp, i_qp = _match(dp, dq, q_tree)
    return float(np.sum(d_pq) + np.sum(d_qp)), i_pq, i_qp


def finite_difference_gradient(
    p: Polyline,
    q: Polyline,
    step: float = 1.0,
    epsilon: float = 1e-4,
    normalized: bool = False,
) -> np.ndarray:
    """Central-difference estimate of d(polyline_loss)/d(vertices of p)."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    dq = densify_params(q, step)
    q_tree = cKDTree(dq.points)
    base = p.vertices
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(2):
            plus = base.copy()
            plus[i, j] += epsilon
            minus = base.copy()
            minus[i, j] -= epsilon
            f_plus = polyline_loss_value(plus, q, step, normalized, q_dense=dq, q_tree=q_tree)
            f_minus = polyline_loss_value(minus, q, step, normalized, q_dense=dq, q_tree=q_tree)
            grad[i, j] = (f_plus - f_minus) / (2.0 * epsilon)
    return grad


def _loss_and_grad_raw(pv, dq, q_tree, step, normalized):
    dp = densify_params(pv, step)
    d_pq, i_pq, d_qp, i_qp = _match(dp, dq, q_tree)
    w_pq = 1.0 / len(dp.points) if normalized else 1.0
    w_qp = 1.0 / len(dq.points) if normalized else 1.0
    value = float(np.sum(d_pq) * w_pq + np.sum(d_qp) * w_qp)
    grad = np.zeros_like(pv)
    u = _unit_residuals(dp.points - dq.points[i_pq], d_pq) * w_pq
    _scatter_onto_vertices(grad, dp, np.arange(len(dp.points)), u)
    u = _unit_residuals(dp.points[i_qp] - dq.points, d_qp) * w_qp
    _scatter_onto_vertices(grad, dp, i_qp, u)
    return value, grad


DIVERGENCE_LIMIT = 1e12
MAX_HALVINGS = 20


def _candidate_sane(pv: np.ndarray, length_limit: float) -> bool:
    """Reject line-search candidates too wild to densify (inf loss stand-in)."""
    if not np.isfinite(pv).all():
        return False
    d = np.diff(pv, axis=0)
    return float(np.abs(d).sum()) < length_limit


def _length_limit(pv: np.ndarray) -> float:
    d = np.diff(pv, axis=0)
    return 10.0 * float(np.abs(d).sum()) + 1e4


def fit_polyline(
    p0: Polyline,
    q: Polyline,
    steps: int,
    lr: float,
    step: float = 1.0,
    tol: float = 0.0,
    normalized: bool = False,
) -> tuple[Polyline, list[float]]:
    """Gradient descent on the symmetric polyline loss, starting from ``p0``.

    Backtracking halves the step size (up to 20 times) whenever a move would
    increase the loss, so the returned trace is non-increasing. The step size
    recovers by doubling after successful moves, capped at ``lr``. Stops early
    once the loss falls to ``tol`` or no decreasing step exists.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    dq = densify_params(q, step)
    q_tree = cKDTree(dq.points) if len(dq.points) >= 4 else None

    pv = p0.vertices.copy()
    limit = _length_limit(pv)
    loss, grad = _loss_and_grad_raw(pv, dq, q_tree, step, normalized)
    trace = [loss]
    if loss > DIVERGENCE_LIMIT:
        raise DivergenceError(f"initial loss {loss:.3e} exceeds divergence limit")
    for _ in range(steps):
        if loss <= tol:
            break
        accepted = None
        trial_lr = lr
        for _halving in range(MAX_HALVINGS + 1):
            cand = pv - trial_lr * grad
            if _candidate_sane(cand, limit):
                cand_loss = polyline_loss_value(cand, q, step, normalized, q_dense=dq, q_tree=q_tree)
                if cand_loss < loss:
                    accepted = (cand, cand_loss)
                    break
            trial_lr *= 0.5
        if accepted is None:
            break  # no strictly decreasing step within the halving budget
        pv, loss = accepted
        trace.append(loss)
        if loss > DIVERGENCE_LIMIT:
            raise DivergenceError(f"loss {loss:.3e} diverged after {len(trace) - 1} iterations")
        _, grad = _loss_and_grad_raw(pv, dq, q_tree, step, normalized)
    return Polyline(pv), trace


def region_cross_entropy(s: np.ndarray, gt) -> float:
    """Cross entropy of a K x K region softmax against the true starting bin."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"region softmax must be square, got shape {s.shape}")
    if (s < 0).any() or abs(float(s.sum()) - 1.0) > 1e-6:
        raise ValueError("region softmax entries must be nonnegative and sum to 1")
    row, col = (gt.row, gt.col) if hasattr(gt, "row") else (int(gt[0]), int(gt[1]))
    k = s.shape[0]
    if not (0 <= row < k and 0 <= col < k):
        raise ValueError(f"bin ({row}, {col}) outside [0, {k})^2")
    return -math.log(max(float(s[row, col]), PROB_CLAMP))


def halting_bce(h: float, y: int) -> float:
    """Binary cross entropy of the halting probability against the 0/1 label."""
    if not 0.0 <= h <= 1.0:
        raise ValueError(f"halting probability must be in [0, 1], got {h}")
    if y not in (0, 1):
        raise ValueError(f"halting label must be 0 or 1, got {y}")
    if y == 1:
        return -math.log(max(h, PROB_CLAMP))
    return -math.log(max(1.0 - h, PROB_CLAMP))


def write_loss_trace_csv(path: str | Path, trace: list[float]) -> None:
    """Export a loss trace as (iteration, value) CSV rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "value"])
        for i, v in enumerate(trace):
            writer.writerow([i, repr(v)])
