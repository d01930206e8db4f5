"""Count-then-draw lane extraction: propose ordered starting regions over a
K x K bin grid, trace each boundary upward by crop-and-step, then refine the
trace against marking evidence by loss descent.

The counter and drawer are deterministic evidence-driven procedures with the
same interfaces a learned counter/drawer would have (bin-grid start regions,
fixed-size crops, a step cap of ceil(H / crop_h) + 3, implicit halting when
no more starting regions exist).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import LaneGraph, PointSet, Polyline, densify_params, nearest_to_set
from .losses import DIVERGENCE_LIMIT, MAX_HALVINGS, DivergenceError, _candidate_sane, _length_limit
from .scenegen import BevRaster, evidence_points

__all__ = [
    "RegionBin",
    "ExtractionParams",
    "LaneProvenance",
    "TraceResult",
    "ExtractionResult",
    "point_to_bin",
    "bin_bounds",
    "propose_initial_regions",
    "trace_polyline",
    "refine_polyline",
    "trace_and_refine",
    "extract_lane_graph",
    "extraction_result_to_obj",
    "extraction_result_from_obj",
]


@dataclass(frozen=True)
class RegionBin:
    """One cell of the K x K tiling of the raster."""

    row: int
    col: int
    k: int = 24

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"grid size must be >= 2, got {self.k}")
        if not (0 <= self.row < self.k and 0 <= self.col < self.k):
            raise ValueError(f"bin ({self.row}, {self.col}) outside [0, {self.k})^2")


@dataclass(frozen=True)
class ExtractionParams:
    k_grid: int = 24
    tau: float = 0.5
    crop_h: int = 60
    crop_w: int = 60
    smooth_lambda: float = 0.05
    refine_steps: int = 50
    refine_lr: float = 25.0
    merge_radius_px: float = 33.0        # half the minimum expected lane spacing
    min_cluster_points: int = 6
    density_window_px: float = 3.0
    density_min_neighbors: int = 5
    bottom_fraction: float = 0.25
    corridor_px: float = 12.0
    min_lane_length_px: float = 240.0
    heading_smoothing: float = 0.5
    max_dead_windows: int = 3
    min_window_points: int = 3


@dataclass(frozen=True)
class LaneProvenance:
    bin: RegionBin
    steps: int
    stop: str  # "boundary" | "no-evidence" | "step-cap"


@dataclass
class TraceResult:
    polyline: Polyline
    stop: str
    steps: int


@dataclass
class ExtractionResult:
    graph: LaneGraph
    provenance: list[LaneProvenance] = field(default_factory=list)

    def __post_init__(self):
        if len(self.provenance) != len(self.graph):
            raise ValueError("provenance length must equal lane count")


# ------------------------------------------------------------------ bin tiling

def point_to_bin(point, height: int, width: int, k: int) -> RegionBin:
    """Containing bin of a pixel position; edge positions clamp inward."""
    x, y = float(point[0]), float(point[1])
    row = min(max(int(y * k / height), 0), k - 1)
    col = min(max(int(x * k / width), 0), k - 1)
    return RegionBin(row, col, k)


def bin_bounds(b: RegionBin, height: int, width: int) -> tuple[float, float, float, float]:
    """(x0, y0, x1, y1) pixel extent of a bin."""
    bh = height / b.k
    bw = width / b.k
    return b.col * bw, b.row * bh, (b.col + 1) * bw, (b.row + 1) * bh


# ------------------------------------------------------------------ counting

def propose_initial_regions(
    r: BevRaster,
    k: int = 24,
    tau: float = 0.5,
    merge_radius_px: float = 33.0,
    min_cluster_points: int = 6,
    density_window_px: float = 3.0,
    density_min_neighbors: int = 5,
    bottom_fraction: float = 0.25,
) -> list[RegionBin]:
    """Ordered starting bins, one per lane entering the bottom of the raster.

    Evidence in the bottom quarter is clustered by lateral position: isolated
    points (fewer than ``density_min_neighbors`` within ``density_window_px``
    in x) are discarded as noise, survivors are single-linkage clustered with
    ``merge_radius_px``, and each sufficiently large cluster contributes its
    bottommost point's bin. The returned list reads left to right; an empty
    list means zero lanes.
    """
    if k < 2:
        raise ValueError(f"grid size must be >= 2, got {k}")
    ev = evidence_points(r, tau)
    if ev is None:
        return []
    pts = ev.points
    pts = pts[pts[:, 1] >= (1.0 - bottom_fraction) * r.height]
    if len(pts) == 0:
        return []

    order = np.argsort(pts[:, 0], kind="stable")
    pts = pts[order]
    xs = pts[:, 0]
    left = np.searchsorted(xs, xs - density_window_px, side="left")
    right = np.searchsorted(xs, xs + density_window_px, side="right")
    dense = (right - left - 1) >= density_min_neighbors
    pts = pts[dense]
    if len(pts) == 0:
        return []

    xs = pts[:, 0]
    breaks = np.nonzero(np.diff(xs) > merge_radius_px)[0] + 1
    bins: list[RegionBin] = []
    for cluster in np.split(pts, breaks):
        if len(cluster) < min_cluster_points:
            continue
        entry = cluster[np.lexsort((cluster[:, 0], -cluster[:, 1]))[0]]
        b = point_to_bin(entry, r.height, r.width, k)
        if b not in bins:
            bins.append(b)
    return bins


# ------------------------------------------------------------------ drawing

def _border_exit(v: np.ndarray, h: np.ndarray, height: int, width: int) -> float:
    """Distance along heading h from v to the first raster border."""
    t = math.inf
    if h[1] < 0:
        t = min(t, v[1] / -h[1])
    elif h[1] > 0:
        t = min(t, (height - v[1]) / h[1])
    if h[0] < 0:
        t = min(t, v[0] / -h[0])
    elif h[0] > 0:
        t = min(t, (width - v[0]) / h[0])
    return t


def trace_polyline(
    r: BevRaster,
    start: RegionBin,
    tau: float = 0.5,
    crop_h: int = 60,
    crop_w: int = 60,
    heading_smoothing: float = 0.5,
    max_dead_windows: int = 3,
    min_window_points: int = 3,
) -> TraceResult:
    """Trace one boundary upward from a starting bin by crop-and-step.

    Each step looks at the crop_h x crop_w window one crop-height ahead along
    the current heading (so it sits fully forward of the current vertex) and
    steps to the evidence centroid inside it; a window with fewer than
    ``min_window_points`` evidence points (stray noise cannot steer the trace)
    dead-reckons one window-height through the occlusion. Stops at the raster
    border (final vertex clipped onto it), after ``max_dead_windows``
    consecutive empty windows, or at the ceil(H / crop_h) + 3 step cap.
    """
    ev = evidence_points(r, tau)
    x0, y0, x1, y1 = bin_bounds(start, r.height, r.width)
    if ev is None:
        raise ValueError(f"start bin ({start.row}, {start.col}) contains no evidence")
    pts = ev.points
    in_bin = (pts[:, 0] >= x0) & (pts[:, 0] < x1) & (pts[:, 1] >= y0) & (pts[:, 1] < y1)
    if not in_bin.any():
        raise ValueError(f"start bin ({start.row}, {start.col}) contains no evidence")

    v = pts[in_bin].mean(axis=0)
    heading = np.array([0.0, -1.0])
    verts = [v]
    step_cap = math.ceil(r.height / crop_h) + 3
    steps = 0
    dead = 0
    stop = "step-cap"
    while steps < step_cap:
        center = v + crop_h * heading
        if not (0.0 <= center[0] < r.width and 0.0 <= center[1] < r.height):
            t = _border_exit(v, heading, r.height, r.width)
            if np.isfinite(t) and t > 1e-9:
                exit_v = v + t * heading
                if exit_v[1] < v[1]:
                    verts.append(exit_v)
            stop = "boundary"
            break
        in_crop = (
            (np.abs(pts[:, 0] - center[0]) <= crop_w / 2)
            & (np.abs(pts[:, 1] - center[1]) <= crop_h / 2)
            & (pts[:, 1] < v[1])  # upward progress by construction
        )
        if int(in_crop.sum()) >= min_window_points:
            nxt = pts[in_crop].mean(axis=0)
            dead = 0
        else:
            nxt = v + crop_h * heading
            dead += 1
        direction = nxt - v
        norm = float(np.hypot(direction[0], direction[1]))
        if norm < 1e-9:
            stop = "no-evidence"
            break
        heading = heading_smoothing * heading + (1.0 - heading_smoothing) * direction / norm
        # keep the tracer pointed meaningfully upward
        heading[1] = min(heading[1], -0.2)
        heading /= float(np.hypot(heading[0], heading[1]))
        verts.append(nxt)
        v = nxt
        steps += 1
        if dead >= max_dead_windows:
            stop = "no-evidence"
            break

    if len(verts) < 2:
        # degenerate start at the border: emit a minimal upward stub
        verts.append(verts[0] + np.array([0.0, -max(verts[0][1], 1.0) * 0.5]))
    return TraceResult(Polyline(np.array(verts)), stop, steps)


# ------------------------------------------------------------------ refinement

def _refine_loss_grad(pv: np.ndarray, tree: cKDTree, targets: np.ndarray, lam: float, step: float):
    dp = densify_params(pv, step)
    dist, idx = nearest_to_set(dp.points, targets, tree=tree)
    m = len(dp.points)
    value = float(np.sum(dist)) / m
    grad = np.zeros_like(pv)
    u = np.zeros_like(dp.points)
    nz = dist > 0
    u[nz] = (dp.points[nz] - targets[idx[nz]]) / dist[nz][:, None] / m
    np.add.at(grad, dp.seg, (1.0 - dp.t)[:, None] * u)
    np.add.at(grad, dp.seg + 1, dp.t[:, None] * u)
    if lam > 0 and len(pv) >= 3:
        s = pv[:-2] - 2.0 * pv[1:-1] + pv[2:]
        value += lam * float((s * s).sum())
        grad[:-2] += 2.0 * lam * s
        grad[1:-1] += -4.0 * lam * s
        grad[2:] += 2.0 * lam * s
    grad[0] = 0.0
    grad[-1] = 0.0
    return value, grad


def _refine_loss_value(pv, tree, targets, lam, step):
    dp = densify_params(pv, step)
    dist, _ = nearest_to_set(dp.points, targets, tree=tree)
    value = float(np.sum(dist)) / len(dp.points)
    if lam > 0 and len(pv) >= 3:
        s = pv[:-2] - 2.0 * pv[1:-1] + pv[2:]
        value += lam * float((s * s).sum())
    return value


def refine_polyline(
    p: Polyline,
    evidence: PointSet,
    lam: float = 0.05,
    steps: int = 50,
    lr: float = 25.0,
    densify_step: float = 1.0,
) -> Polyline:
    """Pull a traced polyline onto the evidence ridge by loss descent.

    Minimizes mean per-sample distance to the nearest evidence point plus a
    curvature penalty lam * sum ||p[j-1] - 2 p[j] + p[j+1]||^2, with both
    endpoints frozen and backtracking keeping the loss non-increasing.
    """
    if len(evidence.points) == 0:
        raise ValueError("refinement needs nonempty evidence")
    targets = evidence.points
    tree = cKDTree(targets) if len(targets) >= 4 else None
    pv = p.vertices.copy()
    limit = _length_limit(pv)
    loss, grad = _refine_loss_grad(pv, tree, targets, lam, densify_step)
    cur_lr = lr
    for _ in range(steps):
        accepted = None
        # resume near the last working step size, but never open with a move
        # bigger than ~10 px: huge smoothness weights make gradients so large
        # that 20 halvings from a fixed lr cannot reach a productive scale
        gmax = float(np.abs(grad).max())
        trial = min(cur_lr * 2.0, lr, 10.0 / (gmax + 1e-12))
        for _halving in range(MAX_HALVINGS + 1):
            cand = pv - trial * grad
            if _candidate_sane(cand, limit):
                cand_loss = _refine_loss_value(cand, tree, targets, lam, densify_step)
                if cand_loss < loss:
                    accepted = (cand, cand_loss, trial)
                    break
            trial *= 0.5
        if accepted is None:
            break
        pv, loss, cur_lr = accepted
        if loss > DIVERGENCE_LIMIT:
            raise DivergenceError(f"refinement diverged, loss {loss:.3e}")
        _, grad = _refine_loss_grad(pv, tree, targets, lam, densify_step)
    return Polyline(pv)


# ------------------------------------------------------------------ pipeline

def trace_and_refine(
    r: BevRaster,
    b: RegionBin,
    params: ExtractionParams = ExtractionParams(),
    ev: PointSet | None = None,
) -> tuple[Polyline, LaneProvenance]:
    """One lane from a starting bin: trace, then refine on corridor evidence."""
    traced = trace_polyline(
        r,
        b,
        tau=params.tau,
        crop_h=params.crop_h,
        crop_w=params.crop_w,
        heading_smoothing=params.heading_smoothing,
        max_dead_windows=params.max_dead_windows,
        min_window_points=params.min_window_points,
    )
    lane = traced.polyline
    if ev is None:
        ev = evidence_points(r, params.tau)
    corridor = _corridor_evidence(lane, ev, params.corridor_px)
    if corridor is not None:
        lane = refine_polyline(
            lane,
            corridor,
            lam=params.smooth_lambda,
            steps=params.refine_steps,
            lr=params.refine_lr,
        )
    return lane, LaneProvenance(b, traced.steps, traced.stop)


def extract_lane_graph(r: BevRaster, params: ExtractionParams = ExtractionParams()) -> ExtractionResult:
    """Full pipeline: propose bins left to right, trace and refine each lane."""
    bins = propose_initial_regions(
        r,
        k=params.k_grid,
        tau=params.tau,
        merge_radius_px=params.merge_radius_px,
        min_cluster_points=params.min_cluster_points,
        density_window_px=params.density_window_px,
        density_min_neighbors=params.density_min_neighbors,
        bottom_fraction=params.bottom_fraction,
    )
    ev = evidence_points(r, params.tau)
    lanes: list[tuple[Polyline, LaneProvenance]] = []
    for b in bins:
        traced = trace_polyline(
            r,
            b,
            tau=params.tau,
            crop_h=params.crop_h,
            crop_w=params.crop_w,
            heading_smoothing=params.heading_smoothing,
            max_dead_windows=params.max_dead_windows,
            min_window_points=params.min_window_points,
        )
        if traced.polyline.length() < params.min_lane_length_px:
            continue
        lane = traced.polyline
        corridor = _corridor_evidence(lane, ev, params.corridor_px)
        if corridor is not None:
            lane = refine_polyline(
                lane,
                corridor,
                lam=params.smooth_lambda,
                steps=params.refine_steps,
                lr=params.refine_lr,
            )
        lanes.append((lane, LaneProvenance(b, traced.steps, traced.stop)))

    lanes.sort(key=lambda lp: (lp[0].vertices[0, 0], lp[0].vertices[0, 1]))
    graph = LaneGraph([lane for lane, _ in lanes])
    return ExtractionResult(graph, [prov for _, prov in lanes])


def _corridor_evidence(lane: Polyline, ev: PointSet | None, corridor_px: float) -> PointSet | None:
    if ev is None:
        return None
    dp = densify_params(lane, step=2.0)
    dist, _ = nearest_to_set(ev.points, dp.points)
    near = ev.points[dist <= corridor_px]
    return PointSet(near) if len(near) else None


# ------------------------------------------------------------------ serialization

def extraction_result_to_obj(result: ExtractionResult) -> dict:
    return {
        "lanes": [lane.vertices.tolist() for lane in result.graph.lanes],
        "provenance": [
            {"bin": [p.bin.row, p.bin.col], "k": p.bin.k, "steps": p.steps, "stop": p.stop}
            for p in result.provenance
        ],
    }


def extraction_result_from_obj(obj: dict) -> ExtractionResult:
    graph = LaneGraph([Polyline(np.array(v)) for v in obj["lanes"]])
    prov = [
        LaneProvenance(RegionBin(p["bin"][0], p["bin"][1], p.get("k", 24)), p["steps"], p["stop"])
        for p in obj["provenance"]
    ]
    return ExtractionResult(graph, prov)


def extraction_result_to_json(result: ExtractionResult) -> str:
    return json.dumps(extraction_result_to_obj(result), sort_keys=True)
