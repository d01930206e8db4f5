"""Polyline primitives: densification, nearest-point queries, directed distances.

Coordinate convention used throughout the package: points are (x, y) in
continuous pixel units, origin at the top-left corner, y increasing downward.
Pixel (row i, col j) covers [j, j+1) x [i, i+1) and has its center at
(j + 0.5, i + 0.5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Polyline",
    "PointSet",
    "LaneGraph",
    "DensifiedPolyline",
    "densify",
    "min_distance",
    "nearest_to_set",
    "directed_polyline_distance",
    "lane_graph_to_json",
    "lane_graph_from_json",
]


def _as_points_array(points, min_len: int, what: str) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{what} must be an (N, 2) array of (x, y) pairs, got shape {arr.shape}")
    if arr.shape[0] < min_len:
        raise ValueError(f"{what} needs at least {min_len} points, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite coordinates")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass
class Polyline:
    """Ordered vertex sequence; edges are the segments between consecutive vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = _as_points_array(self.vertices, 2, "polyline")
        seg = np.diff(self.vertices, axis=0)
        if (np.abs(seg).sum(axis=1) == 0).any():
            raise ValueError("polyline has coincident consecutive vertices")

    def __len__(self) -> int:
        return len(self.vertices)

    def segment_lengths(self) -> np.ndarray:
        seg = np.diff(self.vertices, axis=0)
        return np.sqrt(seg[:, 0] ** 2 + seg[:, 1] ** 2)

    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def translated(self, dx: float, dy: float) -> "Polyline":
        return Polyline(self.vertices + np.array([dx, dy]))


@dataclass
class PointSet:
    """Unordered-by-meaning, ordered-by-storage collection of 2D points (nonempty)."""

    points: np.ndarray

    def __post_init__(self):
        self.points = _as_points_array(self.points, 1, "point set")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class LaneGraph:
    """Ordered set of lane-boundary polylines, left to right.

    Lanes are normalized on construction to ascending x of the first vertex
    (ties broken by y), which is the order every producer and consumer of
    lane graphs in this package relies on.
    """

    lanes: list[Polyline] = field(default_factory=list)

    def __post_init__(self):
        self.lanes = sorted(
            list(self.lanes),
            key=lambda p: (p.vertices[0, 0], p.vertices[0, 1]),
        )

    def __len__(self) -> int:
        return len(self.lanes)


@dataclass
class DensifiedPolyline:
    """Densified samples of a polyline plus the convex-combination parametrization.

    Sample i equals (1 - t[i]) * vertices[seg[i]] + t[i] * vertices[seg[i] + 1],
    which is what lets losses push gradients from samples back onto vertices.
    """

    points: np.ndarray      # (M, 2)
    seg: np.ndarray         # (M,) int, parent segment index
    t: np.ndarray           # (M,) float in [0, 1]

    def as_point_set(self) -> PointSet:
        return PointSet(self.points)


def densify(p: Polyline, step: float = 1.0) -> PointSet:
    """All vertices of ``p`` plus interior samples at spacing <= ``step`` per segment."""
    return densify_params(p, step).as_point_set()


def densify_params(p: "Polyline | np.ndarray", step: float = 1.0) -> DensifiedPolyline:
    """Like :func:`densify` but keeps each sample's parent segment and parameter.

    A segment of length L gets ceil(L / step) - 1 interior samples at uniform
    parameter spacing; vertices are emitted once each, in traversal order.
    Accepts a raw (N, 2) vertex array so optimizers can densify candidate
    states without re-validating polyline invariants each step.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    v = p.vertices if isinstance(p, Polyline) else np.asarray(p, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
        raise ValueError(f"need an (N>=2, 2) vertex array, got shape {v.shape}")
    d = np.diff(v, axis=0)
    lengths = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    # segment j contributes samples at t = k/m for k = 0..m-1 (its start vertex
    # plus ceil(L/step) - 1 interior points); the final vertex closes at t = 1
    m = np.maximum(np.ceil(lengths / step).astype(np.intp), 1)
    seg = np.repeat(np.arange(len(m), dtype=np.intp), m)
    k = np.arange(int(m.sum())) - np.repeat(np.cumsum(m) - m, m)
    t = k / m[seg]
    seg = np.concatenate([seg, [len(m) - 1]])
    t = np.concatenate([t, [1.0]])
    points = (1.0 - t)[:, None] * v[seg] + t[:, None] * v[seg + 1]
    return DensifiedPolyline(points=points, seg=seg, t=t)


def _pair_distances(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Canonical (points, targets) distance table: sqrt(dx*dx + dy*dy) in float64."""
    dx = points[:, 0][:, None] - targets[:, 0][None, :]
    dy = points[:, 1][:, None] - targets[:, 1][None, :]
    return np.sqrt(dx * dx + dy * dy)


def min_distance(p, s: PointSet) -> tuple[float, int]:
    """Minimum Euclidean distance from point ``p`` to the set, plus the argmin index.

    Ties break to the lowest index so downstream gradients are deterministic.
    """
    pt = np.asarray(p, dtype=np.float64).reshape(2)
    d = _pair_distances(pt[None, :], s.points)[0]
    idx = int(np.argmin(d))
    return float(d[idx]), idx


# Resolve nearest-neighbor candidates exhaustively whenever the top-2 KD-tree
# distances are this close; keeps the lowest-index tie rule exact at KD speed.
_TIE_BAND = 1e-7


def nearest_to_set(
    points: np.ndarray,
    targets: np.ndarray,
    tree: cKDTree | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Lowest-index nearest neighbor in ``targets`` for every row of ``points``.

    Returns (distances, indices); distances use the same float64 arithmetic as
    an exhaustive scan, so values match a brute-force oracle bitwise.
    """
    points = np.asarray(points, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(targets)
    if n * len(points) <= 65536 or n < 4:
        d = _pair_distances(points, targets)
        idx = d.argmin(axis=1)
        return d[np.arange(len(points)), idx], idx
    if tree is None:
        tree = cKDTree(targets)
    dk, ik = tree.query(points, k=2)
    idx = ik[:, 0].astype(np.intp)
    ambiguous = (dk[:, 1] - dk[:, 0]) <= _TIE_BAND * np.maximum(1.0, dk[:, 0])
    if ambiguous.any():
        d_amb = _pair_distances(points[ambiguous], targets)
        idx[ambiguous] = d_amb.argmin(axis=1)
    diff = points - targets[idx]
    dist = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2)
    return dist, idx


def directed_polyline_distance(a: PointSet, b: PointSet) -> float:
    """Sum over points of ``a`` of the distance to the nearest point of ``b``."""
    dist, _ = nearest_to_set(a.points, b.points)
    return float(np.sum(dist))


def lane_graph_to_json(g: LaneGraph) -> str:
    return json.dumps({"lanes": [p.vertices.tolist() for p in g.lanes]})


def lane_graph_from_json(text: str | bytes) -> LaneGraph:
    obj = json.loads(text)
    return lane_graph_from_obj(obj)


def lane_graph_from_obj(obj: dict) -> LaneGraph:
    if "lanes" not in obj:
        raise ValueError("lane graph JSON must have a 'lanes' key")
    return LaneGraph([Polyline(np.array(v, dtype=np.float64)) for v in obj["lanes"]])


def lane_graph_to_obj(g: LaneGraph) -> dict:
    return {"lanes": [p.vertices.tolist() for p in g.lanes]}
