"""Dense-detection baseline post-processing: threshold a lane-probability map,
thin it to a skeleton, label connected components, vectorize each into a
polyline. A simulated detector output stands in for the trained network so the
chain stays testable end to end.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .geometry import LaneGraph, Polyline, densify_params
from .scenegen import RasterSpec

__all__ = [
    "dense_detection_map",
    "threshold_mask",
    "skeletonize",
    "connected_components",
    "components_to_polylines",
    "baseline_lane_graph",
    "PAPER_TAUS",
]

PAPER_TAUS = (0.3, 0.5, 0.7, 0.9)
DEFAULT_RIBBON_WIDTH_PX = 20
DEFAULT_MIN_COMPONENT_PX = 30
DEFAULT_SIMPLIFY_TOL_PX = 1.5


def dense_detection_map(
    gt: LaneGraph,
    spec: RasterSpec,
    width_px: int = DEFAULT_RIBBON_WIDTH_PX,
    blur_sigma: float = 0.0,
    noise_level: float = 0.0,
    seed: int = 0,
    occlusion_bands_m: tuple[tuple[float, float], ...] = (),
) -> np.ndarray:
    """Simulated detector output: wide ribbons around each boundary.

    Lanes rasterize to their centerline pixels, dilate to ``width_px`` via a
    distance transform, optionally lose rows inside occlusion bands (a real
    detector cannot see through occlusions), then Gaussian blur and additive
    noise clipped back to [0, 1]. Deterministic per seed.
    """
    if width_px < 1:
        raise ValueError(f"ribbon width must be >= 1 px, got {width_px}")
    h, w = spec.height_px, spec.width_px
    centerline = np.zeros((h, w), dtype=bool)
    for lane in gt.lanes:
        dp = densify_params(lane, step=0.5)
        col = np.clip(np.floor(dp.points[:, 0]).astype(int), 0, w - 1)
        row = np.clip(np.floor(dp.points[:, 1]).astype(int), 0, h - 1)
        centerline[row, col] = True
    if centerline.any():
        dist = ndimage.distance_transform_edt(~centerline)
        ribbon = (dist <= width_px / 2.0).astype(np.float64)
    else:
        ribbon = np.zeros((h, w))
    for lo_m, hi_m in occlusion_bands_m:
        lo = int(np.floor(lo_m / spec.resolution_m))
        hi = int(np.ceil(hi_m / spec.resolution_m))
        ribbon[max(lo, 0) : max(hi, 0), :] = 0.0
    if blur_sigma > 0:
        ribbon = ndimage.gaussian_filter(ribbon, blur_sigma)
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        ribbon = ribbon + rng.normal(0.0, noise_level, ribbon.shape)
    return np.clip(ribbon, 0.0, 1.0)


def threshold_mask(prob_map: np.ndarray, tau: float) -> np.ndarray:
    """Binary mask of pixels with probability >= tau."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    prob_map = np.asarray(prob_map)
    if prob_map.min() < 0 or prob_map.max() > 1:
        raise ValueError("probability map values must lie in [0, 1]")
    return (prob_map >= tau).astype(np.uint8)


def _neighbor_stack(img: np.ndarray) -> list[np.ndarray]:
    """P2..P9: the 8 neighbors of every pixel, clockwise from north."""
    padded = np.pad(img, 1)
    n = padded[:-2, 1:-1]
    ne = padded[:-2, 2:]
    e = padded[1:-1, 2:]
    se = padded[2:, 2:]
    s = padded[2:, 1:-1]
    sw = padded[2:, :-2]
    w = padded[1:-1, :-2]
    nw = padded[:-2, :-2]
    return [n, ne, e, se, s, sw, w, nw]


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Morphological thinning to a 1-px-wide 8-connected skeleton.

    Classic two-subiteration thinning: a pixel is deleted when it has 2..6
    neighbors, exactly one 0->1 transition around its ring, and the
    directional products of the subiteration vanish. Runs to a fixed point,
    so the operation is idempotent.
    """
    img = (np.asarray(mask) > 0).astype(np.uint8)
    while True:
        changed = False
        for phase in (0, 1):
            p = _neighbor_stack(img)
            b = sum(p)
            ring = p + [p[0]]
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)) for i in range(8))
            if phase == 0:
                cond = (p[0] * p[2] * p[4] == 0) & (p[2] * p[4] * p[6] == 0)
            else:
                cond = (p[0] * p[2] * p[6] == 0) & (p[0] * p[4] * p[6] == 0)
            delete = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & cond
            if delete.any():
                img[delete] = 0
                changed = True
        if not changed:
            return img


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            if ri < rj:
                self.parent[rj] = ri
            else:
                self.parent[ri] = rj


# neighbor offsets already visited in a row-major scan (W, NW, N, NE)
_SCAN_OFFSETS = ((0, -1), (-1, -1), (-1, 0), (-1, 1))


def connected_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """8-connected labeling via union-find; labels dense in 1..count.

    Labels are assigned in row-major order of each component's first pixel,
    matching what a classic two-pass scan produces.
    """
    if connectivity != 8:
        raise ValueError("only 8-connectivity is supported")
    img = np.asarray(mask) > 0
    h, w = img.shape
    labels = np.zeros((h, w), dtype=np.int32)
    rows, cols = np.nonzero(img)
    n = len(rows)
    if n == 0:
        return labels, 0
    index = np.full((h, w), -1, dtype=np.int64)
    index[rows, cols] = np.arange(n)

    uf = _UnionFind(n)
    for dr, dc in _SCAN_OFFSETS:
        rr, cc = rows + dr, cols + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        neigh = index[rr[ok], cc[ok]]
        for i, j in zip(np.arange(n)[ok][neigh >= 0], neigh[neigh >= 0]):
            uf.union(int(i), int(j))

    roots = np.array([uf.find(i) for i in range(n)])
    dense = {}
    packed = np.empty(n, dtype=np.int32)
    for i, root in enumerate(roots):
        if root not in dense:
            dense[root] = len(dense) + 1
        packed[i] = dense[root]
    labels[rows, cols] = packed
    return labels, len(dense)


def _longest_path_from(start: int, adj: list[list[int]]) -> list[int]:
    """BFS from start; path to the farthest node (ties to lowest index)."""
    n = len(adj)
    parent = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    frontier = [start]
    far = start
    while frontier:
        nxt = []
        for u in frontier:
            for v in sorted(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    parent[v] = u
                    nxt.append(v)
        if nxt:
            far = min(nxt)
        frontier = nxt
    path = [far]
    while parent[far] >= 0:
        far = int(parent[far])
        path.append(far)
    path.reverse()
    return path


def components_to_polylines(
    labels: np.ndarray,
    min_size: int = DEFAULT_MIN_COMPONENT_PX,
    simplify_tol: float = DEFAULT_SIMPLIFY_TOL_PX,
) -> LaneGraph:
    """Vectorize labeled skeleton components into boundary polylines.

    Small components are dropped; each remaining one is walked from its
    bottommost endpoint to the farthest reachable pixel (branches lose to the
    longest path) and simplified with Douglas-Peucker.
    """
    lanes = []
    for label in range(1, int(labels.max()) + 1 if labels.size else 1):
        rows, cols = np.nonzero(labels == label)
        if len(rows) < min_size or len(rows) < 2:
            continue
        coords = np.stack([cols + 0.5, rows + 0.5], axis=1)  # pixel centers
        order = np.lexsort((coords[:, 0], coords[:, 1]))
        coords = coords[order]
        adj = _build_adjacency(coords)
        degrees = np.array([len(a) for a in adj])
        endpoints = np.nonzero(degrees <= 1)[0]
        # bottommost endpoint (max y, ties to min x); cycles start anywhere
        pool = endpoints if len(endpoints) else np.arange(len(coords))
        start = pool[np.lexsort((coords[pool, 0], -coords[pool, 1]))[0]]
        path = _longest_path_from(int(start), adj)
        if len(path) < 2:
            continue
        pts = coords[path]
        lanes.append(Polyline(_douglas_peucker(pts, simplify_tol)))
    return LaneGraph(lanes)


def _build_adjacency(coords: np.ndarray) -> list[list[int]]:
    lookup = {(int(x * 2), int(y * 2)): i for i, (x, y) in enumerate(coords)}
    adj: list[list[int]] = [[] for _ in range(len(coords))]
    for i, (x, y) in enumerate(coords):
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                j = lookup.get((int((x + dx) * 2), int((y + dy) * 2)))
                if j is not None:
                    adj[i].append(j)
    return adj


def _point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    L2 = float(ab @ ab)
    if L2 == 0:
        d = pts - a
        return np.sqrt((d * d).sum(axis=1))
    t = np.clip(((pts - a) @ ab) / L2, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = pts - proj
    return np.sqrt((d * d).sum(axis=1))


def _douglas_peucker(pts: np.ndarray, tol: float) -> np.ndarray:
    if len(pts) <= 2:
        return pts
    d = _point_segment_distance(pts[1:-1], pts[0], pts[-1])
    idx = int(np.argmax(d))
    if d[idx] <= tol:
        return np.vstack([pts[0], pts[-1]])
    split = idx + 1
    left = _douglas_peucker(pts[: split + 1], tol)
    right = _douglas_peucker(pts[split:], tol)
    return np.vstack([left[:-1], right])


def baseline_lane_graph(
    prob_map: np.ndarray,
    tau: float,
    min_size: int = DEFAULT_MIN_COMPONENT_PX,
    simplify_tol: float = DEFAULT_SIMPLIFY_TOL_PX,
) -> LaneGraph:
    """Full baseline chain: threshold, skeletonize, label, vectorize."""
    mask = threshold_mask(prob_map, tau)
    skel = skeletonize(mask)
    labels, _count = connected_components(skel)
    return components_to_polylines(labels, min_size=min_size, simplify_tol=simplify_tol)
