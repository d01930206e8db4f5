"""Synthetic BEV scene generation: dashed lane-boundary markings rendered into
an intensity raster, with the exact boundary polylines as ground truth.

Scenes mimic a top-down highway sweep: the vehicle sits at the bottom center,
boundaries run bottom-to-top, each pixel covers a fixed metric footprint
(5 cm by default on a 960x960 grid, i.e. 48 m ahead and 24 m to each side).
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import LaneGraph, PointSet, Polyline, densify_params

__all__ = [
    "BevRaster",
    "RasterSpec",
    "SceneConfig",
    "Scene",
    "SceneRecord",
    "generate_scene",
    "generate_failure_scene",
    "rasterize_points",
    "crop_window",
    "evidence_points",
    "burn_lanes",
    "write_raster",
    "read_raster",
    "config_to_obj",
    "config_from_obj",
    "save_scene",
    "load_scene_dir",
    "load_scene",
]

DEFAULT_RESOLUTION_M = 0.05
MARKING_INTENSITY = (0.7, 1.0)
NOISE_INTENSITY = (0.2, 0.8)
MARKING_JITTER_PX = 0.15
EDGE_MARGIN_PX = 40.0
GT_VERTEX_COUNT = 31


@dataclass(frozen=True)
class RasterSpec:
    """Grid geometry: pixel dimensions plus meters-per-pixel resolution."""

    height_px: int = 960
    width_px: int = 960
    resolution_m: float = DEFAULT_RESOLUTION_M

    def __post_init__(self):
        if self.height_px <= 0 or self.width_px <= 0:
            raise ValueError("raster dimensions must be positive")
        if self.resolution_m <= 0:
            raise ValueError("resolution must be positive")

    @property
    def area_m2(self) -> float:
        return self.height_px * self.width_px * self.resolution_m**2


@dataclass
class BevRaster:
    """H x W intensity grid in [0, 1] at a fixed metric resolution."""

    intensity: np.ndarray
    resolution_m: float = DEFAULT_RESOLUTION_M

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.intensity.ndim != 2 or 0 in self.intensity.shape:
            raise ValueError(f"intensity must be a nonempty 2D grid, got {self.intensity.shape}")
        if self.resolution_m <= 0:
            raise ValueError("resolution must be positive")
        lo, hi = float(self.intensity.min()), float(self.intensity.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities must lie in [0, 1], got [{lo}, {hi}]")

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    def spec(self) -> RasterSpec:
        return RasterSpec(self.height, self.width, self.resolution_m)


@dataclass
class SceneConfig:
    lane_count_range: tuple[int, int] = (2, 6)
    lane_spacing_m: float = 3.7
    spacing_jitter_m: float = 0.3
    curvature_m: float = 1.2            # max lateral sweep of the boundary shape
    dash_pattern_m: tuple[float, float] = (3.0, 6.0)   # (mark, gap)
    dropout_rate: float = 0.25
    noise_rate: float = 0.2             # spurious points per square meter
    seed: int = 0
    height_px: int = 960
    width_px: int = 960
    resolution_m: float = DEFAULT_RESOLUTION_M
    marking_step_px: float = 0.75       # sample spacing along the boundary
    occlusion_bands_m: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        lo, hi = self.lane_count_range
        if lo > hi or lo < 0:
            raise ValueError(f"empty lane count range {self.lane_count_range}")
        for name in ("dropout_rate",):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.noise_rate < 0:
            raise ValueError("noise_rate must be nonnegative")
        if min(self.dash_pattern_m) < 0 or self.dash_pattern_m[0] == 0:
            raise ValueError(f"bad dash pattern {self.dash_pattern_m}")
        if self.marking_step_px <= 0:
            raise ValueError("marking_step_px must be positive")

    def raster_spec(self) -> RasterSpec:
        return RasterSpec(self.height_px, self.width_px, self.resolution_m)


@dataclass
class Scene:
    raster: BevRaster
    ground_truth: LaneGraph
    config: SceneConfig
    seed: int


# ------------------------------------------------------------------ generation

def _lane_vertices(spec: RasterSpec, base_x: float, sweep: np.ndarray, ys: np.ndarray) -> Polyline:
    return Polyline(np.stack([base_x + sweep, ys], axis=1))


def _sample_lane_shapes(rng: np.random.Generator, config: SceneConfig, n_lanes: int):
    """Shared lateral sweep plus jittered per-lane offsets; bottom-first vertices."""
    spec = config.raster_spec()
    px_per_m = 1.0 / spec.resolution_m
    ys = np.linspace(spec.height_px - 0.5, 0.5, GT_VERTEX_COUNT)
    u = np.linspace(0.0, 1.0, GT_VERTEX_COUNT)
    coef = rng.uniform(-1.0, 1.0, 3)
    shape = coef[0] * u + coef[1] * u**2 + coef[2] * u**3
    peak = np.abs(shape).max()
    amplitude = config.curvature_m * px_per_m * rng.uniform(0.25, 1.0)
    sweep = shape / peak * amplitude if peak > 1e-9 else np.zeros_like(shape)

    jitter = rng.uniform(-config.spacing_jitter_m, config.spacing_jitter_m, max(n_lanes - 1, 0))
    spacing = (config.lane_spacing_m + jitter) * px_per_m
    offsets = np.concatenate([[0.0], np.cumsum(spacing)])

    lo = EDGE_MARGIN_PX - min(sweep.min(), 0.0)
    hi = spec.width_px - EDGE_MARGIN_PX - max(sweep.max(), 0.0) - (offsets[-1] if n_lanes else 0.0)
    if hi < lo:
        raise ValueError(
            f"{n_lanes} lanes at {config.lane_spacing_m} m spacing do not fit a "
            f"{spec.width_px * spec.resolution_m:.1f} m wide raster"
        )
    base = rng.uniform(lo, hi)
    return [_lane_vertices(spec, base + off, sweep, ys) for off in offsets], ys


def _dash_points(
    rng: np.random.Generator,
    lane: Polyline,
    config: SceneConfig,
    y_window_px: tuple[float, float] | None = None,
    solid: bool = False,
):
    """Marking samples along one boundary polyline, dash pattern in arc length."""
    px_per_m = 1.0 / config.resolution_m
    mark = config.dash_pattern_m[0] * px_per_m
    gap = config.dash_pattern_m[1] * px_per_m
    period = mark + gap
    seg = np.diff(lane.vertices, axis=0)
    seglen = np.sqrt(seg[:, 0] ** 2 + seg[:, 1] ** 2)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    phase = rng.uniform(0.0, period)
    s = np.arange(0.0, cum[-1], config.marking_step_px)
    if not solid:
        s = s[(s + phase) % period < mark]
    x = np.interp(s, cum, lane.vertices[:, 0])
    y = np.interp(s, cum, lane.vertices[:, 1])
    pts = np.stack([x, y], axis=1)
    pts = pts + rng.uniform(-MARKING_JITTER_PX, MARKING_JITTER_PX, pts.shape)
    inten = rng.uniform(*MARKING_INTENSITY, len(pts))
    if y_window_px is not None:
        keep = (pts[:, 1] >= y_window_px[0]) & (pts[:, 1] < y_window_px[1])
        pts, inten = pts[keep], inten[keep]
    return pts, inten


def _apply_point_filters(rng, config: SceneConfig, pts: np.ndarray, inten: np.ndarray):
    # dropout uniforms are drawn unconditionally so configs differing only in
    # the rate see identical marking positions
    u = rng.random(len(pts))
    keep = u >= config.dropout_rate
    for lo_m, hi_m in config.occlusion_bands_m:
        y_m = pts[:, 1] * config.resolution_m
        keep &= ~((y_m >= lo_m) & (y_m < hi_m))
    return pts[keep], inten[keep]


def _noise_points(rng, config: SceneConfig):
    spec = config.raster_spec()
    count = int(rng.poisson(config.noise_rate * spec.area_m2))
    pts = rng.uniform([0.0, 0.0], [spec.width_px, spec.height_px], (count, 2))
    inten = rng.uniform(*NOISE_INTENSITY, count)
    return pts, inten


def _assemble_scene(config: SceneConfig, lanes, marking_chunks, rng) -> Scene:
    spec = config.raster_spec()
    pts = np.concatenate([c[0] for c in marking_chunks], axis=0)
    inten = np.concatenate([c[1] for c in marking_chunks], axis=0)
    pts, inten = _apply_point_filters(rng, config, pts, inten)
    noise_pts, noise_inten = _noise_points(rng, config)
    all_pts = np.concatenate([pts, noise_pts], axis=0)
    all_inten = np.concatenate([inten, noise_inten], axis=0)
    metric = np.column_stack([all_pts * spec.resolution_m, all_inten])
    raster, _dropped = rasterize_points(metric, spec)
    return Scene(raster=raster, ground_truth=LaneGraph(lanes), config=config, seed=config.seed)


def generate_scene(config: SceneConfig) -> Scene:
    """Deterministic synthetic scene for a config: same seed, same bytes."""
    rng = np.random.default_rng(config.seed)
    lo, hi = config.lane_count_range
    n_lanes = int(rng.integers(lo, hi + 1))
    lanes, _ys = _sample_lane_shapes(rng, config, n_lanes)
    chunks = [_dash_points(rng, lane, config) for lane in lanes]
    if not chunks:
        chunks = [(np.zeros((0, 2)), np.zeros(0))]
    return _assemble_scene(config, lanes, chunks, rng)


def generate_failure_scene(seed: int = 0, config: SceneConfig | None = None) -> Scene:
    """A topology-failure scene for annotator-correction workflows.

    Ground truth has 4 lanes, but the second lane's markings only exist in the
    upper half (so the bottom-quartile region proposer misses it) and a solid
    spurious streak runs 2.5 m right of the last lane (so the tracer
    hallucinates one). Automatic extraction therefore has one missed and one
    hallucinated lane; one region click plus one delete fixes it.
    """
    if config is None:
        config = SceneConfig(seed=seed, dropout_rate=0.15, noise_rate=0.1)
    else:
        config = replace(config, seed=seed)
    config = replace(config, lane_count_range=(4, 4))
    rng = np.random.default_rng(config.seed)
    n_lanes = int(rng.integers(4, 5))
    lanes, ys = _sample_lane_shapes(rng, config, n_lanes)
    h = config.height_px
    chunks = []
    for i, lane in enumerate(lanes):
        window = (0.15 * h, 0.55 * h) if i == 1 else None
        chunks.append(_dash_points(rng, lane, config, y_window_px=window))
    offset = 2.5 / config.resolution_m
    if lanes[-1].vertices[:, 0].max() + offset < config.width_px - 10.0:
        streak = Polyline(lanes[-1].vertices + np.array([offset, 0.0]))
    else:
        streak = Polyline(lanes[0].vertices - np.array([offset, 0.0]))
    chunks.append(_dash_points(rng, streak, config, solid=True))
    return _assemble_scene(config, lanes, chunks, rng)


# ------------------------------------------------------------------ raster ops

def rasterize_points(points, spec: RasterSpec) -> tuple[BevRaster, int]:
    """Accumulate metric (x, y, intensity) points into pixels by max-combine.

    Out-of-bounds points are dropped; their count is returned alongside.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    grid = np.zeros((spec.height_px, spec.width_px))
    if len(pts) == 0:
        return BevRaster(grid, spec.resolution_m), 0
    col = np.floor(pts[:, 0] / spec.resolution_m).astype(np.int64)
    row = np.floor(pts[:, 1] / spec.resolution_m).astype(np.int64)
    inside = (row >= 0) & (row < spec.height_px) & (col >= 0) & (col < spec.width_px)
    np.maximum.at(grid, (row[inside], col[inside]), np.clip(pts[inside, 2], 0.0, 1.0))
    return BevRaster(grid, spec.resolution_m), int((~inside).sum())


def crop_window(r: BevRaster, center, h_c: int, w_c: int) -> tuple[np.ndarray, bool]:
    """h_c x w_c window around a continuous center point, zero-padded at edges.

    The validity flag is False when the center itself lies outside the raster.
    """
    if h_c <= 0 or w_c <= 0:
        raise ValueError("crop dimensions must be positive")
    cx, cy = float(center[0]), float(center[1])
    valid = 0.0 <= cx < r.width and 0.0 <= cy < r.height
    top = int(np.floor(cy)) - h_c // 2
    left = int(np.floor(cx)) - w_c // 2
    window = np.zeros((h_c, w_c))
    r0, r1 = max(top, 0), min(top + h_c, r.height)
    c0, c1 = max(left, 0), min(left + w_c, r.width)
    if r0 < r1 and c0 < c1:
        window[r0 - top : r1 - top, c0 - left : c1 - left] = r.intensity[r0:r1, c0:c1]
    return window, valid


def evidence_points(r: BevRaster, tau: float) -> PointSet | None:
    """Centers of pixels with intensity >= tau, or None when nothing passes."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    rows, cols = np.nonzero(r.intensity >= tau)
    if len(rows) == 0:
        return None
    return PointSet(np.stack([cols + 0.5, rows + 0.5], axis=1))


def burn_lanes(r: BevRaster, g: LaneGraph, value: float = 1.0) -> BevRaster:
    """Copy of the raster with lane polylines burned in (for overlay renders)."""
    grid = r.intensity.copy()
    for lane in g.lanes:
        dp = densify_params(lane, step=0.5)
        col = np.clip(np.floor(dp.points[:, 0]).astype(int), 0, r.width - 1)
        row = np.clip(np.floor(dp.points[:, 1]).astype(int), 0, r.height - 1)
        grid[row, col] = value
    return BevRaster(grid, r.resolution_m)


# ------------------------------------------------------------------ raster files

_PGM_MAXVAL = 65535


def raster_to_pgm_bytes(r: BevRaster) -> bytes:
    header = f"P5\n# resolution_m {r.resolution_m!r}\n{r.width} {r.height}\n{_PGM_MAXVAL}\n"
    return header.encode("ascii") + np.round(r.intensity * _PGM_MAXVAL).astype(">u2").tobytes()


def write_raster(path: str | Path, r: BevRaster) -> None:
    """Write a raster as 16-bit PGM (.pgm) or raw float32 + JSON header (.raw)."""
    path = Path(path)
    if path.suffix == ".pgm":
        path.write_bytes(raster_to_pgm_bytes(r))
    elif path.suffix == ".raw":
        path.write_bytes(r.intensity.astype("<f4").tobytes())
        sidecar = {"height": r.height, "width": r.width, "resolution": r.resolution_m}
        Path(str(path) + ".json").write_text(json.dumps(sidecar))
    else:
        raise ValueError(f"unsupported raster extension {path.suffix!r} (use .pgm or .raw)")


def read_raster(path: str | Path) -> BevRaster:
    path = Path(path)
    if path.suffix == ".pgm":
        return _read_pgm(path)
    if path.suffix == ".raw":
        sidecar = json.loads(Path(str(path) + ".json").read_text())
        grid = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(
            sidecar["height"], sidecar["width"]
        )
        return BevRaster(grid.astype(np.float64), float(sidecar["resolution"]))
    raise ValueError(f"unsupported raster extension {path.suffix!r} (use .pgm or .raw)")


def _read_pgm(path: Path) -> BevRaster:
    blob = path.read_bytes()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM file")
    resolution = DEFAULT_RESOLUTION_M
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        m = re.match(rb"\s*(#[^\n]*\n|\S+)", blob[pos:])
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tok = m.group(1)
        pos += m.end()
        if tok.startswith(b"#"):
            fields = tok[1:].split()
            if len(fields) == 2 and fields[0] == b"resolution_m":
                resolution = float(fields[1])
            continue
        tokens.append(int(tok))
    width, height, maxval = tokens
    pos += 1  # single whitespace byte after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    grid = np.frombuffer(blob, dtype=dtype, count=height * width, offset=pos)
    return BevRaster(grid.reshape(height, width) / maxval, resolution)


# ------------------------------------------------------------------ scene dirs

def config_to_obj(config: SceneConfig) -> dict:
    obj = asdict(config)
    obj["lane_count_range"] = list(config.lane_count_range)
    obj["dash_pattern_m"] = list(config.dash_pattern_m)
    obj["occlusion_bands_m"] = [list(b) for b in config.occlusion_bands_m]
    return obj


def config_from_obj(obj: dict) -> SceneConfig:
    kwargs = dict(obj)
    kwargs["lane_count_range"] = tuple(obj.get("lane_count_range", (2, 6)))
    kwargs["dash_pattern_m"] = tuple(obj.get("dash_pattern_m", (3.0, 6.0)))
    kwargs["occlusion_bands_m"] = tuple(tuple(b) for b in obj.get("occlusion_bands_m", ()))
    return SceneConfig(**kwargs)


@dataclass
class SceneRecord:
    """One entry of a scene directory: raster file plus optional ground truth."""

    scene_id: str
    raster_path: Path
    gt_path: Path | None
    seed: int | None = None


def save_scene(outdir: str | Path, scene_id: str, scene: Scene, fmt: str = "pgm") -> dict:
    """Write one scene's raster + ground-truth files; returns its manifest entry."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if fmt not in ("pgm", "raw"):
        raise ValueError(f"unsupported scene format {fmt!r}")
    raster_name = f"{scene_id}.{fmt}"
    gt_name = f"{scene_id}.gt.json"
    write_raster(outdir / raster_name, scene.raster)
    from .geometry import lane_graph_to_json

    (outdir / gt_name).write_text(lane_graph_to_json(scene.ground_truth))
    return {"id": scene_id, "raster": raster_name, "ground_truth": gt_name, "seed": scene.seed}


def load_scene_dir(path: str | Path) -> tuple[dict | None, list[SceneRecord]]:
    """Read a scene directory via its manifest (or by scanning raster files)."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"scene directory {path} does not exist")
    manifest_path = path / "manifest.json"
    records: list[SceneRecord] = []
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        for entry in manifest["scenes"]:
            gt = entry.get("ground_truth")
            gt_path = path / gt if gt else None
            if gt_path is not None and not gt_path.exists():
                gt_path = None
            records.append(
                SceneRecord(entry["id"], path / entry["raster"], gt_path, entry.get("seed"))
            )
        return manifest.get("config"), records
    for raster_path in sorted(list(path.glob("*.pgm")) + list(path.glob("*.raw"))):
        scene_id = raster_path.stem
        gt_path = path / f"{scene_id}.gt.json"
        records.append(SceneRecord(scene_id, raster_path, gt_path if gt_path.exists() else None))
    return None, records


def load_scene(record: SceneRecord):
    """(raster, ground truth or None) for one scene record."""
    from .geometry import lane_graph_from_json

    raster = read_raster(record.raster_path)
    gt = None
    if record.gt_path is not None:
        gt = lane_graph_from_json(record.gt_path.read_text())
    return raster, gt
