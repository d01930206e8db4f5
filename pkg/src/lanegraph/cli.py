"""Command-line entry point: scene generation, extraction, the dense baseline,
evaluation, and the annotation service.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Config precedence: built-in defaults < --config JSON file < explicit flags.
All randomness flows from --seed; outputs are written atomically and are
byte-identical for any --workers value.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import baseline as baseline_mod
from . import extraction, metrics, scenegen
from .geometry import lane_graph_from_obj, lane_graph_to_obj

log = logging.getLogger("lanegraph")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file {p} does not exist")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError(f"config file {p} must hold a JSON object")
    return obj


def _merge(args, cfg: dict, key: str, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in cfg:
        return cfg[key]
    return default


# ------------------------------------------------------------------ generate

PRESETS = ("default", "band", "failure")


def _scene_config(args, cfg: dict, seed: int) -> scenegen.SceneConfig:
    base = scenegen.config_from_obj(cfg["scene"]) if "scene" in cfg else scenegen.SceneConfig()
    preset = _merge(args, cfg, "preset", "default")
    if preset == "band":
        # full-width occlusion band across the middle of the forward range
        extent = base.height_px * base.resolution_m
        base = replace(base, occlusion_bands_m=((0.45 * extent, 0.52 * extent),))
    elif preset != "default" and preset != "failure":
        raise UsageError(f"unknown preset {preset!r} (choose from {PRESETS})")
    return replace(base, seed=seed)


def cmd_generate(args) -> int:
    cfg = _load_config_file(args.config)
    out = Path(_merge(args, cfg, "out", None) or _fail_usage("--out is required"))
    count = int(_merge(args, cfg, "count", 5))
    seed = int(_merge(args, cfg, "seed", 0))
    fmt = _merge(args, cfg, "format", "pgm")
    preset = _merge(args, cfg, "preset", "default")
    out.mkdir(parents=True, exist_ok=True)

    entries = []
    config_echo = None
    for i in range(count):
        scene_seed = seed + i
        if preset == "failure":
            scene = scenegen.generate_failure_scene(seed=scene_seed)
        else:
            scene = scenegen.generate_scene(_scene_config(args, cfg, scene_seed))
        config_echo = scenegen.config_to_obj(scene.config)
        entries.append(scenegen.save_scene(out, f"scene_{i:04d}", scene, fmt))
    manifest = {"format": fmt, "preset": preset, "config": config_echo, "scenes": entries}
    _atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    log.info("wrote %d scenes to %s", count, out)
    return 0


# ------------------------------------------------------------------ extract

def _extraction_params(args, cfg: dict) -> extraction.ExtractionParams:
    crop = int(_merge(args, cfg, "crop", 60))
    return extraction.ExtractionParams(
        k_grid=int(_merge(args, cfg, "k_grid", 24)),
        tau=float(_merge(args, cfg, "tau", 0.5)),
        crop_h=crop,
        crop_w=crop,
        smooth_lambda=float(_merge(args, cfg, "smooth_lambda", 0.05)),
    )


def _extract_one(payload) -> tuple[str, str | None]:
    """Worker: extract one scene and write its prediction file."""
    raster_path, gt_path, scene_id, out_dir, params, render = payload
    try:
        record = scenegen.SceneRecord(scene_id, Path(raster_path), None)
        raster, _ = scenegen.load_scene(record)
        result = extraction.extract_lane_graph(raster, params)
        obj = extraction.extraction_result_to_obj(result)
        _atomic_write_text(Path(out_dir) / f"{scene_id}.pred.json", json.dumps(obj, sort_keys=True))
        if render:
            overlay = scenegen.burn_lanes(raster, result.graph)
            scenegen.write_raster(Path(out_dir) / f"{scene_id}.overlay.pgm", overlay)
        return scene_id, None
    except Exception as exc:  # survives the pool boundary as a message
        return scene_id, f"{type(exc).__name__}: {exc}"


def cmd_extract(args) -> int:
    cfg = _load_config_file(args.config)
    scenes_dir = _merge(args, cfg, "scenes", None) or _fail_usage("--scenes is required")
    out = Path(_merge(args, cfg, "out", None) or _fail_usage("--out is required"))
    workers = int(_merge(args, cfg, "workers", 1))
    params = _extraction_params(args, cfg)
    try:
        _config, records = scenegen.load_scene_dir(scenes_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)

    payloads = [
        (str(r.raster_path), None, r.scene_id, str(out), params, bool(args.render))
        for r in records
    ]
    if workers <= 1:
        results = [_extract_one(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, payloads))
    failures = [(sid, msg) for sid, msg in results if msg]
    for sid, msg in failures:
        log.warning("scene %s skipped: %s", sid, msg)
    if failures:
        return 2
    log.info("extracted %d scenes to %s", len(records), out)
    return 0


# ------------------------------------------------------------------ baseline

def cmd_baseline(args) -> int:
    cfg = _load_config_file(args.config)
    scenes_dir = _merge(args, cfg, "scenes", None) or _fail_usage("--scenes is required")
    out = Path(_merge(args, cfg, "out", None) or _fail_usage("--out is required"))
    taus = _parse_float_list(_merge(args, cfg, "thresholds", None)) or baseline_mod.PAPER_TAUS
    blur = float(_merge(args, cfg, "blur", 1.0))
    noise = float(_merge(args, cfg, "noise", 0.05))
    try:
        config_obj, records = scenegen.load_scene_dir(scenes_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    bands = ()
    if config_obj:
        bands = tuple(tuple(b) for b in config_obj.get("occlusion_bands_m", ()))
    out.mkdir(parents=True, exist_ok=True)

    skipped = []
    for record in records:
        try:
            raster, gt = scenegen.load_scene(record)
        except Exception as exc:
            log.warning("scene %s skipped: %s", record.scene_id, exc)
            skipped.append(record.scene_id)
            continue
        if gt is None:
            log.warning("scene %s skipped: baseline needs ground truth", record.scene_id)
            skipped.append(record.scene_id)
            continue
        prob_map = baseline_mod.dense_detection_map(
            gt,
            raster.spec(),
            blur_sigma=blur,
            noise_level=noise,
            seed=record.seed or 0,
            occlusion_bands_m=bands,
        )
        for tau in taus:
            graph = baseline_mod.baseline_lane_graph(prob_map, tau)
            obj = lane_graph_to_obj(graph)
            obj["tau"] = tau
            _atomic_write_text(
                out / f"{record.scene_id}.tau{tau:g}.pred.json", json.dumps(obj, sort_keys=True)
            )
    if skipped:
        return 2
    log.info("baseline predictions for %d scenes x %d taus in %s", len(records), len(taus), out)
    return 0


# ------------------------------------------------------------------ eval

def _prediction_files(pred_dir: Path, scene_id: str) -> dict[str, Path]:
    """Map method-suffix -> file for one scene ('' for plain predictions)."""
    out = {}
    plain = pred_dir / f"{scene_id}.pred.json"
    if plain.exists():
        out[""] = plain
    for p in sorted(pred_dir.glob(f"{scene_id}.tau*.pred.json")):
        suffix = p.name[len(scene_id) + 1 : -len(".pred.json")]
        out["@" + suffix[3:]] = p
    return out


def cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)
    scenes_dir = _merge(args, cfg, "scenes", None) or _fail_usage("--scenes is required")
    out = Path(_merge(args, cfg, "out", None) or _fail_usage("--out is required"))
    thresholds = tuple(
        _parse_float_list(_merge(args, cfg, "thresholds", None)) or metrics.DEFAULT_THRESHOLDS_CM
    )
    preds = args.pred or cfg.get("pred") or _fail_usage("at least one --pred name=dir is required")
    try:
        _config, records = scenegen.load_scene_dir(scenes_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)

    method_scene_results: dict[str, list] = {}
    for spec_str in preds:
        if "=" not in spec_str:
            raise UsageError(f"--pred takes name=dir, got {spec_str!r}")
        name, _, dir_str = spec_str.partition("=")
        pred_dir = Path(dir_str)
        if not pred_dir.is_dir():
            raise DataError(f"prediction directory {pred_dir} does not exist")
        for record in records:
            if record.gt_path is None:
                raise DataError(f"scene {record.scene_id} has no ground truth")
            raster, gt = scenegen.load_scene(record)
            files = _prediction_files(pred_dir, record.scene_id)
            if not files:
                raise DataError(f"no prediction for scene {record.scene_id} in {pred_dir}")
            for suffix, path in files.items():
                graph = lane_graph_from_obj(json.loads(path.read_text()))
                pr = metrics.precision_recall(
                    graph, gt, thresholds_cm=thresholds, resolution_m=raster.resolution_m
                )
                dev = metrics.topology_deviation(graph, gt)
                method_scene_results.setdefault(name + suffix, []).append((dev, pr))

    reports = {m: metrics.aggregate(rs) for m, rs in sorted(method_scene_results.items())}
    for method, report in reports.items():
        _atomic_write_text(out / f"{method}.report.json", report.to_json())
    table = metrics.render_pr_table(reports, thresholds)
    _atomic_write_text(out / "table.txt", table + "\n")
    metrics.write_topology_cdf_csv(out / "topology_cdf.csv", reports)
    print(table)
    return 0


# ------------------------------------------------------------------ serve

def cmd_serve(args) -> int:
    cfg = _load_config_file(args.config)
    scenes_dir = _merge(args, cfg, "scenes", None) or _fail_usage("--scenes is required")
    port = int(_merge(args, cfg, "port", 8080))
    log_dir = _merge(args, cfg, "log_dir", None)
    ui_dir = _merge(args, cfg, "ui", None)
    params = _extraction_params(args, cfg)

    import uvicorn

    from .service import create_app

    try:
        app = create_app(scenes_dir, params=params, log_dir=log_dir, ui_dir=ui_dir)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    uvicorn.run(app, host=args.host, port=port, log_level="info")
    return 0


# ------------------------------------------------------------------ wiring

def _fail_usage(message: str):
    raise UsageError(message)


def _parse_float_list(value) -> tuple[float, ...] | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lanegraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file (defaults < config < flags)")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--scenes", help="scene directory")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="parallel workers (default 1)")

    p = sub.add_parser("generate", help="write synthetic scenes + manifest")
    common(p)
    p.add_argument("--count", type=int, help="number of scenes (default 5)")
    p.add_argument("--format", choices=("pgm", "raw"), help="raster file format")
    p.add_argument("--preset", choices=PRESETS, help="scene preset")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("extract", help="run lane extraction over a scene directory")
    common(p)
    p.add_argument("--k-grid", dest="k_grid", type=int, help="bin grid size K (default 24)")
    p.add_argument("--tau", type=float, help="evidence threshold (default 0.5)")
    p.add_argument("--crop", type=int, help="crop size in px (default 60)")
    p.add_argument("--lambda", dest="smooth_lambda", type=float, help="refinement smoothness")
    p.add_argument("--render", action="store_true", help="write overlay PGMs")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("baseline", help="dense-detection baseline predictions")
    common(p)
    p.add_argument("--thresholds", help="comma-separated taus (default 0.3,0.5,0.7,0.9)")
    p.add_argument("--blur", type=float, help="probability-map blur sigma (default 1)")
    p.add_argument("--noise", type=float, help="probability-map noise level (default 0.05)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--pred", action="append", help="name=dir of predictions (repeatable)")
    p.add_argument("--thresholds", help="comma-separated distance thresholds in cm")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the annotation service")
    common(p)
    p.add_argument("--port", type=int, help="port (default 8080)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--log-dir", dest="log_dir", help="session log directory")
    p.add_argument("--ui", help="frontend directory to serve at /ui (needs index.html)")
    p.add_argument("--k-grid", dest="k_grid", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--crop", type=int)
    p.add_argument("--lambda", dest="smooth_lambda", type=float)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("LANEGRAPH_LOG", "INFO").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception:
        log.exception("internal error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
