"""Annotator-in-the-loop HTTP service.

Sessions hold a working lane graph per scene. The annotator either runs
automatic extraction (zero clicks), traces a new lane from a coarse starting
bin (one click, even when the bin turns out to hold no evidence), or deletes a
lane by index (one click). Scores compare the working graph against withheld
ground truth. Edit logs are append-only JSON lines and replay
deterministically.
"""

from __future__ import annotations

import base64
import itertools
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .extraction import (
    ExtractionParams,
    RegionBin,
    extract_lane_graph,
    extraction_result_to_obj,
    trace_and_refine,
)
from .geometry import LaneGraph, lane_graph_to_obj
from .metrics import (
    DEFAULT_THRESHOLDS_CM,
    lane_matching_errors,
    precision_recall,
    topology_deviation,
)
from .scenegen import BevRaster, load_scene, load_scene_dir, raster_to_pgm_bytes

__all__ = ["create_app", "replay_actions"]


@dataclass
class LoadedScene:
    scene_id: str
    raster: BevRaster
    ground_truth: LaneGraph | None


@dataclass
class Session:
    session_id: str
    scene_id: str
    graph: LaneGraph = field(default_factory=LaneGraph)
    extracted: bool = False
    clicks: int = 0
    actions: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _error(status: int, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail=message)


def replay_actions(scene: LoadedScene, actions: list[dict], params: ExtractionParams) -> LaneGraph:
    """Re-run an edit log on a fresh graph; must reproduce the session's state."""
    graph = LaneGraph()
    for entry in actions:
        action = entry["action"]
        payload = entry.get("payload", {})
        if action == "auto-extract":
            graph = extract_lane_graph(scene.raster, params).graph
        elif action == "add-trace":
            if not payload.get("ok", True):
                continue
            row, col = payload["bin"]
            b = RegionBin(row, col, params.k_grid)
            lane, _prov = trace_and_refine(scene.raster, b, params)
            graph = LaneGraph(graph.lanes + [lane])
        elif action == "delete-lane":
            lanes = list(graph.lanes)
            del lanes[payload["index"]]
            graph = LaneGraph(lanes)
        else:
            raise ValueError(f"unknown action {action!r}")
    return graph


def create_app(
    scenes_dir: str | Path,
    params: ExtractionParams = ExtractionParams(),
    log_dir: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    _config, records = load_scene_dir(scenes_dir)
    scenes: dict[str, LoadedScene] = {}
    for record in records:
        raster, gt = load_scene(record)
        scenes[record.scene_id] = LoadedScene(record.scene_id, raster, gt)

    log_path = Path(log_dir) if log_dir else None
    if log_path:
        log_path.mkdir(parents=True, exist_ok=True)

    sessions: dict[str, Session] = {}
    session_counter = itertools.count(1)
    registry_lock = threading.Lock()

    app = FastAPI(title="lanegraph annotation service")

    @app.exception_handler(HTTPException)
    async def _http_error(_request: Request, exc: HTTPException):
        return JSONResponse(
            status_code=exc.status_code, content={"error": str(exc.detail), "code": exc.status_code}
        )

    def _get_scene(scene_id: str) -> LoadedScene:
        if scene_id not in scenes:
            raise _error(404, f"unknown scene {scene_id!r}")
        return scenes[scene_id]

    def _get_session(session_id: str) -> Session:
        if session_id not in sessions:
            raise _error(404, f"unknown session {session_id!r}")
        return sessions[session_id]

    def _record(session: Session, action: str, payload: dict) -> None:
        entry = {
            "ts": time.time(),
            "session": session.session_id,
            "action": action,
            "payload": payload,
        }
        session.actions.append(entry)
        if log_path:
            with open(log_path / f"{session.session_id}.jsonl", "a") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    def _session_state(session: Session) -> dict:
        return {
            "session": session.session_id,
            "scene": session.scene_id,
            "clicks": session.clicks,
            "extracted": session.extracted,
            "lanes": lane_graph_to_obj(session.graph)["lanes"],
        }

    # ------------------------------------------------------------ scenes

    @app.get("/health")
    def health():
        return {"status": "ok", "scenes": len(scenes)}

    @app.get("/scenes")
    def list_scenes():
        return {"scenes": sorted(scenes)}

    @app.get("/scenes/{scene_id}")
    def get_scene(scene_id: str, reveal: bool = False):
        scene = _get_scene(scene_id)
        payload = {
            "id": scene.scene_id,
            "height": scene.raster.height,
            "width": scene.raster.width,
            "resolution": scene.raster.resolution_m,
            "k_grid": params.k_grid,
            "raster_pgm_base64": base64.b64encode(raster_to_pgm_bytes(scene.raster)).decode(),
        }
        if reveal and scene.ground_truth is not None:
            payload["ground_truth"] = lane_graph_to_obj(scene.ground_truth)["lanes"]
        return payload

    # ------------------------------------------------------------ sessions

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        scene_id = body.get("scene_id")
        if not scene_id:
            raise _error(422, "body must carry scene_id")
        _get_scene(scene_id)
        with registry_lock:
            session = Session(session_id=f"s{next(session_counter):04d}", scene_id=scene_id)
            sessions[session.session_id] = session
        return _session_state(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_state(_get_session(session_id))

    @app.get("/sessions/{session_id}/log")
    def get_log(session_id: str):
        session = _get_session(session_id)
        return {"actions": session.actions}

    @app.post("/sessions/{session_id}/extract")
    def run_extract(session_id: str):
        session = _get_session(session_id)
        scene = _get_scene(session.scene_id)
        with session.lock:
            if session.extracted:
                raise _error(409, "automatic extraction already ran for this session")
            result = extract_lane_graph(scene.raster, params)
            session.graph = result.graph
            session.extracted = True
            _record(session, "auto-extract", {})
            state = _session_state(session)
            state["provenance"] = extraction_result_to_obj(result)["provenance"]
            return state

    @app.post("/sessions/{session_id}/trace")
    def run_trace(session_id: str, body: dict):
        session = _get_session(session_id)
        scene = _get_scene(session.scene_id)
        bin_rc = body.get("bin")
        if not isinstance(bin_rc, (list, tuple)) or len(bin_rc) != 2:
            raise _error(422, "body must carry bin: [row, col]")
        row, col = int(bin_rc[0]), int(bin_rc[1])
        if not (0 <= row < params.k_grid and 0 <= col < params.k_grid):
            raise _error(422, f"bin ({row}, {col}) outside the {params.k_grid}x{params.k_grid} grid")
        with session.lock:
            b = RegionBin(row, col, params.k_grid)
            try:
                lane, _prov = trace_and_refine(scene.raster, b, params)
            except ValueError:
                # an unsuccessful click still costs the annotator a click
                session.clicks += 1
                _record(session, "add-trace", {"bin": [row, col], "ok": False})
                raise _error(409, f"bin ({row}, {col}) contains no evidence") from None
            session.graph = LaneGraph(session.graph.lanes + [lane])
            session.clicks += 1
            _record(session, "add-trace", {"bin": [row, col], "ok": True})
            return _session_state(session)

    @app.delete("/sessions/{session_id}/lanes/{index}")
    def delete_lane(session_id: str, index: int):
        session = _get_session(session_id)
        with session.lock:
            if not 0 <= index < len(session.graph):
                raise _error(404, f"lane index {index} out of range")
            lanes = list(session.graph.lanes)
            del lanes[index]
            session.graph = LaneGraph(lanes)
            session.clicks += 1
            _record(session, "delete-lane", {"index": index})
            return _session_state(session)

    @app.get("/sessions/{session_id}/score")
    def score(session_id: str):
        session = _get_session(session_id)
        scene = _get_scene(session.scene_id)
        if scene.ground_truth is None:
            raise _error(409, f"scene {scene.scene_id} has no ground truth to score against")
        pr = precision_recall(
            session.graph,
            scene.ground_truth,
            thresholds_cm=DEFAULT_THRESHOLDS_CM,
            resolution_m=scene.raster.resolution_m,
        )
        match = lane_matching_errors(session.graph, scene.ground_truth)
        return {
            "topology_deviation": topology_deviation(session.graph, scene.ground_truth),
            "precision": {str(t): pr.precision[t] for t in DEFAULT_THRESHOLDS_CM},
            "recall": {str(t): pr.recall[t] for t in DEFAULT_THRESHOLDS_CM},
            "clicks": session.clicks,
            "lane_errors": {
                "missed_gt": match.missed_gt,
                "hallucinated_pred": match.hallucinated_pred,
                "total": match.total_errors,
            },
        }

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        ui_path = Path(ui_dir)
        if not (ui_path / "index.html").exists():
            raise FileNotFoundError(f"{ui_path} has no index.html (build the frontend first)")
        app.mount("/ui", StaticFiles(directory=ui_path, html=True), name="ui")

    app.state.scenes = scenes
    app.state.sessions = sessions
    app.state.params = params
    return app
