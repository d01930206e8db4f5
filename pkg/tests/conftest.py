import json

import pytest

from lanegraph.scenegen import (
    SceneConfig,
    config_to_obj,
    generate_failure_scene,
    generate_scene,
    save_scene,
)


def write_scene_dir(path, scenes, fmt="pgm", config=None):
    entries = [save_scene(path, f"scene_{i:04d}", s, fmt) for i, s in enumerate(scenes)]
    manifest = {
        "format": fmt,
        "config": config_to_obj(config) if config else None,
        "scenes": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


@pytest.fixture(scope="session")
def three_lane_dir(tmp_path_factory):
    """Three noise-free 3-lane scenes."""
    path = tmp_path_factory.mktemp("scenes3")
    cfg = SceneConfig(lane_count_range=(3, 3), dropout_rate=0.0, noise_rate=0.0)
    scenes = [generate_scene(SceneConfig(lane_count_range=(3, 3), dropout_rate=0.0, noise_rate=0.0, seed=s)) for s in (1, 2, 3)]
    return write_scene_dir(path, scenes, config=cfg)


@pytest.fixture(scope="session")
def failure_scene_dir(tmp_path_factory):
    """One constructed topology-failure scene (missed + hallucinated lane)."""
    path = tmp_path_factory.mktemp("failure")
    return write_scene_dir(path, [generate_failure_scene(seed=3)])
