"""Test configuration and fixtures."""
import filecmp
import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
import yaml
from PIL import Image

from anchorsum.config import load_config
from anchorsum.ingest import VideoSource, extract_frames

DATASET_DESCRIPTION = "synthetic cooking steps"


def phase_color(phase: int):
    return ((37 * phase + 11) % 256, (91 * phase + 50) % 256, (173 * phase + 100) % 256)


def write_phase_stills(directory: Path, phases: int = 20, per_phase: int = 30, size: int = 32) -> Path:
    """A still directory of ``phases`` runs of identical images, one colour per phase."""
    directory.mkdir(parents=True, exist_ok=True)
    index = 0
    for phase in range(phases):
        img = Image.new("RGB", (size, size), phase_color(phase))
        for _ in range(per_phase):
            img.save(directory / f"still_{index:05d}.png")
            index += 1
    return directory


def write_phase_fixtures(stills_dir: Path, out_dir: Path, per_phase: int = 30) -> dict:
    """
    Phase-keyed mock fixtures for a still directory.

    Each phase gets its own caption and label, and its frames embed in the
    joint space exactly as their label, so every retained frame anchors.
    """
    with tempfile.TemporaryDirectory() as scratch:
        frames = extract_frames(VideoSource.from_path(str(stills_dir)), Path(scratch))
    hashes = {}
    for frame in frames:
        hashes.setdefault(frame.index // per_phase, frame.sha256)

    captions = {sha: f"A cook performs step {phase} of the recipe." for phase, sha in hashes.items()}
    labels = {f"A cook performs step {phase} of the recipe.": f"recipe step {phase}" for phase in hashes}
    aliases = {sha: f"recipe step {phase}" for phase, sha in hashes.items()}

    out_dir.mkdir(parents=True, exist_ok=True)
    chat_path = out_dir / "chat_fixtures.yaml"
    chat_path.write_text(yaml.safe_dump({
        "responses": {"frame-describe": captions, "label-generate": labels},
        "defaults": {
            "label-validate": "1",
            "judge-rubric": json.dumps({"factual_accuracy": 5, "detail": 4, "specificity": 4, "completeness": 3, "repetition": 4}),
        },
    }))
    joint_path = out_dir / "joint_fixtures.yaml"
    joint_path.write_text(yaml.safe_dump({"aliases": aliases}))
    return {
        "backends.chat.fixtures": str(chat_path),
        "backends.joint_embed.fixtures": str(joint_path),
    }


def make_config(**overrides):
    """Mock-backend configuration, isolated from the environment."""
    values = {
        "semantics.dataset_description": DATASET_DESCRIPTION,
        "summarizer.tile_size": 64,
        "retry.backoff_s": 0.0,
    }
    values.update(overrides)
    return load_config(overrides=values, environ={})


def run_dirs_identical(a: Path, b: Path, ignore=("manifest.json",)) -> bool:
    """Recursively compare two run directories byte for byte."""
    comparison = filecmp.dircmp(a, b, ignore=list(ignore))
    if comparison.left_only or comparison.right_only or comparison.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, comparison.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(run_dirs_identical(a / d, b / d, ignore) for d in comparison.common_dirs)


@pytest.fixture
def mock_config():
    """Default configuration with mock backends."""
    return make_config()


@pytest.fixture(scope="session")
def phase_video(tmp_path_factory):
    """600 stills in 20 visually distinct phases plus matching mock fixtures."""
    root = tmp_path_factory.mktemp("phase_video")
    stills = write_phase_stills(root / "stills")
    overrides = write_phase_fixtures(stills, root / "fixtures")
    return stills, overrides


@pytest.fixture(scope="session")
def small_phase_video(tmp_path_factory):
    """40 stills in 8 phases, for quick end-to-end runs."""
    root = tmp_path_factory.mktemp("small_phase_video")
    stills = write_phase_stills(root / "stills", phases=8, per_phase=5)
    overrides = write_phase_fixtures(stills, root / "fixtures", per_phase=5)
    return stills, overrides


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
