"""Simple end-to-end tests for anchorsum commands."""
import subprocess
import sys

import yaml

from anchorsum.cli import cli_overrides, create_parser, main
from anchorsum.handlers.run import EXIT_USAGE

from tests.conftest import DATASET_DESCRIPTION


def write_user_config(tmp_path, fixtures):
    """User YAML pointing the mock backends at phase fixtures."""
    path = tmp_path / "user.yaml"
    path.write_text(yaml.safe_dump({
        "semantics": {"dataset_description": DATASET_DESCRIPTION},
        "summarizer": {"tile_size": 64},
        "retry": {"backoff_s": 0.0},
        "backends": {
            "chat": {"fixtures": fixtures["backends.chat.fixtures"]},
            "joint_embed": {"fixtures": fixtures["backends.joint_embed.fixtures"]},
        },
    }))
    return str(path)


def test_cli_help():
    """Test CLI help command."""
    result = subprocess.run(
        [sys.executable, "-m", "anchorsum.cli", "--help"],
        capture_output=True,
        text=True
    )
    assert result.returncode == 0
    assert "anchorsum" in result.stdout


def test_cli_version():
    """Test CLI version command."""
    result = subprocess.run(
        [sys.executable, "-m", "anchorsum.cli", "--version"],
        capture_output=True,
        text=True
    )
    assert result.returncode == 0
    assert "0.1.0" in result.stdout


def test_run_command(small_phase_video, tmp_path):
    """Test that run writes the summary and scores."""
    stills, fixtures = small_phase_video
    run_dir = tmp_path / "run"

    result = subprocess.run(
        [sys.executable, "-m", "anchorsum.cli", "run",
         "--config", write_user_config(tmp_path, fixtures),
         "--video", str(stills),
         "--run-dir", str(run_dir)],
        capture_output=True,
        text=True
    )

    assert result.returncode == 0, result.stderr
    assert (run_dir / "summary.txt").read_text().strip()
    assert (run_dir / "scores.csv").exists()
    assert (run_dir / "manifest.json").exists()


def test_stage_commands_in_order(small_phase_video, tmp_path):
    """Test running the stages one by one."""
    stills, fixtures = small_phase_video
    config = write_user_config(tmp_path, fixtures)
    run_dir = str(tmp_path / "run")

    assert main(["ingest", "--config", config, "--video", str(stills), "--run-dir", run_dir]) == 0
    for stage in ("stage1", "stage2", "stage3", "score"):
        assert main([stage, "--config", config, "--run-dir", run_dir]) == 0
    assert (tmp_path / "run" / "summary_tree.json").exists()


def test_stage_out_of_order(tmp_path):
    """Test that a stage without its inputs fails with exit code 1."""
    assert main(["stage2", "--run-dir", str(tmp_path / "run"), "--dataset-description", "cooking"]) == 1


def test_run_without_video(tmp_path):
    """Test that run needs a video for a fresh run directory."""
    assert main(["run", "--run-dir", str(tmp_path / "run")]) == EXIT_USAGE


def test_ablate_without_settings(tmp_path):
    """Test that ablate without settings is a usage error."""
    assert main(["ablate", "--video", "clip.mp4", "--run-dir", str(tmp_path / "ablation")]) == EXIT_USAGE


def test_ablate_unknown_setting(tmp_path):
    """Test that an unknown ablation setting is a usage error."""
    code = main(["ablate", "--video", "clip.mp4", "--setting", "stage9:1", "--run-dir", str(tmp_path / "ablation")])
    assert code == EXIT_USAGE


def test_config_error(tmp_path):
    """Test that an invalid user config exits with code 1."""
    user = tmp_path / "bad.yaml"
    user.write_text("sampler:\n  delta: 0\n")
    assert main(["run", "--config", str(user), "--video", "clip.mp4", "--run-dir", str(tmp_path / "run")]) == 1


def test_cli_overrides_from_flags():
    """Test that mode flags and eval options become dotted overrides."""
    args = create_parser().parse_args([
        "eval", "--skip-stage2", "--dataset-description", "surgery",
        "--reference", "a.txt", "--reference", "b.txt", "--judge",
    ])
    assert cli_overrides(args) == {
        "pipeline.skip_stage2": True,
        "semantics.dataset_description": "surgery",
        "eval.references": ["a.txt", "b.txt"],
        "eval.judge": True,
    }
