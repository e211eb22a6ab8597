"""File manager for run directories, shipped configs and prompt templates."""

import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional


@dataclass(frozen=True)
class ArtifactSpec:
    """An artifact written by one pipeline stage."""

    name: str
    stage: str
    relative_path: str


class FileManager:
    """Manages the run directory layout and the package's shipped resources."""

    # Artifacts per stage; a stage is reusable only if all of its artifacts exist.
    ARTIFACTS: Dict[str, ArtifactSpec] = {
        "frames": ArtifactSpec("frames", "ingest", "frames.json"),
        "transcript": ArtifactSpec("transcript", "ingest", "transcript.json"),
        "changepoints": ArtifactSpec("changepoints", "stage1", "changepoints.json"),
        "sampling": ArtifactSpec("sampling", "stage1", "sampling.json"),
        "captions": ArtifactSpec("captions", "stage2", "captions.json"),
        "labels": ArtifactSpec("labels", "stage2", "labels.json"),
        "assignments": ArtifactSpec("assignments", "stage2", "assignments.json"),
        "windows": ArtifactSpec("windows", "stage3", "windows.json"),
        "summary_tree": ArtifactSpec("summary_tree", "stage3", "summary_tree.json"),
        "summary": ArtifactSpec("summary", "stage3", "summary.txt"),
        "scores": ArtifactSpec("scores", "score", "scores.csv"),
    }

    FRAMES_DIR = "frames"
    WINDOWS_DIR = "windows"
    MANIFEST_FILE = "manifest.json"
    CONFIG_SNAPSHOT_FILE = "config.snapshot.yaml"
    EVAL_REPORT_FILE = "eval_report.json"
    EVAL_PAIRS_FILE = "eval_pairs.jsonl"
    EXTERNAL_SCORES_FILE = "external_scores.json"

    def __init__(self, base_path: Optional[Path] = None):
        """Initialize FileManager with the run directory as base path."""
        self.base_path = Path(base_path) if base_path else Path.cwd()
        self.logger = logging.getLogger(__name__)

    # Shipped resources

    @staticmethod
    def get_core_path() -> Path:
        """Get the core directory path."""
        return Path(__file__).parent / "core"

    def get_default_config_path(self) -> Path:
        """Get the default configuration file path."""
        return self.get_core_path() / "configs" / "config_default.yaml"

    def get_profile_path(self, profile: str) -> Path:
        """Get a backend profile path by name, or pass a file path through."""
        candidate = Path(profile)
        if candidate.suffix in (".yaml", ".yml") and candidate.exists():
            return candidate
        return self.get_core_path() / "configs" / f"backends_{profile}.yaml"

    def get_template_path(self, template_id: str) -> Path:
        """Get a prompt template path by template id."""
        file_name = "prompt_" + template_id.replace("-", "_") + ".md"
        return self.get_core_path() / "templates" / file_name

    def list_profiles(self) -> List[str]:
        """List shipped backend profiles."""
        configs_dir = self.get_core_path() / "configs"
        return sorted(p.stem.replace("backends_", "") for p in configs_dir.glob("backends_*.yaml"))

    # Run directory

    def ensure_run_dir(self) -> Path:
        """Create the run directory if needed."""
        self.base_path.mkdir(parents=True, exist_ok=True)
        return self.base_path

    def artifact_path(self, name: str) -> Path:
        """Absolute path of a named stage artifact."""
        return self.base_path / self.ARTIFACTS[name].relative_path

    def stage_artifacts(self, stage: str) -> List[Path]:
        """All artifact paths produced by a stage."""
        return [self.base_path / a.relative_path for a in self.ARTIFACTS.values() if a.stage == stage]

    def stage_outputs_exist(self, stage: str) -> bool:
        """True when every artifact of a stage is present."""
        return all(p.exists() for p in self.stage_artifacts(stage))

    def frames_dir(self) -> Path:
        return self.base_path / self.FRAMES_DIR

    def windows_dir(self) -> Path:
        return self.base_path / self.WINDOWS_DIR

    def manifest_path(self) -> Path:
        return self.base_path / self.MANIFEST_FILE

    def relative(self, path: Path) -> str:
        """Path relative to the run directory, POSIX-style."""
        return Path(path).resolve().relative_to(self.base_path.resolve()).as_posix()

    def resolve(self, ref: str) -> Path:
        """Resolve a run-relative reference to an absolute path."""
        path = Path(ref)
        return path if path.is_absolute() else self.base_path / path

    # Reading and writing

    def write_json(self, name_or_path: Any, data: Any) -> Path:
        """Write JSON atomically; accepts an artifact name or a path."""
        path = self._as_path(name_or_path)
        text = json.dumps(data, indent=2, ensure_ascii=False) + "\n"
        self.write_text(path, text)
        return path

    def read_json(self, name_or_path: Any) -> Any:
        path = self._as_path(name_or_path)
        if not path.exists():
            raise FileNotFoundError(f"Artifact not found: {path}. Run the producing stage first.")
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def write_text(self, name_or_path: Any, text: str) -> Path:
        path = self._as_path(name_or_path)
        atomic_write_bytes(path, text.encode("utf-8"))
        return path

    def read_text(self, name_or_path: Any) -> str:
        path = self._as_path(name_or_path)
        with open(path, "r", encoding="utf-8") as f:
            return f.read()

    def _as_path(self, name_or_path: Any) -> Path:
        if isinstance(name_or_path, str) and name_or_path in self.ARTIFACTS:
            return self.artifact_path(name_or_path)
        path = Path(name_or_path)
        return path if path.is_absolute() else self.base_path / path


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write-temp-then-rename so readers never observe partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
