"""Run manifest: config snapshot, per-stage accounting and backend call digests."""

import logging
import threading
from dataclasses import dataclass, asdict, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from anchorsum.file_manager import FileManager
from anchorsum.utils import canonical_json, sha256_text

logger = logging.getLogger(__name__)

STATUS_COMPLETE = "complete"
STATUS_REUSED = "reused"
STATUS_FAILED = "failed"
STATUS_STALE = "stale"


@dataclass
class StageRecord:
    """One append-only entry per stage execution."""

    stage: str
    status: str
    input_count: int
    output_count: int
    wall_time_s: float
    finished_at: str = ""
    detail: Dict[str, Any] = field(default_factory=dict)


class CallLog:
    """Thread-safe log of backend request/response digests."""

    def __init__(self, entries: Optional[List[Dict[str, Any]]] = None):
        self._lock = threading.Lock()
        self._entries: List[Dict[str, Any]] = list(entries or [])

    def record(self, backend: str, operation: str, request: Any, response: Any, cached: bool) -> None:
        entry = {
            "backend": backend,
            "operation": operation,
            "request_sha256": sha256_text(canonical_json(request)),
            "response_sha256": sha256_text(canonical_json(response)),
            "cached": cached,
        }
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> List[Dict[str, Any]]:
        with self._lock:
            return list(self._entries)

    def count(self, operation: Optional[str] = None, include_cached: bool = True) -> int:
        return sum(
            1
            for e in self.entries()
            if (operation is None or e["operation"] == operation) and (include_cached or not e["cached"])
        )

    def digest(self) -> str:
        return sha256_text(canonical_json(self.entries()))


class RunManifest:
    """The append-only ``manifest.json`` of one run directory."""

    def __init__(self, run_id: str, config: Dict[str, Any]):
        self.run_id = run_id
        self.config = config
        self.stages: List[StageRecord] = []
        self.frame_counts: Dict[str, int] = {}
        self.info: Dict[str, Any] = {}
        self.calls = CallLog()

    @classmethod
    def load(cls, file_manager: FileManager) -> Optional["RunManifest"]:
        """Load the manifest of a run directory, or None if there is none."""
        path = file_manager.manifest_path()
        if not path.exists():
            return None
        data = file_manager.read_json(path)
        manifest = cls(data["run_id"], data.get("config", {}))
        manifest.stages = [StageRecord(**s) for s in data.get("stages", [])]
        manifest.frame_counts = dict(data.get("frame_counts", {}))
        manifest.info = dict(data.get("info", {}))
        manifest.calls = CallLog(data.get("backend_calls", {}).get("entries", []))
        return manifest

    def save(self, file_manager: FileManager) -> None:
        entries = self.calls.entries()
        data = {
            "run_id": self.run_id,
            "config": self.config,
            "stages": [asdict(s) for s in self.stages],
            "frame_counts": self.frame_counts,
            "info": self.info,
            "backend_calls": {
                "count": len(entries),
                "digest": sha256_text(canonical_json(entries)),
                "entries": entries,
            },
        }
        file_manager.write_json(file_manager.manifest_path(), data)

    def record_stage(
        self,
        stage: str,
        status: str,
        input_count: int,
        output_count: int,
        wall_time_s: float,
        detail: Optional[Dict[str, Any]] = None,
    ) -> StageRecord:
        record = StageRecord(
            stage=stage,
            status=status,
            input_count=input_count,
            output_count=output_count,
            wall_time_s=round(wall_time_s, 6),
            finished_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            detail=detail or {},
        )
        self.stages.append(record)
        logger.info(f"Stage {stage}: {status} ({input_count} -> {output_count}, {wall_time_s:.2f}s)")
        return record

    def last_record(self, stage: str) -> Optional[StageRecord]:
        for record in reversed(self.stages):
            if record.stage == stage:
                return record
        return None

    def is_complete(self, stage: str) -> bool:
        record = self.last_record(stage)
        return record is not None and record.status in (STATUS_COMPLETE, STATUS_REUSED)

    def mark_stale(self, stages: List[str]) -> None:
        """Append stale markers so downstream stages re-run after an upstream re-run."""
        for stage in stages:
            if self.is_complete(stage):
                self.record_stage(stage, STATUS_STALE, 0, 0, 0.0)

    def total_wall_time(self) -> float:
        latest: Dict[str, float] = {}
        for record in self.stages:
            if record.status in (STATUS_COMPLETE, STATUS_REUSED):
                latest[record.stage] = record.wall_time_s
        return sum(latest.values())
