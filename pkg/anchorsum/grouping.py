"""Stage-3 windowing and the layered per-frame importance score."""

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

from anchorsum.errors import InvalidInput
from anchorsum.utils import batched, ordered_unique

logger = logging.getLogger(__name__)

WINDOW_SIZE = 4

PATTERN_DISTINCT = "4-distinct"
PATTERN_3_1 = "3:1"
PATTERN_2_2 = "2:2"
PATTERN_2_1_1 = "2:1:1"
PATTERN_UNANIMOUS = "unanimous"
PATTERN_PARTIAL = "partial"

# Number of score components a frame keeps, by the stage that dropped it.
COMPONENTS_KEPT = {"s1": 1, "s2": 2, "s2-caption": 2, "s2-anchor": 3}

SCORE_COLUMNS = ["frame_index", "timestamp_s", "s1", "s2", "s3", "s4", "final"]


@dataclass
class Window:
    window_id: int
    frame_indices: List[int]
    labels: List[str]
    main_label: str
    label_pattern: str
    weights: List[float]

    @property
    def per_frame_weight(self) -> Dict[int, float]:
        return dict(zip(self.frame_indices, self.weights))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window_id": self.window_id,
            "frames": list(self.frame_indices),
            "labels": list(self.labels),
            "main_label": self.main_label,
            "pattern": self.label_pattern,
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Window":
        return cls(
            int(data["window_id"]),
            list(data["frames"]),
            list(data["labels"]),
            data["main_label"],
            data["pattern"],
            [float(w) for w in data["weights"]],
        )


@dataclass
class ImportanceScore:
    frame_index: int
    timestamp_s: float
    s1: float
    s2: float
    s3: float
    s4: float

    @property
    def final(self) -> float:
        return (self.s1 + self.s2 + self.s3 + self.s4) / 4


def label_pattern(labels: Sequence[str]) -> str:
    if len(labels) < WINDOW_SIZE:
        return PATTERN_PARTIAL
    counts = sorted(Counter(labels).values(), reverse=True)
    return {
        (4,): PATTERN_UNANIMOUS,
        (3, 1): PATTERN_3_1,
        (2, 2): PATTERN_2_2,
        (2, 1, 1): PATTERN_2_1_1,
        (1, 1, 1, 1): PATTERN_DISTINCT,
    }[tuple(counts)]


def main_label(labels: Sequence[str]) -> str:
    """All distinct or a 2:2 tie joins the tied labels with ' + '; otherwise plurality."""
    if not labels:
        raise InvalidInput("A window needs at least one label")
    counts = Counter(labels)
    top = max(counts.values())
    leaders = [label for label in ordered_unique(labels) if counts[label] == top]
    return " + ".join(leaders)


def window_weights(labels: Sequence[str]) -> List[float]:
    """Per-frame weights from the window's label count profile."""
    if not labels:
        raise InvalidInput("A window needs at least one label")
    counts = Counter(labels)
    profile = sorted(counts.values(), reverse=True)
    top = profile[0]
    if len(profile) == 1:
        return [0.25] * len(labels)
    if top == 3:
        return [0.75 if counts[label] == 3 else 0.25 for label in labels]
    if top == 2 and profile[1] == 2:
        return [0.5] * len(labels)
    if top == 2:
        return [0.5 if counts[label] == 2 else 0.25 for label in labels]
    return [0.25] * len(labels)


def make_windows(anchored: Sequence[Tuple[int, str]]) -> List[Window]:
    """
    Tile anchored (frame_index, label) pairs into consecutive windows of four.

    A trailing window of one to three frames is kept as a partial window.
    """
    ordered = sorted(anchored, key=lambda item: item[0])
    windows = []
    for window_id, chunk in enumerate(batched(ordered, WINDOW_SIZE)):
        frames = [index for index, _ in chunk]
        labels = [label for _, label in chunk]
        windows.append(Window(
            window_id=window_id,
            frame_indices=frames,
            labels=labels,
            main_label=main_label(labels),
            label_pattern=label_pattern(labels),
            weights=window_weights(labels),
        ))
    logger.info(f"Grouped {len(ordered)} anchored frames into {len(windows)} windows")
    return windows


def importance_scores(
    frames: Sequence[Dict[str, Any]],
    windows: Sequence[Window],
) -> List[ImportanceScore]:
    """
    Layer the stage scores of every original frame.

    Each frame state carries ``index``, ``timestamp_s``, ``scores`` (s1..s3)
    and ``dropped_at``. Components after the drop stage are 0; the mean
    divisor stays 4.
    """
    weight_of: Dict[int, float] = {}
    for window in windows:
        weight_of.update(window.per_frame_weight)

    results = []
    for state in frames:
        index = int(state["index"])
        scores = state.get("scores", {})
        components = [
            float(scores.get("s1", 0.0)),
            float(scores.get("s2", 0.0)),
            float(scores.get("s3", 0.0)),
            weight_of.get(index, 0.0),
        ]
        dropped_at: Optional[str] = state.get("dropped_at")
        kept = COMPONENTS_KEPT.get(dropped_at, 4) if dropped_at else 4
        components = [c if k < kept else 0.0 for k, c in enumerate(components)]
        results.append(ImportanceScore(index, float(state["timestamp_s"]), *components))
    return results


def scores_to_csv(scores: Sequence[ImportanceScore]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SCORE_COLUMNS)
    for s in scores:
        writer.writerow([s.frame_index, repr(s.timestamp_s), repr(s.s1), repr(s.s2), repr(s.s3), repr(s.s4), repr(s.final)])
    return buffer.getvalue()


def scores_from_csv(text: str) -> List[ImportanceScore]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or "final" not in reader.fieldnames:
        raise InvalidInput("scores.csv must have a header with a 'final' column")
    results = []
    for row in reader:
        score = ImportanceScore(
            int(row["frame_index"]),
            float(row["timestamp_s"]),
            float(row["s1"]),
            float(row["s2"]),
            float(row["s3"]),
            float(row["s4"]),
        )
        if not math.isclose(score.final, float(row["final"]), abs_tol=1e-9):
            logger.warning(f"Frame {score.frame_index}: stored final differs from the mean of its components")
        results.append(score)
    return results
