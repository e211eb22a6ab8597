"""Stage-1 frame reduction: difference pre-filter and adaptive density sampling."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np

from anchorsum.changepoint import ChangePointSet
from anchorsum.config import SamplerConfig
from anchorsum.embedding import EmbeddingVector
from anchorsum.errors import InvalidInput
from anchorsum.ingest import FrameRecord
from anchorsum.utils import batched

logger = logging.getLogger(__name__)

STAGE_S1 = "s1"
STAGE_S2 = "s2"

__all__ = [
    "SamplerConfig",
    "SegmentBatch",
    "SamplingResult",
    "consecutive_distances",
    "diff_filter",
    "adaptive_sample",
    "reduction_report",
]


@dataclass
class SegmentBatch:
    """Consecutive survivors of one change-point segment, sampled as a unit."""

    segment: int
    frame_indices: List[int]
    median_distance: float
    retained: List[int]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "segment": self.segment,
            "frames": list(self.frame_indices),
            "med_s": self.median_distance,
            "retained": list(self.retained),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SegmentBatch":
        return cls(int(data["segment"]), list(data["frames"]), float(data["med_s"]), list(data["retained"]))


@dataclass
class SamplingResult:
    retained: List[int]
    batches: List[SegmentBatch]


def consecutive_distances(embeddings: Sequence[EmbeddingVector]) -> np.ndarray:
    """d_i = ||f_i - f_{i-1}||, with d_0 = 0."""
    if not embeddings:
        return np.zeros(0)
    points = np.vstack([e.values for e in embeddings])
    d = np.zeros(len(embeddings))
    d[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return d


def diff_filter(
    frames: Sequence[FrameRecord],
    embeddings: Sequence[EmbeddingVector],
    diff_threshold: float,
) -> List[int]:
    """
    Keep frames whose max-normalized consecutive difference reaches the threshold.

    The threshold is on a 0-100 scale. Frame 0 always survives. When every
    difference is zero only frame 0 survives. Writes ``s1`` scores and marks
    non-survivors dropped at ``s1``.
    """
    if len(frames) != len(embeddings) or not frames:
        raise InvalidInput(f"diff_filter needs matching non-empty inputs, got {len(frames)} frames and {len(embeddings)} embeddings")

    d = consecutive_distances(embeddings)
    peak = float(d.max())
    survivors = []
    for i, frame in enumerate(frames):
        score = float(d[i] / peak) if peak > 0 else 0.0
        frame.set_score(STAGE_S1, score)
        if i == 0 or (peak > 0 and 100.0 * score >= diff_threshold):
            survivors.append(frame.index)
        else:
            frame.drop(STAGE_S1)

    logger.info(f"Difference filter kept {len(survivors)}/{len(frames)} frames (threshold {diff_threshold})")
    return survivors


def adaptive_sample(
    frames: Sequence[FrameRecord],
    survivors: Sequence[int],
    embeddings: Sequence[EmbeddingVector],
    changepoints: ChangePointSet,
    config: SamplerConfig,
) -> SamplingResult:
    """
    Retain one or two representatives per batch of survivors.

    Survivors are grouped by change-point segment and chunked into batches of
    at most ``config.batch_size``. A batch keeps its medoid, plus the member
    farthest from the medoid when the median pairwise distance reaches
    ``config.delta``. Ties resolve to the lower frame index.
    """
    by_index = {f.index: f for f in frames}
    d = consecutive_distances(embeddings)
    groups: Dict[int, List[int]] = {}
    for index in survivors:
        segment = int(np.searchsorted(changepoints.indices, index, side="right"))
        groups.setdefault(segment, []).append(index)

    retained: List[int] = []
    batches: List[SegmentBatch] = []
    for segment in sorted(groups):
        for members in batched(groups[segment], config.batch_size):
            batch = _sample_batch(segment, members, embeddings, config.delta)
            batches.append(batch)
            retained.extend(batch.retained)

            raw = d[members]
            peak = float(raw.max())
            for j, index in enumerate(members):
                score = 1.0 if len(members) == 1 or peak == 0 else float(raw[j] / peak)
                by_index[index].set_score(STAGE_S2, score)
                if index not in batch.retained:
                    by_index[index].drop(STAGE_S2)

    logger.info(f"Adaptive sampling kept {len(retained)}/{len(survivors)} frames in {len(batches)} batches")
    return SamplingResult(retained, batches)


def _sample_batch(segment: int, members: List[int], embeddings: Sequence[EmbeddingVector], delta: float) -> SegmentBatch:
    if len(members) == 1:
        return SegmentBatch(segment, members, 0.0, list(members))

    points = np.vstack([embeddings[i].values for i in members])
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)
    upper = dist[np.triu_indices(len(members), k=1)]
    med = float(np.median(upper))

    medoid = int(np.argmin(dist.sum(axis=1)))
    keep = [medoid]
    if med >= delta:
        row = dist[medoid].copy()
        row[medoid] = -1.0
        keep.append(int(np.argmax(row)))
    return SegmentBatch(segment, members, med, sorted(members[k] for k in keep))


def reduction_report(before: int, after: int) -> float:
    """Fraction of frames kept."""
    if before <= 0 or not 0 <= after <= before:
        raise InvalidInput(f"reduction_report needs before > 0 and 0 <= after <= before, got ({before}, {after})")
    return after / before
