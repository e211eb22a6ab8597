"""
Stage 2: captioning, label generation and validation, and label anchoring

Frames are captioned by the chat backend, each caption is condensed into a
short label, labels are validated, and validated labels become anchors in
the joint embedding space. Frames whose best anchor similarity stays below
tau are dropped.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from anchorsum.chat import ChatClient
from anchorsum.embedding import SPACE_JOINT, EmbeddingService, EmbeddingVector, cosine_similarity
from anchorsum.errors import BackendError, ConfigError, InvalidInput, ValidationUnavailable
from anchorsum.ingest import FrameRecord
from anchorsum.template_parser import load_prompt

logger = logging.getLogger(__name__)

STAGE_CAPTION = "s2-caption"
STAGE_ANCHOR = "s2-anchor"
STAGE_S3 = "s3"

CAPTION_OK = "ok"
CAPTION_FAILED = "failed"

VERDICT_VALID = "valid"
VERDICT_REJECTED = "rejected"
VERDICT_UNAVAILABLE = "unavailable"


@dataclass
class Caption:
    frame_index: int
    text: str
    backend_id: str
    prompt_hash: str
    status: str = CAPTION_OK

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_index": self.frame_index,
            "text": self.text,
            "backend_id": self.backend_id,
            "prompt_hash": self.prompt_hash,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Caption":
        return cls(**data)


@dataclass
class LabelCandidate:
    """A generated label and its validation verdict."""

    frame_index: int
    text: str
    verdict: str

    @property
    def validated(self) -> bool:
        return self.verdict == VERDICT_VALID

    def to_dict(self) -> Dict[str, Any]:
        return {"frame_index": self.frame_index, "text": self.text, "verdict": self.verdict}


@dataclass
class LabelAnchor:
    label_id: str
    text: str
    source_frames: List[int]
    validated: bool
    embedding: Optional[EmbeddingVector] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label_id": self.label_id,
            "text": self.text,
            "source_frames": list(self.source_frames),
            "validated": self.validated,
        }


@dataclass
class Assignment:
    frame_index: int
    best_label: Optional[str]
    best_score: float
    all_matches: List[Tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "frame_index": self.frame_index,
            "best_label": self.best_label,
            "best_score": None if math.isnan(self.best_score) else self.best_score,
            "all_matches": [[label, score] for label, score in self.all_matches],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Assignment":
        score = data.get("best_score")
        return cls(
            int(data["frame_index"]),
            data.get("best_label"),
            math.nan if score is None else float(score),
            [(label, float(s)) for label, s in data.get("all_matches", [])],
        )


def _read_image(frame: FrameRecord, base_dir: Path) -> bytes:
    path = Path(frame.image_ref)
    if not path.is_absolute():
        path = Path(base_dir) / path
    with open(path, "rb") as f:
        return f.read()


def caption_frame(
    client: ChatClient,
    frame: FrameRecord,
    dataset_description: str,
    base_dir: Path,
    prompts_dir: Optional[str] = None,
) -> Caption:
    """
    Describe one frame with the frame-description prompt.

    A backend failure after retries, or an empty reply, drops the frame at
    ``s2-caption`` and returns a caption with status ``failed``.
    """
    prompt = load_prompt("frame-describe", prompts_dir).render(DATASET_DESCRIPTION=dataset_description)
    try:
        text = client.complete(prompt, [_read_image(frame, base_dir)]).strip()
        if not text:
            raise BackendError("empty caption", retryable=False)
    except BackendError as e:
        logger.warning(f"Dropping frame {frame.index}: captioning failed ({e})")
        frame.drop(STAGE_CAPTION)
        return Caption(frame.index, "", client.backend_id, prompt.prompt_hash, CAPTION_FAILED)
    return Caption(frame.index, text, client.backend_id, prompt.prompt_hash)


def caption_frames(
    client: ChatClient,
    frames: Sequence[FrameRecord],
    dataset_description: str,
    base_dir: Path,
    prompts_dir: Optional[str] = None,
) -> List[Caption]:
    return client.map(lambda f: caption_frame(client, f, dataset_description, base_dir, prompts_dir), frames)


def generate_label(
    client: ChatClient,
    caption: Caption,
    max_chars: int = 120,
    prompts_dir: Optional[str] = None,
) -> str:
    """Condense a caption into a short label."""
    if not caption.text.strip():
        raise InvalidInput(f"Cannot generate a label from an empty caption (frame {caption.frame_index})")
    prompt = load_prompt("label-generate", prompts_dir).render(VLM_OUTPUT=caption.text)
    label = client.complete(prompt, key=caption.text).strip()
    if len(label) > max_chars:
        logger.warning(f"Label for frame {caption.frame_index} truncated to {max_chars} characters")
        label = label[:max_chars].rstrip()
    return label


def validate_label(client: ChatClient, label: str, prompts_dir: Optional[str] = None) -> bool:
    """
    Ask the backend whether a label is specific enough.

    Only the exact reply ``1`` counts as valid.

    Raises:
        InvalidInput: For an empty label
        ValidationUnavailable: When the backend fails after retries
    """
    if not label.strip():
        raise InvalidInput("Cannot validate an empty label")
    prompt = load_prompt("label-validate", prompts_dir).render(LABEL=label)
    try:
        reply = client.complete(prompt, key=label)
    except BackendError as e:
        raise ValidationUnavailable(f"Validation of {label!r} unavailable: {e}")
    return reply.strip() == "1"


def label_candidates(
    client: ChatClient,
    captions: Sequence[Caption],
    max_chars: int = 120,
    prompts_dir: Optional[str] = None,
) -> List[LabelCandidate]:
    """Generate and validate one label per successful caption, in frame order."""

    def work(caption: Caption) -> Optional[LabelCandidate]:
        try:
            label = generate_label(client, caption, max_chars, prompts_dir)
        except BackendError as e:
            logger.warning(f"No label for frame {caption.frame_index}: {e}")
            return None
        if not label:
            return LabelCandidate(caption.frame_index, label, VERDICT_REJECTED)
        try:
            verdict = VERDICT_VALID if validate_label(client, label, prompts_dir) else VERDICT_REJECTED
        except ValidationUnavailable as e:
            logger.warning(f"Quarantined label of frame {caption.frame_index}: {e}")
            verdict = VERDICT_UNAVAILABLE
        return LabelCandidate(caption.frame_index, label, verdict)

    usable = [c for c in captions if c.status == CAPTION_OK]
    return [c for c in client.map(work, usable) if c is not None]


def build_anchor_set(
    candidates: Sequence[LabelCandidate],
    joint: Optional[EmbeddingService],
    merge_near_duplicates: bool = False,
    near_duplicate_threshold: float = 0.95,
) -> List[LabelAnchor]:
    """
    Deduplicate validated labels and embed each anchor once.

    Exact duplicates are merged case-insensitively; with
    ``merge_near_duplicates`` anchors whose joint-space cosine reaches the
    threshold are folded into the earlier anchor.
    """
    anchors: List[LabelAnchor] = []
    by_key: Dict[str, LabelAnchor] = {}
    for candidate in sorted((c for c in candidates if c.validated), key=lambda c: c.frame_index):
        key = " ".join(candidate.text.split()).casefold()
        if key in by_key:
            by_key[key].source_frames.append(candidate.frame_index)
            continue
        anchor = LabelAnchor(f"L{len(anchors):03d}", candidate.text, [candidate.frame_index], True)
        by_key[key] = anchor
        anchors.append(anchor)

    if joint is not None and anchors:
        for anchor, vector in zip(anchors, joint.embed_texts([a.text for a in anchors])):
            anchor.embedding = vector

    if merge_near_duplicates and anchors:
        kept: List[LabelAnchor] = []
        for anchor in anchors:
            target = next(
                (k for k in kept if cosine_similarity(k.embedding, anchor.embedding) >= near_duplicate_threshold),
                None,
            )
            if target is None:
                kept.append(anchor)
            else:
                logger.info(f"Merged near-duplicate label {anchor.text!r} into {target.text!r}")
                target.source_frames.extend(anchor.source_frames)
        anchors = [
            LabelAnchor(f"L{i:03d}", a.text, sorted(a.source_frames), True, a.embedding)
            for i, a in enumerate(kept)
        ]

    for anchor in anchors:
        anchor.source_frames.sort()
    return anchors


def assign_labels(
    frames: Sequence[FrameRecord],
    embeddings: Dict[int, EmbeddingVector],
    anchors: Sequence[LabelAnchor],
    tau: float,
) -> List[Assignment]:
    """
    Assign each frame its most similar anchor if that similarity reaches tau.

    Every frame receives its best score as ``s3``; frames below tau are dropped
    at ``s2-anchor``. With no anchors every frame is dropped.
    """
    assignments = []
    for frame in frames:
        vector = embeddings[frame.index]
        if vector.space != SPACE_JOINT:
            raise ConfigError(f"Frame {frame.index} embedding is in the {vector.space} space, anchoring needs the joint space")
        if not anchors:
            frame.drop(STAGE_ANCHOR)
            assignments.append(Assignment(frame.index, None, math.nan))
            continue

        scores = [(a.label_id, cosine_similarity(vector, a.embedding)) for a in anchors]
        best_label, best_score = max(scores, key=lambda s: s[1])
        matches = sorted(((label, s) for label, s in scores if s >= tau), key=lambda m: -m[1])
        frame.set_score(STAGE_S3, min(1.0, max(0.0, best_score)))
        if best_score >= tau:
            assignments.append(Assignment(frame.index, best_label, best_score, matches))
        else:
            frame.drop(STAGE_ANCHOR)
            assignments.append(Assignment(frame.index, None, best_score, matches))

    kept = sum(1 for a in assignments if a.best_label is not None)
    logger.info(f"Anchoring kept {kept}/{len(assignments)} frames at tau={tau}")
    return assignments
