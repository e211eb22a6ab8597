"""Frame extraction and transcript loading."""

import io
import logging
import math
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from PIL import Image, UnidentifiedImageError

from anchorsum.config import IngestConfig
from anchorsum.errors import DecoderError, EmptyVideo, InvalidInput, ParseError
from anchorsum.file_manager import FileManager, atomic_write_bytes
from anchorsum.utils import sha256_bytes

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
FRAME_NAME = "{:06d}.jpg"

VIDEO_FILE = "video-file"
IMAGE_DIRECTORY = "image-directory"


@dataclass(frozen=True)
class VideoSource:
    """A video container or a directory of pre-extracted stills."""

    kind: str
    path: Path
    fps: float = 1.0

    def __post_init__(self):
        if self.kind not in (VIDEO_FILE, IMAGE_DIRECTORY):
            raise InvalidInput(f"Unknown source kind '{self.kind}'")
        if self.fps <= 0:
            raise InvalidInput(f"fps must be > 0, got {self.fps}")

    @classmethod
    def from_path(cls, path: str, fps: float = 1.0) -> "VideoSource":
        p = Path(path)
        return cls(IMAGE_DIRECTORY if p.is_dir() else VIDEO_FILE, p, fps)


@dataclass
class FrameRecord:
    """A sampled frame and the scores each stage assigned to it."""

    index: int
    timestamp_s: float
    image_ref: str
    sha256: str = ""
    stage_scores: Dict[str, float] = field(default_factory=dict)
    dropped_at: Optional[str] = None

    def set_score(self, stage: str, value: float) -> None:
        if not 0.0 <= value <= 1.0 or math.isnan(value):
            raise InvalidInput(f"Score for frame {self.index} at {stage} out of [0, 1]: {value}")
        self.stage_scores[stage] = float(value)

    def drop(self, stage: str) -> None:
        if self.dropped_at is not None:
            raise InvalidInput(f"Frame {self.index} was already dropped at {self.dropped_at}")
        self.dropped_at = stage

    @property
    def alive(self) -> bool:
        return self.dropped_at is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "timestamp_s": self.timestamp_s,
            "image_ref": self.image_ref,
            "sha256": self.sha256,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FrameRecord":
        return cls(
            index=int(data["index"]),
            timestamp_s=float(data["timestamp_s"]),
            image_ref=data["image_ref"],
            sha256=data.get("sha256", ""),
        )


@dataclass(frozen=True)
class TranscriptSegment:
    start_s: float
    end_s: float
    text: str


@dataclass
class Transcript:
    segments: List[TranscriptSegment] = field(default_factory=list)

    @property
    def full_text(self) -> str:
        return " ".join(s.text for s in self.segments if s.text)

    @property
    def is_empty(self) -> bool:
        return not self.full_text.strip()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "segments": [
                {"start_s": s.start_s, "end_s": None if math.isinf(s.end_s) else s.end_s, "text": s.text}
                for s in self.segments
            ],
            "full_text": self.full_text,
        }

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "Transcript":
        if not data:
            return cls()
        return cls([
            TranscriptSegment(
                float(s["start_s"]),
                math.inf if s.get("end_s") is None else float(s["end_s"]),
                s["text"],
            )
            for s in data.get("segments", [])
        ])


def extract_frames(
    source: VideoSource,
    out_dir: Path,
    config: Optional[IngestConfig] = None,
) -> List[FrameRecord]:
    """
    Decode a source into JPEG stills under ``<out_dir>/frames``.

    Every still is re-encoded through Pillow at the configured quality, so
    frames from either source kind are byte-stable for a fixed input.

    Raises:
        FileNotFoundError: When the source path does not exist
        DecoderError: When the decoder fails or an image cannot be read
        EmptyVideo: When no frame could be decoded
    """
    config = config or IngestConfig(fps=source.fps)
    if not source.path.exists():
        raise FileNotFoundError(f"Source not found: {source.path}")

    file_manager = FileManager(Path(out_dir))
    frames_dir = file_manager.frames_dir()
    if frames_dir.exists():
        shutil.rmtree(frames_dir)
    frames_dir.mkdir(parents=True)

    if source.kind == IMAGE_DIRECTORY:
        inputs = sorted(p for p in source.path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        records = _encode_stills(inputs, frames_dir, file_manager, source.fps, config)
    else:
        with tempfile.TemporaryDirectory(prefix="anchorsum-decode-") as tmp:
            decoded = _run_decoder(source, Path(tmp), config)
            records = _encode_stills(decoded, frames_dir, file_manager, source.fps, config)

    if not records:
        raise EmptyVideo(f"No decodable frames in {source.path}")

    logger.info(f"Extracted {len(records)} frames from {source.path} at {source.fps} fps")
    return records


def probe_duration(path: Path, probe: str = "ffprobe") -> float:
    """Container duration in seconds as reported by ffprobe."""
    cmd = [probe, "-v", "error", "-show_entries", "format=duration",
           "-of", "default=noprint_wrappers=1:nokey=1", str(path)]
    try:
        result = subprocess.run(cmd, capture_output=True, text=True, check=True)
    except FileNotFoundError:
        raise DecoderError(f"Probe executable '{probe}' not found")
    except subprocess.CalledProcessError as e:
        raise DecoderError(f"{probe} failed on {path}: {e.stderr.strip()}")
    try:
        return float(result.stdout.strip())
    except ValueError:
        raise DecoderError(f"{probe} reported no duration for {path}")


def _run_decoder(source: VideoSource, tmp_dir: Path, config: IngestConfig) -> List[Path]:
    duration = probe_duration(source.path, config.probe)
    logger.debug(f"Source duration {duration:.2f}s, expecting ~{math.floor(duration * source.fps)} frames")

    cmd = [config.decoder, "-nostdin", "-loglevel", "error", "-i", str(source.path),
           "-vf", f"fps={source.fps}", "-start_number", "0", str(tmp_dir / "%06d.png")]
    try:
        subprocess.run(cmd, capture_output=True, text=True, check=True)
    except FileNotFoundError:
        raise DecoderError(f"Decoder executable '{config.decoder}' not found")
    except subprocess.CalledProcessError as e:
        raise DecoderError(f"{config.decoder} failed on {source.path}: {e.stderr.strip()}")
    return sorted(tmp_dir.glob("*.png"))


def _encode_stills(
    inputs: List[Path],
    frames_dir: Path,
    file_manager: FileManager,
    fps: float,
    config: IngestConfig,
) -> List[FrameRecord]:
    records = []
    for index, path in enumerate(inputs):
        data = encode_jpeg(path, config.jpeg_quality, config.resize)
        target = frames_dir / FRAME_NAME.format(index)
        atomic_write_bytes(target, data)
        records.append(FrameRecord(
            index=index,
            timestamp_s=index / fps,
            image_ref=file_manager.relative(target),
            sha256=sha256_bytes(data),
        ))
    return records


def encode_jpeg(path: Path, quality: int = 90, resize: Optional[List[int]] = None) -> bytes:
    """Re-encode an image file as RGB JPEG bytes."""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if resize:
                img = img.resize((int(resize[0]), int(resize[1])), Image.Resampling.BILINEAR)
            buffer = io.BytesIO()
            img.save(buffer, format="JPEG", quality=quality)
    except (UnidentifiedImageError, OSError) as e:
        raise DecoderError(f"Cannot decode image {path}: {e}")
    return buffer.getvalue()


def save_frames(file_manager: FileManager, frames: List[FrameRecord]) -> None:
    file_manager.write_json("frames", [f.to_dict() for f in frames])


def load_frames(file_manager: FileManager) -> List[FrameRecord]:
    return [FrameRecord.from_dict(d) for d in file_manager.read_json("frames")]


# Transcripts

_TIMING = re.compile(
    r"^\s*(?P<start>(?:\d+:)?\d{1,2}:\d{2}[.,]\d{1,3})\s*-->\s*(?P<end>(?:\d+:)?\d{1,2}:\d{2}[.,]\d{1,3})(?:\s+.*)?$"
)
_TAG = re.compile(r"<[^>]+>")


def load_transcript(path: str) -> Transcript:
    """
    Load an SRT, WebVTT or plain-text transcript.

    Plain text becomes a single segment spanning [0, inf).

    Raises:
        FileNotFoundError: When the file does not exist
        ParseError: On malformed timing lines or overlapping cues
    """
    transcript_path = Path(path)
    if not transcript_path.exists():
        raise FileNotFoundError(f"Transcript not found: {path}")

    with open(transcript_path, "r", encoding="utf-8-sig") as f:
        content = f.read()

    if not content.strip():
        return Transcript()

    suffix = transcript_path.suffix.lower()
    if suffix in (".srt", ".vtt"):
        segments = _parse_cues(content, webvtt=suffix == ".vtt")
    else:
        segments = [TranscriptSegment(0.0, math.inf, " ".join(content.split()))]

    return Transcript(segments)


def _parse_cues(content: str, webvtt: bool) -> List[TranscriptSegment]:
    lines = content.splitlines()
    segments: List[TranscriptSegment] = []
    i = 0

    if webvtt:
        if not lines[0].startswith("WEBVTT"):
            raise ParseError("missing WEBVTT header", 1)
        i = 1

    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue

        block_start = i
        block = []
        while i < len(lines) and lines[i].strip():
            block.append(lines[i])
            i += 1

        if webvtt and block[0].split(" ", 1)[0] in ("NOTE", "STYLE", "REGION"):
            continue

        # Optional cue identifier (SRT ordinal or WebVTT id) precedes the timing line.
        timing_offset = 0
        if "-->" not in block[0]:
            timing_offset = 1
            if len(block) < 2:
                raise ParseError(f"cue without timing line: {block[0]!r}", block_start + 1)

        line_no = block_start + timing_offset + 1
        match = _TIMING.match(block[timing_offset])
        if not match:
            raise ParseError(f"malformed timing line: {block[timing_offset]!r}", line_no)

        start = _parse_timestamp(match.group("start"), line_no)
        end = _parse_timestamp(match.group("end"), line_no)
        if end < start:
            raise ParseError("cue ends before it starts", line_no)
        if segments and start < segments[-1].end_s:
            raise ParseError("cue overlaps or precedes the previous cue", line_no)

        text = " ".join(_TAG.sub("", t).strip() for t in block[timing_offset + 1:]).strip()
        segments.append(TranscriptSegment(start, end, text))

    return segments


def _parse_timestamp(value: str, line_no: int) -> float:
    parts = value.replace(",", ".").split(":")
    try:
        seconds = float(parts[-1])
        minutes = int(parts[-2])
        hours = int(parts[-3]) if len(parts) == 3 else 0
    except (ValueError, IndexError):
        raise ParseError(f"malformed timestamp {value!r}", line_no)
    if seconds >= 60 or minutes >= 60:
        raise ParseError(f"timestamp field out of range {value!r}", line_no)
    return hours * 3600 + minutes * 60 + seconds
