"""Stage-3 text generation: window descriptions, recursive merging and transcript integration."""

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from PIL import Image

from anchorsum.chat import ChatClient
from anchorsum.errors import BackendError, InvalidInput
from anchorsum.grouping import Window
from anchorsum.template_parser import load_prompt

logger = logging.getLogger(__name__)

MODALITY_VISION = "V"
MODALITY_VISION_TEXT = "V+T"

CHUNK_SEPARATOR = "\n\n"

# Top-left, top-right, bottom-left, bottom-right.
QUADRANTS = ((0, 0), (1, 0), (0, 1), (1, 1))


def token_estimate(text: str) -> int:
    return math.ceil(len(text) / 4)


@dataclass
class SummaryNode:
    node_id: str
    level: int
    text: str
    children: List[str] = field(default_factory=list)
    source_windows: List[int] = field(default_factory=list)

    @property
    def token_estimate(self) -> int:
        return token_estimate(self.text)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "node_id": self.node_id,
            "level": self.level,
            "text": self.text,
            "token_estimate": self.token_estimate,
            "children": list(self.children),
            "source_windows": list(self.source_windows),
        }


@dataclass
class MergeResult:
    root: SummaryNode
    nodes: List[SummaryNode]
    calls: int


def compose_window_image(image_paths: Sequence[Path], tile_size: int = 512, quality: int = 90) -> bytes:
    """
    Tile up to four stills into a 2x2 JPEG grid.

    Missing quadrants of partial windows stay black.
    """
    if not 1 <= len(image_paths) <= 4:
        raise InvalidInput(f"A composite needs 1 to 4 frames, got {len(image_paths)}")
    canvas = Image.new("RGB", (2 * tile_size, 2 * tile_size), (0, 0, 0))
    for path, (col, row) in zip(image_paths, QUADRANTS):
        with Image.open(path) as img:
            tile = img.convert("RGB").resize((tile_size, tile_size), Image.Resampling.BILINEAR)
        canvas.paste(tile, (col * tile_size, row * tile_size))
    buffer = io.BytesIO()
    canvas.save(buffer, format="JPEG", quality=quality)
    return buffer.getvalue()


def describe_window(
    client: ChatClient,
    window: Window,
    composite: bytes,
    dataset_description: str,
    prompts_dir: Optional[str] = None,
) -> SummaryNode:
    """Leaf node for one window; a failed call yields a placeholder leaf."""
    prompt = load_prompt("window-describe", prompts_dir).render(
        DATASET_DESCRIPTION=dataset_description,
        MAJORITY_LABEL=window.main_label,
    )
    try:
        text = client.complete(prompt, [composite], key=window.main_label).strip()
    except BackendError as e:
        logger.warning(f"Window {window.window_id} description failed: {e}")
        text = ""
    if not text:
        text = f"[window {window.window_id} unavailable]"
    return SummaryNode(f"w{window.window_id}", 0, text, source_windows=[window.window_id])


def describe_windows(
    client: ChatClient,
    windows: Sequence[Window],
    composites: Sequence[bytes],
    dataset_description: str,
    prompts_dir: Optional[str] = None,
) -> List[SummaryNode]:
    pairs = list(zip(windows, composites))
    return client.map(lambda p: describe_window(client, p[0], p[1], dataset_description, prompts_dir), pairs)


def pack_groups(nodes: Sequence[SummaryNode], budget: int) -> List[List[SummaryNode]]:
    """Greedy left-to-right packing of consecutive nodes under a token budget."""
    groups: List[List[SummaryNode]] = []
    current: List[SummaryNode] = []
    used = 0
    for node in nodes:
        if current and used + node.token_estimate > budget:
            groups.append(current)
            current, used = [], 0
        current.append(node)
        used += node.token_estimate
    if current:
        groups.append(current)
    return groups


def merge_tree(
    client: ChatClient,
    leaves: Sequence[SummaryNode],
    context_budget_tokens: int,
    dataset_description: str,
    prompts_dir: Optional[str] = None,
) -> MergeResult:
    """
    Merge leaves level by level until one node remains.

    Groups of one pass through without a backend call, so the number of calls
    equals the number of internal nodes. If packing cannot shrink a level the
    nodes are paired, each truncated to half the budget.
    """
    if not leaves:
        raise InvalidInput("merge_tree needs at least one leaf")

    template = load_prompt("recursive-merge", prompts_dir)
    nodes = [_fit(n, context_budget_tokens) for n in leaves]
    all_nodes: List[SummaryNode] = list(nodes)
    calls = 0
    level = 0

    while len(nodes) > 1:
        level += 1
        groups = pack_groups(nodes, context_budget_tokens)
        if len(groups) == len(nodes):
            half = max(1, context_budget_tokens // 2)
            logger.warning(f"Merge level {level}: nodes too large to pack, pairing with truncation")
            nodes = [_fit(n, half) for n in nodes]
            groups = [nodes[i:i + 2] for i in range(0, len(nodes), 2)]

        def merge(item: Tuple[int, List[SummaryNode]]) -> SummaryNode:
            k, group = item
            if len(group) == 1:
                return group[0]
            chunk = CHUNK_SEPARATOR.join(n.text for n in group)
            prompt = template.render(DATASET_DESCRIPTION=dataset_description, CHUNK=chunk)
            try:
                text = client.complete(prompt, key=chunk).strip()
            except BackendError as e:
                logger.warning(f"Merge {level}.{k} failed, keeping concatenated text: {e}")
                text = ""
            merged = SummaryNode(
                f"m{level}.{k}",
                level,
                text or chunk,
                children=[n.node_id for n in group],
                source_windows=[w for n in group for w in n.source_windows],
            )
            return _fit(merged, context_budget_tokens)

        merged_level = client.map(merge, list(enumerate(groups)))
        for group, node in zip(groups, merged_level):
            if len(group) > 1:
                calls += 1
                all_nodes.append(node)
        nodes = merged_level

    return MergeResult(nodes[0], all_nodes, calls)


def _fit(node: SummaryNode, budget: int) -> SummaryNode:
    if node.token_estimate <= budget:
        return node
    logger.warning(f"Node {node.node_id} exceeds the {budget}-token budget and was truncated")
    return SummaryNode(node.node_id, node.level, node.text[: budget * 4], node.children, node.source_windows)


def integrate_transcript(
    client: ChatClient,
    root: SummaryNode,
    transcript_text: Optional[str],
    dataset_description: str,
    prompts_dir: Optional[str] = None,
) -> Tuple[str, str]:
    """
    Produce the final summary and its modality.

    With a transcript the final-integration prompt combines both; without one
    the root gets one more recursive-merge pass.
    """
    if transcript_text and transcript_text.strip():
        modality = MODALITY_VISION_TEXT
        prompt = load_prompt("final-integrate", prompts_dir).render(
            FINAL_SUMMARY_TEXT=root.text,
            TRANSCRIPT_TEXT=transcript_text,
            DATASET_DESCRIPTION=dataset_description,
        )
        key = root.text
    else:
        modality = MODALITY_VISION
        prompt = load_prompt("recursive-merge", prompts_dir).render(
            DATASET_DESCRIPTION=dataset_description,
            CHUNK=root.text,
        )
        key = root.text
    try:
        text = client.complete(prompt, key=key).strip()
    except BackendError as e:
        logger.warning(f"Final summary call failed, using the merged root text: {e}")
        text = ""
    return text or root.text, modality


def tree_to_dict(result: MergeResult, modality: str) -> Dict[str, Any]:
    return {
        "root": result.root.node_id,
        "modality": modality,
        "merge_calls": result.calls,
        "nodes": [n.to_dict() for n in result.nodes],
    }
