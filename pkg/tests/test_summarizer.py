"""Tests for composite images, recursive merging and transcript integration."""

import io
import math

import pytest
from PIL import Image

from anchorsum.chat import ChatClient, MockChatBackend
from anchorsum.config import ChatBackendConfig, RetryConfig
from anchorsum.errors import BackendError, InvalidInput
from anchorsum.grouping import PATTERN_UNANIMOUS, Window
from anchorsum.summarizer import (
    MODALITY_VISION,
    MODALITY_VISION_TEXT,
    SummaryNode,
    compose_window_image,
    describe_window,
    integrate_transcript,
    merge_tree,
    pack_groups,
    token_estimate,
    tree_to_dict,
)

COLORS = [(255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0)]


class DownBackend(MockChatBackend):
    def complete(self, request):
        raise BackendError("backend down", retryable=False)


def builtin_client(backend_cls=MockChatBackend):
    return ChatClient(backend_cls(ChatBackendConfig()), retry=RetryConfig(attempts=1, backoff_s=0.0))


def leaf(i, tokens):
    return SummaryNode(f"w{i}", 0, "x" * (4 * tokens), source_windows=[i])


def write_tiles(tmp_path, count):
    paths = []
    for i in range(count):
        path = tmp_path / f"tile{i}.png"
        Image.new("RGB", (20, 10), COLORS[i]).save(path)
        paths.append(path)
    return paths


def quadrant_centers(data, tile):
    with Image.open(io.BytesIO(data)) as img:
        assert img.size == (2 * tile, 2 * tile)
        rgb = img.convert("RGB")
        half = tile // 2
        return [rgb.getpixel((col * tile + half, row * tile + half)) for col, row in ((0, 0), (1, 0), (0, 1), (1, 1))]


def close(a, b, tol=24):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


class TestComposite:
    """Test the 2x2 window composite"""

    def test_full_window_layout(self, tmp_path):
        """Test that frames fill quadrants in reading order"""
        centers = quadrant_centers(compose_window_image(write_tiles(tmp_path, 4), tile_size=16), 16)
        assert all(close(c, expected) for c, expected in zip(centers, COLORS))

    def test_partial_window_is_black_padded(self, tmp_path):
        """Test that missing quadrants stay black"""
        centers = quadrant_centers(compose_window_image(write_tiles(tmp_path, 1), tile_size=16), 16)
        assert close(centers[0], COLORS[0])
        assert all(close(c, (0, 0, 0)) for c in centers[1:])

    @pytest.mark.parametrize("count", [0, 5])
    def test_frame_count(self, tmp_path, count):
        """Test that composites need one to four frames"""
        with pytest.raises(InvalidInput):
            compose_window_image([tmp_path / "x.png"] * count)


class TestDescribeWindow:
    """Test window leaves"""

    def test_failed_call_leaves_placeholder(self):
        """Test that a failed description keeps a placeholder leaf"""
        window = Window(3, [0, 1, 2, 3], ["A"] * 4, "A", PATTERN_UNANIMOUS, [0.25] * 4)
        node = describe_window(builtin_client(DownBackend), window, b"jpeg", "cooking")
        assert node.node_id == "w3"
        assert node.text == "[window 3 unavailable]"


class TestMergeTree:
    """Test budgeted recursive merging"""

    def test_pack_groups(self):
        """Test greedy packing of consecutive nodes"""
        nodes = [leaf(i, 3) for i in range(3)]
        assert [[n.node_id for n in g] for g in pack_groups(nodes, 6)] == [["w0", "w1"], ["w2"]]

    def test_single_leaf(self):
        """Test that a single leaf is returned without a call"""
        result = merge_tree(builtin_client(), [leaf(0, 5)], 8000, "cooking")
        assert result.calls == 0
        assert result.root.node_id == "w0"

    def test_empty_input(self):
        """Test that merging needs a leaf"""
        with pytest.raises(InvalidInput):
            merge_tree(builtin_client(), [], 8000, "cooking")

    def test_call_accounting(self, rng):
        """Test calls equal internal nodes and every window reaches the root once"""
        client = builtin_client()
        for n in range(1, 65):
            leaves = [leaf(i, int(t)) for i, t in enumerate(rng.integers(1, 400, size=n))]
            largest = max(node.token_estimate for node in leaves)
            for budget in (2 * largest, 8000):
                result = merge_tree(client, leaves, budget, "cooking")

                internal = [node for node in result.nodes if node.level > 0]
                assert result.calls == len(internal)
                assert result.calls <= n - 1
                assert sorted(result.root.source_windows) == list(range(n))
                assert all(node.token_estimate <= budget for node in result.nodes)
                assert all(len(node.children) >= 2 for node in internal)
                assert result.root.level <= math.ceil(math.log2(n)) + 1

    def test_large_leaves_pair_up(self):
        """Test that 3000-token leaves under an 8000-token budget merge in pairs"""
        leaves = [leaf(i, 3000) for i in range(10)]
        result = merge_tree(builtin_client(), leaves, 8000, "cooking")

        level_one = [node for node in result.nodes if node.level == 1]
        assert len(level_one) == 5
        assert [node.source_windows for node in level_one] == [[0, 1], [2, 3], [4, 5], [6, 7], [8, 9]]
        assert result.root.level >= 2
        assert sorted(result.root.source_windows) == list(range(10))

    def test_tree_dict(self):
        """Test the serialized tree shape"""
        result = merge_tree(builtin_client(), [leaf(0, 2), leaf(1, 2)], 8000, "cooking")
        data = tree_to_dict(result, MODALITY_VISION)
        assert data["root"] == "m1.0"
        assert data["merge_calls"] == 1
        assert [n["node_id"] for n in data["nodes"]] == ["w0", "w1", "m1.0"]

    def test_token_estimate(self):
        """Test the four-characters-per-token estimate"""
        assert [token_estimate(t) for t in ("", "abc", "abcd", "abcde")] == [0, 1, 1, 2]


class TestIntegrateTranscript:
    """Test the final summary and its modality"""

    def test_with_transcript(self):
        """Test that a transcript gives a vision plus text summary"""
        text, modality = integrate_transcript(builtin_client(), leaf(0, 3), "Crack the eggs.", "cooking")
        assert modality == MODALITY_VISION_TEXT
        assert text.startswith("Final summary")

    @pytest.mark.parametrize("transcript", [None, "", "   "])
    def test_without_transcript(self, transcript):
        """Test that a missing or blank transcript gives a vision-only summary"""
        text, modality = integrate_transcript(builtin_client(), leaf(0, 3), transcript, "cooking")
        assert modality == MODALITY_VISION
        assert text.startswith("Merged summary")

    def test_failure_keeps_root_text(self):
        """Test that a failed final call falls back to the merged root"""
        root = leaf(0, 3)
        text, _ = integrate_transcript(builtin_client(DownBackend), root, "Crack the eggs.", "cooking")
        assert text == root.text
