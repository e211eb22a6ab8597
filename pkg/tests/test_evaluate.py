"""
Tests for the evaluation metrics

Rank correlations, ROUGE-L and BLEU are checked against small independent
implementations on seeded random instances.
"""

import itertools
import json
import math
from collections import Counter

import numpy as np
import pytest

from anchorsum.errors import InvalidInput, ParseError
from anchorsum.evaluate import (
    STATUS_UNDEFINED,
    AnnotationMatrix,
    JudgeScores,
    bleu,
    evaluate_ranking,
    evaluate_text,
    kendall_tau,
    llm_judge_score,
    load_annotations,
    parse_judge_reply,
    rouge_l,
    spearman_rho,
    tokenize,
)

TOLERANCE = 1e-9


def tau_b_oracle(x, y):
    concordant = discordant = ties_x = ties_y = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0:
            ties_x += 1
        if dy == 0:
            ties_y += 1
        if dx * dy > 0:
            concordant += 1
        elif dx * dy < 0:
            discordant += 1
    pairs = len(x) * (len(x) - 1) // 2
    return (concordant - discordant) / math.sqrt((pairs - ties_x) * (pairs - ties_y))


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def rho_oracle(x, y):
    rx, ry = np.array(average_ranks(x)), np.array(average_ranks(y))
    rx, ry = rx - rx.mean(), ry - ry.mean()
    return float((rx * ry).sum() / math.sqrt((rx ** 2).sum() * (ry ** 2).sum()))


def lcs_length(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            table[i + 1][j + 1] = table[i][j] + 1 if x == y else max(table[i][j + 1], table[i + 1][j])
    return table[-1][-1]


def bleu_oracle(candidate, references, max_n=4):
    order = min(max_n, len(candidate))
    log_sum = 0.0
    for n in range(1, order + 1):
        grams = Counter(tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1))
        clip = Counter()
        for ref in references:
            for gram, count in Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)).items():
                clip[gram] = max(clip[gram], count)
        matched = sum(min(count, clip[gram]) for gram, count in grams.items())
        total = sum(grams.values())
        log_sum += math.log(matched / total if matched else 1.0 / (total + 1))
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / order)


def random_tokens(rng, vocab=6):
    return [f"w{int(t)}" for t in rng.integers(0, vocab, size=int(rng.integers(1, 15)))]


class TestRankCorrelation:
    """Test Kendall tau-b and Spearman rho"""

    def test_identical_and_reversed(self):
        """Test the closed-form extremes"""
        values = [0.1, 0.4, 0.2, 0.9, 0.5]
        reversed_values = [-v for v in values]
        assert kendall_tau(values, values).value == pytest.approx(1.0, abs=TOLERANCE)
        assert spearman_rho(values, values).value == pytest.approx(1.0, abs=TOLERANCE)
        assert kendall_tau(values, reversed_values).value == pytest.approx(-1.0, abs=TOLERANCE)
        assert spearman_rho(values, reversed_values).value == pytest.approx(-1.0, abs=TOLERANCE)

    def test_constant_input_is_undefined(self):
        """Test that a constant ranking has no correlation"""
        result = kendall_tau([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])
        assert result.status == STATUS_UNDEFINED
        assert math.isnan(result.value)
        assert not spearman_rho([0.1, 0.2, 0.3], [2.0, 2.0, 2.0]).defined

    def test_length_checks(self):
        """Test that lengths must match and be at least 2"""
        with pytest.raises(InvalidInput):
            kendall_tau([1.0], [1.0])
        with pytest.raises(InvalidInput):
            spearman_rho([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_matches_oracles(self):
        """Test tau-b and rho against pairwise and rank oracles with ties"""
        rng = np.random.default_rng(11)
        checked = 0
        while checked < 500:
            n = int(rng.integers(2, 30))
            x = rng.integers(0, 5, size=n).astype(float).tolist()
            y = rng.integers(0, 5, size=n).astype(float).tolist()
            if len(set(x)) == 1 or len(set(y)) == 1:
                continue
            assert abs(kendall_tau(x, y).value - tau_b_oracle(x, y)) <= TOLERANCE
            assert abs(spearman_rho(x, y).value - rho_oracle(x, y)) <= TOLERANCE
            checked += 1

    def test_invariant_under_increasing_transform(self):
        """Test that strictly increasing transforms of either input leave tau and rho unchanged"""
        rng = np.random.default_rng(12)
        checked = 0
        while checked < 200:
            n = int(rng.integers(2, 30))
            x = rng.integers(0, 6, size=n).astype(float).tolist()
            y = rng.normal(size=n).tolist()
            if len(set(x)) == 1:
                continue
            tau, rho = kendall_tau(x, y).value, spearman_rho(x, y).value
            x_t = [math.exp(v) for v in x]
            y_t = [v ** 3 + 2.0 * v for v in y]
            assert kendall_tau(x_t, y).value == pytest.approx(tau, abs=TOLERANCE)
            assert spearman_rho(x_t, y).value == pytest.approx(rho, abs=TOLERANCE)
            assert kendall_tau(x, y_t).value == pytest.approx(tau, abs=TOLERANCE)
            assert spearman_rho(x, y_t).value == pytest.approx(rho, abs=TOLERANCE)
            checked += 1

    def test_independent_inputs_near_zero(self):
        """Test that tau of independent random rankings is close to zero"""
        rng = np.random.default_rng(13)
        x = rng.random(1000).tolist()
        y = rng.random(1000).tolist()
        assert abs(kendall_tau(x, y).value) < 0.1


class TestEvaluateRanking:
    """Test per-annotator and pooled correlations"""

    def test_per_user_and_mean(self):
        """Test that each annotator is scored and the mean skips undefined users"""
        annotations = AnnotationMatrix([[1, 2, 3, 4], [4, 3, 2, 1], [2, 2, 2, 2]])
        report = evaluate_ranking([0.1, 0.2, 0.3, 0.4], annotations)

        assert [u["tau"] for u in report["per_user"]][:2] == pytest.approx([1.0, -1.0], abs=TOLERANCE)
        assert report["per_user"][2]["tau"] is None
        assert report["per_user"][2]["tau_status"] == STATUS_UNDEFINED
        assert report["mean_tau"] == pytest.approx(0.0, abs=TOLERANCE)
        assert report["n_users"] == 3

    def test_truncates_to_shorter(self):
        """Test that mismatched lengths are truncated"""
        report = evaluate_ranking([0.1, 0.2, 0.3, 0.4, 0.5], AnnotationMatrix([[1, 2, 3]]))
        assert report["n_frames"] == 3
        assert report["pooled_rho"] == pytest.approx(1.0, abs=TOLERANCE)


class TestAnnotations:
    """Test annotation file loading"""

    def test_tsv_with_header(self, tmp_path):
        """Test frame-per-row TSV with one column per user"""
        path = tmp_path / "annotations.tsv"
        path.write_text("frame\tu1\tu2\n0\t1\t3\n1\t2\t2\n2\t3\t1\n")
        matrix = load_annotations(str(path))
        assert matrix.scores.tolist() == [[1.0, 2.0, 3.0], [3.0, 2.0, 1.0]]

    def test_json_object(self, tmp_path):
        """Test the users x frames JSON form"""
        path = tmp_path / "annotations.json"
        path.write_text(json.dumps({"scores": [[1, 2], [2, 1]]}))
        assert load_annotations(str(path)).n_users == 2

    def test_ragged_tsv(self, tmp_path):
        """Test that a row with a different user count is rejected"""
        path = tmp_path / "annotations.tsv"
        path.write_text("0\t1\t2\n1\t3\n")
        with pytest.raises(ParseError) as exc_info:
            load_annotations(str(path))
        assert exc_info.value.line == 2

    def test_missing_file(self, tmp_path):
        """Test that missing annotations raise FileNotFoundError"""
        with pytest.raises(FileNotFoundError):
            load_annotations(str(tmp_path / "none.tsv"))


class TestLexicalOverlap:
    """Test ROUGE-L and BLEU"""

    def test_rouge_hand_example(self):
        """Test the LCS example a b c d against a c d"""
        score = rouge_l("a b c d".split(), "a c d".split())
        assert score.precision == 0.75
        assert score.recall == 1.0
        assert score.f1 == pytest.approx(6 / 7, abs=TOLERANCE)

    def test_identical_and_disjoint(self):
        """Test the extremes of both metrics"""
        tokens = tokenize("Crack the eggs, then whisk them.")
        assert rouge_l(tokens, tokens).f1 == 1.0
        assert bleu(tokens, [tokens]) == pytest.approx(1.0)
        assert rouge_l(["a", "b"], ["c", "d"]).f1 == 0.0
        assert bleu(["a", "b"], [["c", "d"]], smoothing=False) == 0.0

    def test_tokenize(self):
        """Test lowercasing and punctuation stripping"""
        assert tokenize("Heat the PAN, then fry!") == ["heat", "the", "pan", "then", "fry"]

    def test_bleu_needs_reference(self):
        """Test that BLEU without references is rejected"""
        with pytest.raises(InvalidInput):
            bleu(["a"], [])

    def test_matches_oracles(self):
        """Test ROUGE-L and smoothed BLEU against direct computation"""
        rng = np.random.default_rng(13)
        for _ in range(500):
            candidate = random_tokens(rng)
            references = [random_tokens(rng) for _ in range(int(rng.integers(1, 4)))]

            lcs = lcs_length(candidate, references[0])
            p, r = lcs / len(candidate), lcs / len(references[0])
            f1 = 2 * p * r / (p + r) if p + r else 0.0
            score = rouge_l(candidate, references[0])
            assert abs(score.precision - p) <= TOLERANCE
            assert abs(score.recall - r) <= TOLERANCE
            assert abs(score.f1 - f1) <= TOLERANCE

            assert abs(bleu(candidate, references) - bleu_oracle(candidate, references)) <= TOLERANCE

    def test_evaluate_text_takes_best_rouge(self):
        """Test that ROUGE-L reports the best single reference"""
        report = evaluate_text("whisk the eggs", ["fry onions", "Whisk the eggs."])
        assert report["rouge_l"]["f1"] == 1.0
        assert 0.0 < report["bleu"] <= 1.0


class TestJudge:
    """Test the rubric-weighted judge score"""

    def test_exhaustive_weighting(self):
        """Test the weighted mean on every rubric combination"""
        for f, d, s, c, r in itertools.product(range(1, 6), repeat=5):
            expected = (2 * f + d + s + c + r) / 30
            assert llm_judge_score(JudgeScores(f, d, s, c, r)) == pytest.approx(expected, abs=TOLERANCE)

    def test_bounds(self):
        """Test the lowest and highest scores"""
        assert llm_judge_score(JudgeScores(5, 5, 5, 5, 5)) == 1.0
        assert llm_judge_score(JudgeScores(1, 1, 1, 1, 1)) == pytest.approx(0.2)

    @pytest.mark.parametrize("values", [(0, 3, 3, 3, 3), (6, 3, 3, 3, 3), (3.5, 3, 3, 3, 3), (True, 3, 3, 3, 3)])
    def test_out_of_range(self, values):
        """Test that ratings must be integers in 1..5"""
        with pytest.raises(InvalidInput):
            JudgeScores(*values)

    def test_parse_reply(self):
        """Test that the JSON object is extracted from surrounding text"""
        reply = 'Scores: {"factual_accuracy": 5, "detail": 4, "specificity": 3, "completeness": 2, "repetition": 1}'
        assert parse_judge_reply(reply) == JudgeScores(5, 4, 3, 2, 1)

    @pytest.mark.parametrize("reply", ["no json here", '{"detail": 4}', "{not json}"])
    def test_bad_reply(self, reply):
        """Test that malformed judge replies raise ParseError"""
        with pytest.raises(ParseError):
            parse_judge_reply(reply)
