"""
Evaluation harness for anchorsum

Rank correlations of predicted frame importance against human annotations,
lexical overlap of summary text against references, and the rubric-weighted
judge score.
"""

import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from nltk.translate.bleu_score import brevity_penalty, closest_ref_length, modified_precision
from rouge_score import rouge_scorer, tokenizers
from scipy import stats

from anchorsum.chat import ChatClient
from anchorsum.errors import InvalidInput, ParseError
from anchorsum.template_parser import load_prompt

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_UNDEFINED = "undefined"

JUDGE_FIELDS = ("factual_accuracy", "detail", "specificity", "completeness", "repetition")


@dataclass(frozen=True)
class Correlation:
    value: float
    status: str = STATUS_OK

    @property
    def defined(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class JudgeScores:
    factual_accuracy: int
    detail: int
    specificity: int
    completeness: int
    repetition: int

    def __post_init__(self):
        for name in JUDGE_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not 1 <= value <= 5:
                raise InvalidInput(f"Judge score {name} must be an integer in 1..5, got {value!r}")


@dataclass
class AnnotationMatrix:
    """Users x frames importance annotations."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.size == 0:
            raise InvalidInput("Annotation matrix must be a non-empty users x frames matrix")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInput("Annotation matrix contains non-finite values")

    @property
    def n_users(self) -> int:
        return int(self.scores.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.scores.shape[1])


# Rank correlation

def _check_pair(pred: Sequence[float], truth: Sequence[float]) -> None:
    if len(pred) != len(truth) or len(pred) < 2:
        raise InvalidInput(f"Correlation needs equal lengths >= 2, got {len(pred)} and {len(truth)}")


def _correlation(fn, pred: Sequence[float], truth: Sequence[float]) -> Correlation:
    _check_pair(pred, truth)
    if len(set(pred)) == 1 or len(set(truth)) == 1:
        return Correlation(math.nan, STATUS_UNDEFINED)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        value = float(fn(pred, truth)[0])
    if math.isnan(value):
        return Correlation(math.nan, STATUS_UNDEFINED)
    return Correlation(min(1.0, max(-1.0, value)))


def kendall_tau(pred: Sequence[float], truth: Sequence[float]) -> Correlation:
    """Tie-corrected Kendall tau-b; constant input is undefined."""
    return _correlation(stats.kendalltau, list(pred), list(truth))


def spearman_rho(pred: Sequence[float], truth: Sequence[float]) -> Correlation:
    """Pearson correlation of average ranks; constant input is undefined."""
    return _correlation(stats.spearmanr, list(pred), list(truth))


def evaluate_ranking(pred: Sequence[float], annotations: AnnotationMatrix) -> Dict[str, Any]:
    """
    Per-user and mean tau/rho of predicted scores against each annotator.

    Mismatched lengths are truncated to the shorter one. The pooled values
    compare against the mean annotation.
    """
    n = min(len(pred), annotations.n_frames)
    if n != len(pred) or n != annotations.n_frames:
        logger.warning(f"Frame count mismatch: {len(pred)} predicted vs {annotations.n_frames} annotated; truncating to {n}")
    pred = list(pred)[:n]
    truth = annotations.scores[:, :n]

    per_user = []
    for user, row in enumerate(truth):
        tau = kendall_tau(pred, row.tolist())
        rho = spearman_rho(pred, row.tolist())
        per_user.append({
            "user": user,
            "tau": _json_float(tau.value),
            "rho": _json_float(rho.value),
            "tau_status": tau.status,
            "rho_status": rho.status,
        })

    pooled_tau = kendall_tau(pred, truth.mean(axis=0).tolist())
    pooled_rho = spearman_rho(pred, truth.mean(axis=0).tolist())
    return {
        "n_frames": n,
        "n_users": annotations.n_users,
        "per_user": per_user,
        "mean_tau": _mean([u["tau"] for u in per_user]),
        "mean_rho": _mean([u["rho"] for u in per_user]),
        "pooled_tau": _json_float(pooled_tau.value),
        "pooled_rho": _json_float(pooled_rho.value),
    }


def _json_float(value: float) -> Optional[float]:
    return None if math.isnan(value) else value


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    defined = [v for v in values if v is not None]
    return math.fsum(defined) / len(defined) if defined else None


def load_annotations(path: str) -> AnnotationMatrix:
    """
    Load annotations from TSV (``frame<TAB>user1..userK`` per row) or JSON.

    JSON is either a users x frames list of lists or ``{"scores": [...]}``.
    """
    annotation_path = Path(path)
    if not annotation_path.exists():
        raise FileNotFoundError(f"Annotations not found: {path}")

    if annotation_path.suffix.lower() == ".json":
        with open(annotation_path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON annotations: {e.msg}", e.lineno)
        rows = data.get("scores") if isinstance(data, dict) else data
        if not isinstance(rows, list) or not rows or len({len(r) for r in rows}) != 1:
            raise ParseError("annotation rows must be a non-empty rectangular list")
        return AnnotationMatrix(np.array(rows, dtype=np.float64))

    frames = []
    with open(annotation_path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            try:
                values = [float(v) for v in fields[1:]]
            except ValueError:
                if line_no == 1:
                    continue
                raise ParseError(f"non-numeric annotation value in {line.strip()!r}", line_no)
            if frames and len(values) != len(frames[0]):
                raise ParseError(f"expected {len(frames[0])} users, found {len(values)}", line_no)
            frames.append(values)
    if not frames or not frames[0]:
        raise ParseError("no annotation rows found")
    return AnnotationMatrix(np.array(frames, dtype=np.float64).T)


# Lexical overlap

def tokenize(text: str) -> List[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return re.sub(r"[^\w\s]", " ", text.lower()).split()


class _PretokenizedTokenizer(tokenizers.Tokenizer):
    def tokenize(self, text):
        return text.split()


_ROUGE = rouge_scorer.RougeScorer(["rougeL"], tokenizer=_PretokenizedTokenizer())


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """LCS-based precision, recall and F1 over token lists."""
    score = _ROUGE.score(" ".join(reference), " ".join(candidate))["rougeL"]
    return RougeScore(score.precision, score.recall, score.fmeasure)


def bleu(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
    smoothing: bool = True,
) -> float:
    """
    Sentence BLEU with brevity penalty.

    The order is capped at the candidate length. With smoothing, a zero
    n-gram match count over ``total`` candidate n-grams counts as
    1 / (total + 1).
    """
    if not references:
        raise InvalidInput("BLEU needs at least one reference")
    hypothesis = list(candidate)
    refs = [list(r) for r in references]
    if not hypothesis:
        return 0.0

    order = min(max_n, len(hypothesis))
    log_sum = 0.0
    for n in range(1, order + 1):
        p = float(modified_precision(refs, hypothesis, n))
        if p == 0.0:
            if not smoothing:
                return 0.0
            total = len(hypothesis) - n + 1
            p = 1.0 / (total + 1)
        log_sum += math.log(p)

    bp = brevity_penalty(closest_ref_length(refs, len(hypothesis)), len(hypothesis))
    return bp * math.exp(log_sum / order)


def evaluate_text(candidate: str, references: Sequence[str], max_n: int = 4, smoothing: bool = True) -> Dict[str, Any]:
    """BLEU over all references and the best ROUGE-L over any single reference."""
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]
    rouge = max((rouge_l(cand, r) for r in refs), key=lambda s: s.f1)
    return {"bleu": bleu(cand, refs, max_n, smoothing), "rouge_l": asdict(rouge)}


# Judge

def llm_judge_score(j: JudgeScores) -> float:
    """(2 * factual_accuracy + detail + specificity + completeness + repetition) / 30."""
    return (2 * j.factual_accuracy + j.detail + j.specificity + j.completeness + j.repetition) / 30


def parse_judge_reply(reply: str) -> JudgeScores:
    match = re.search(r"\{.*\}", reply, re.DOTALL)
    if not match:
        raise ParseError("judge reply carries no JSON object")
    try:
        data = json.loads(match.group(0))
    except json.JSONDecodeError as e:
        raise ParseError(f"judge reply is not valid JSON: {e.msg}")
    missing = [k for k in JUDGE_FIELDS if k not in data]
    if missing:
        raise ParseError(f"judge reply lacks {', '.join(missing)}")
    return JudgeScores(**{k: data[k] for k in JUDGE_FIELDS})


def judge_summary(client: ChatClient, candidate: str, reference: str, prompts_dir: Optional[str] = None) -> JudgeScores:
    prompt = load_prompt("judge-rubric", prompts_dir).render(CANDIDATE=candidate, REFERENCE=reference)
    return parse_judge_reply(client.complete(prompt, key=candidate))


# External evaluators (METEOR, BERTScore, ...)

def eval_pairs_jsonl(run_id: str, candidate: str, references: Sequence[str]) -> str:
    record = {"id": run_id, "candidate": candidate, "references": list(references)}
    return json.dumps(record, ensure_ascii=False) + "\n"


def read_external_scores(path: Path) -> Optional[Dict[str, Any]]:
    if not Path(path).exists():
        return None
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ParseError(f"{path} must contain a JSON object")
    return data
