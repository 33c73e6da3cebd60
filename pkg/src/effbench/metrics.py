"""Task metrics recomputed from dev-set prediction files.

Used both to validate submitted results and as ground truth for the
simulated trainers. All metrics are percentages in [0, 100] and are
permutation-invariant over sentence/example order.

Prediction file formats:
  - token tagging: one token per line, whitespace-separated columns
    ``token gold_tag pred_tag``, blank line between sentences.
  - sentence labeling: tab-separated ``index gold_label pred_label``,
    one example per line, optional header row.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Set, Tuple

from .errors import UsageError
from .types import MetricKind, TaskSpec

Span = Tuple[int, int, str]


def accuracy(predictions: Sequence[str], gold: Sequence[str]) -> float:
    if len(predictions) != len(gold):
        raise UsageError(
            f"length mismatch: {len(predictions)} predictions vs {len(gold)} gold labels"
        )
    if not gold:
        raise UsageError("cannot score an empty label list")
    matches = sum(1 for p, g in zip(predictions, gold) if p == g)
    return 100.0 * matches / len(gold)


def mnli_avg_accuracy(matched_acc: float, mismatched_acc: float) -> float:
    """Mean of the matched and mismatched dev-set accuracies."""
    for value in (matched_acc, mismatched_acc):
        if not (0.0 <= value <= 100.0):
            raise UsageError(f"accuracy out of range [0, 100]: {value!r}")
    return (matched_acc + mismatched_acc) / 2.0


def _split_tag(tag: str) -> Tuple[str, str]:
    if tag == "O":
        return "O", ""
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise UsageError(f"invalid BIO tag: {tag!r}")


def extract_spans(tags: Sequence[str]) -> Set[Span]:
    """Decode BIO tags into (start, end, type) entity spans, inclusive ends.

    Lenient: an I-X with no preceding B-X/I-X of the same type starts a new
    span rather than being an error, matching what real model output needs.
    """
    spans: Set[Span] = set()
    start = -1
    current = ""
    for i, tag in enumerate(tags):
        prefix, etype = _split_tag(tag)
        inside = start >= 0
        continues = prefix == "I" and inside and etype == current
        if inside and not continues:
            spans.add((start, i - 1, current))
            start, current = -1, ""
        if prefix == "B" or (prefix == "I" and not continues):
            start, current = i, etype
    if start >= 0:
        spans.add((start, len(tags) - 1, current))
    return spans


def entity_f1(
    pred_tags: Sequence[Sequence[str]], gold_tags: Sequence[Sequence[str]]
) -> float:
    """Micro-averaged exact-span-match F1 over all sentences, times 100.

    Precision and recall over (start, end, type) spans pooled across
    sentences; 0/0 ratios count as 0 and F1 is 0 when P + R is 0.
    """
    if len(pred_tags) != len(gold_tags):
        raise UsageError(
            f"sentence count mismatch: {len(pred_tags)} pred vs {len(gold_tags)} gold"
        )
    matched = n_pred = n_gold = 0
    for i, (pred, gold) in enumerate(zip(pred_tags, gold_tags)):
        if len(pred) != len(gold):
            raise UsageError(f"sentence {i}: tag length mismatch ({len(pred)} vs {len(gold)})")
        pred_spans = extract_spans(pred)
        gold_spans = extract_spans(gold)
        matched += len(pred_spans & gold_spans)
        n_pred += len(pred_spans)
        n_gold += len(gold_spans)
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gold if n_gold else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def read_conll_predictions(path: Path) -> Tuple[List[List[str]], List[List[str]]]:
    """Read a token-tagging file into (gold_tag_sentences, pred_tag_sentences)."""
    gold_sents: List[List[str]] = []
    pred_sents: List[List[str]] = []
    gold: List[str] = []
    pred: List[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            if gold:
                gold_sents.append(gold)
                pred_sents.append(pred)
                gold, pred = [], []
            continue
        cols = stripped.split()
        if len(cols) < 3:
            raise UsageError(f"{path}:{lineno}: expected 'token gold_tag pred_tag'")
        gold.append(cols[1])
        pred.append(cols[2])
    if gold:
        gold_sents.append(gold)
        pred_sents.append(pred)
    return gold_sents, pred_sents


def read_label_predictions(path: Path) -> Tuple[List[str], List[str]]:
    """Read a sentence-labeling TSV into (gold_labels, pred_labels)."""
    gold: List[str] = []
    pred: List[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.rstrip("\n").split("\t")
        if len(cols) < 3:
            raise UsageError(f"{path}:{lineno}: expected 'index\\tgold_label\\tpred_label'")
        if lineno == 1 and not cols[0].isdigit():
            continue  # header row
        gold.append(cols[1])
        pred.append(cols[2])
    return gold, pred


# file names a task's predictions directory is expected to contain
CONLL_FILE = "dev.conll"
LABELS_FILE = "dev.tsv"
MNLI_MATCHED_FILE = "matched.tsv"
MNLI_MISMATCHED_FILE = "mismatched.tsv"


def recompute_metric(task: TaskSpec, predictions_dir: Path) -> Tuple[float, int]:
    """Recompute a task's metric from its predictions directory.

    Returns (metric_value, example_count), where example_count is the number
    of dev examples the submitted files cover (for coverage reporting).
    """
    predictions_dir = Path(predictions_dir)
    if task.metric_kind is MetricKind.ENTITY_F1:
        gold, pred = read_conll_predictions(_existing(predictions_dir / CONLL_FILE))
        return entity_f1(pred, gold), len(gold)
    if task.metric_kind is MetricKind.ACCURACY:
        gold, pred = read_label_predictions(_existing(predictions_dir / LABELS_FILE))
        return accuracy(pred, gold), len(gold)
    if task.metric_kind is MetricKind.MNLI_AVG_ACCURACY:
        m_gold, m_pred = read_label_predictions(_existing(predictions_dir / MNLI_MATCHED_FILE))
        mm_gold, mm_pred = read_label_predictions(
            _existing(predictions_dir / MNLI_MISMATCHED_FILE)
        )
        value = mnli_avg_accuracy(accuracy(m_pred, m_gold), accuracy(mm_pred, mm_gold))
        return value, len(m_gold) + len(mm_gold)
    raise UsageError(f"unsupported metric kind: {task.metric_kind}")


def _existing(path: Path) -> Path:
    if not path.is_file():
        raise UsageError(f"prediction file not found: {path}")
    return path
