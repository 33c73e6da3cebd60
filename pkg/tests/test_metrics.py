import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from effbench.errors import UsageError
from effbench.metrics import (
    accuracy,
    entity_f1,
    extract_spans,
    mnli_avg_accuracy,
    read_conll_predictions,
    read_label_predictions,
    recompute_metric,
)
from effbench.types import MetricKind

from conftest import make_task
from oracles import oracle_f1, oracle_spans

TAG_ALPHABET = ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"]


def test_oracle_spans_agree_on_the_worked_examples():
    assert oracle_spans(["B-PER", "I-PER", "O"]) == {(0, 1, "PER")}
    assert oracle_spans(["I-LOC", "B-LOC", "I-ORG"]) == {(0, 0, "LOC"), (1, 1, "LOC"), (2, 2, "ORG")}


# ---------------------------------------------------------------------------
# accuracy


def test_identical_predictions_score_100():
    assert accuracy(["a", "b", "c"], ["a", "b", "c"]) == 100.0


def test_half_matching_scores_50():
    assert accuracy(["a", "x", "b", "y"], ["a", "b", "b", "b"]) == 50.0


def test_sst2_sized_count_oracle():
    n, matches = 872, 785
    gold = ["1"] * n
    pred = ["1"] * matches + ["0"] * (n - matches)
    assert accuracy(pred, gold) == pytest.approx(100.0 * 785 / 872)
    assert accuracy(pred, gold) >= 90.0  # clears the cutoff


def test_accuracy_input_errors():
    with pytest.raises(UsageError, match="mismatch"):
        accuracy(["a"], ["a", "b"])
    with pytest.raises(UsageError, match="empty"):
        accuracy([], [])


# ---------------------------------------------------------------------------
# mnli average


@pytest.mark.parametrize(
    "matched, mismatched, expected",
    [(84.0, 86.0, 85.0), (85.0, 85.0, 85.0), (91.85, 91.85, 91.85), (0.0, 100.0, 50.0)],
)
def test_mnli_average(matched, mismatched, expected):
    assert mnli_avg_accuracy(matched, mismatched) == expected


def test_mnli_average_rejects_out_of_range():
    with pytest.raises(UsageError, match="range"):
        mnli_avg_accuracy(101.0, 50.0)
    with pytest.raises(UsageError, match="range"):
        mnli_avg_accuracy(50.0, -0.1)


# ---------------------------------------------------------------------------
# span extraction


@pytest.mark.parametrize(
    "tags, expected",
    [
        (["B-PER", "I-PER", "O"], {(0, 1, "PER")}),
        (["O", "O", "O"], set()),
        (["I-LOC", "B-LOC", "I-ORG"], {(0, 0, "LOC"), (1, 1, "LOC"), (2, 2, "ORG")}),
        (["B-PER", "B-PER"], {(0, 0, "PER"), (1, 1, "PER")}),
        (["I-PER", "I-PER"], {(0, 1, "PER")}),
        (["B-LOC", "I-PER"], {(0, 0, "LOC"), (1, 1, "PER")}),
        ([], set()),
    ],
)
def test_lenient_span_decoding(tags, expected):
    assert extract_spans(tags) == expected


def test_invalid_tag_rejected():
    with pytest.raises(UsageError, match="invalid BIO tag"):
        extract_spans(["B-PER", "X-LOC"])
    with pytest.raises(UsageError, match="invalid BIO tag"):
        extract_spans(["B"])


# ---------------------------------------------------------------------------
# entity F1


def test_perfect_match_scores_100():
    tags = [["B-PER", "I-PER", "O"], ["O", "B-LOC", "O"]]
    assert entity_f1(tags, tags) == 100.0


def test_no_predicted_entities_scores_0():
    gold = [["B-PER", "O"]]
    pred = [["O", "O"]]
    assert entity_f1(pred, gold) == 0.0


def test_half_precision_half_recall_scores_50():
    gold = [["B-PER", "I-PER", "O", "B-LOC", "O"]]
    pred = [["B-PER", "I-PER", "O", "O", "B-LOC"]]
    # one of two predicted spans matches: P = R = 1/2 -> F1 = 50
    assert entity_f1(pred, gold) == 50.0


def test_alignment_errors():
    with pytest.raises(UsageError, match="sentence count"):
        entity_f1([["O"]], [["O"], ["O"]])
    with pytest.raises(UsageError, match="length mismatch"):
        entity_f1([["O", "O"]], [["O"]])


def test_f1_agrees_with_brute_force_oracle_on_1000_random_sequences():
    rng = random.Random(20240917)
    for _ in range(1000):
        n_sents = rng.randint(1, 4)
        gold, pred = [], []
        for _ in range(n_sents):
            length = rng.randint(0, 12)
            gold.append([rng.choice(TAG_ALPHABET) for _ in range(length)])
            pred.append([rng.choice(TAG_ALPHABET) for _ in range(length)])
        assert entity_f1(pred, gold) == pytest.approx(oracle_f1(pred, gold))


_sentences = st.lists(
    st.lists(st.sampled_from(TAG_ALPHABET), min_size=0, max_size=10), min_size=1, max_size=5
)


@given(_sentences, st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_f1_is_symmetric_and_permutation_invariant(gold, rnd):
    pred = [[rnd.choice(TAG_ALPHABET) for _ in sent] for sent in gold]
    forward = entity_f1(pred, gold)
    assert forward == pytest.approx(entity_f1(gold, pred))
    assert 0.0 <= forward <= 100.0
    order = list(range(len(gold)))
    rnd.shuffle(order)
    shuffled = entity_f1([pred[i] for i in order], [gold[i] for i in order])
    assert forward == pytest.approx(shuffled)


# ---------------------------------------------------------------------------
# prediction files


def test_conll_file_roundtrip(tmp_path):
    content = (
        "John B-PER B-PER\n"
        "lives O O\n"
        "in O O\n"
        "Boston B-LOC O\n"
        "\n"
        "EU B-ORG B-ORG\n"
        "\n"
    )
    path = tmp_path / "dev.conll"
    path.write_text(content)
    gold, pred = read_conll_predictions(path)
    assert gold == [["B-PER", "O", "O", "B-LOC"], ["B-ORG"]]
    assert pred == [["B-PER", "O", "O", "O"], ["B-ORG"]]
    # both predicted spans are correct but the LOC span is missed: P=1, R=2/3
    assert entity_f1(pred, gold) == pytest.approx(80.0)


def test_label_file_with_and_without_header(tmp_path):
    with_header = tmp_path / "a.tsv"
    with_header.write_text("index\tgold_label\tpred_label\n0\tpos\tpos\n1\tneg\tpos\n")
    bare = tmp_path / "b.tsv"
    bare.write_text("0\tpos\tpos\n1\tneg\tpos\n")
    assert read_label_predictions(with_header) == read_label_predictions(bare) == (
        ["pos", "neg"],
        ["pos", "pos"],
    )


def test_malformed_rows_are_reported(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("0\tpos\n")
    with pytest.raises(UsageError, match="bad.tsv:1"):
        read_label_predictions(path)


def test_recompute_dispatch_mnli(tmp_path):
    task = make_task(name="beta", metric_kind=MetricKind.MNLI_AVG_ACCURACY, cutoff=85.0)
    (tmp_path / "matched.tsv").write_text("0\te\te\n1\tn\te\n")  # 50%
    (tmp_path / "mismatched.tsv").write_text("0\te\te\n1\tn\tn\n")  # 100%
    value, examples = recompute_metric(task, tmp_path)
    assert value == 75.0
    assert examples == 4


def test_recompute_missing_file_reports_path(tmp_path):
    task = make_task(metric_kind=MetricKind.ACCURACY)
    with pytest.raises(UsageError, match="dev.tsv"):
        recompute_metric(task, tmp_path)
