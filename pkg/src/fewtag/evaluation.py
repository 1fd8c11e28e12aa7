"""Span-level F1 with the standard chunking-script semantics, aggregation
across episodes and seeds, and bigram-category accuracy analysis."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import split_label


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Span:
    slot: str
    start: int  # inclusive token index
    end: int  # inclusive token index


def extract_spans(labels: Sequence[str]) -> list[Span]:
    """Extract typed spans with lenient IOB2 reading: a span starts at B-x, or
    at an I-x whose predecessor is neither B-x nor I-x; it ends before O, a
    label of another type, or a fresh B."""
    spans: list[Span] = []
    open_slot: str | None = None
    open_start = 0
    prev = "O"
    for i, lab in enumerate(labels):
        prefix, slot = split_label(lab)
        starts = prefix == "B" or (
            prefix == "I" and prev not in (f"B-{slot}", f"I-{slot}")
        )
        if open_slot is not None and (prefix == "O" or starts or slot != open_slot):
            spans.append(Span(open_slot, open_start, i - 1))
            open_slot = None
        if starts:
            open_slot = slot
            open_start = i
        prev = lab
    if open_slot is not None:
        spans.append(Span(open_slot, open_start, len(labels) - 1))
    return spans


def span_counts(
    predictions: Sequence[Sequence[str]], golds: Sequence[Sequence[str]]
) -> tuple[int, int, int]:
    """(correct, predicted, gold) span counts over aligned sentence lists."""
    if len(predictions) != len(golds):
        raise EvaluationError(
            f"{len(predictions)} predictions vs {len(golds)} gold sequences"
        )
    correct = predicted = gold_total = 0
    for pred, gold in zip(predictions, golds):
        if len(pred) != len(gold):
            raise EvaluationError(
                f"prediction length {len(pred)} vs gold length {len(gold)}"
            )
        pred_spans = set(extract_spans(pred))
        gold_spans = set(extract_spans(gold))
        correct += len(pred_spans & gold_spans)
        predicted += len(pred_spans)
        gold_total += len(gold_spans)
    return correct, predicted, gold_total


def episode_f1(
    predictions: Sequence[Sequence[str]], golds: Sequence[Sequence[str]]
) -> tuple[float, float, float]:
    """Micro-averaged span precision/recall/F1 over one episode's queries,
    in percentage points.

    A predicted span is correct iff slot, start and end all match. An episode
    with no gold spans scores 100 when the prediction is also empty, 0
    otherwise.
    """
    correct, predicted, gold_total = span_counts(predictions, golds)
    if gold_total == 0 and predicted == 0:
        return 100.0, 100.0, 100.0
    p = 100.0 * correct / predicted if predicted else 0.0
    r = 100.0 * correct / gold_total if gold_total else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


@dataclass
class EvalReport:
    """Per-seed episode F1s plus the seed-level aggregation."""

    per_seed_f1s: dict[int, list[float]] = field(default_factory=dict)
    per_seed_mean: dict[int, float] = field(default_factory=dict)
    mean_f1: float = 0.0
    std_f1: float = 0.0


def aggregate(f1s_by_seed: Mapping[int, Sequence[float]]) -> EvalReport:
    """Mean episode F1 per seed, then mean and population std across seeds."""
    if not f1s_by_seed:
        raise EvaluationError("nothing to aggregate")
    per_seed_mean: dict[int, float] = {}
    for seed, f1s in f1s_by_seed.items():
        if not f1s:
            raise EvaluationError(f"seed {seed} has no episode scores")
        per_seed_mean[seed] = sum(f1s) / len(f1s)
    means = list(per_seed_mean.values())
    overall = sum(means) / len(means)
    variance = sum((m - overall) ** 2 for m in means) / len(means)
    return EvalReport(
        per_seed_f1s={s: list(v) for s, v in f1s_by_seed.items()},
        per_seed_mean=per_seed_mean,
        mean_f1=overall,
        std_f1=variance**0.5,
    )


# gold bigram categories by abstract tags; B-B and I-B are reported together.
# O-I only occurs in leniently-labeled data and keeps the partition total.
BIGRAM_CATEGORIES = ("O-O", "O-B", "B-O", "I-O", "I-B/B-B", "B-I", "I-I", "O-I")


def _bigram_category(prev: str, cur: str) -> str:
    p = split_label(prev)[0]
    c = split_label(cur)[0]
    if (p, c) in (("B", "B"), ("I", "B")):
        return "I-B/B-B"
    return f"{p}-{c}"


def bigram_accuracy(
    predictions: Sequence[Sequence[str]], golds: Sequence[Sequence[str]]
) -> dict[str, dict[str, float]]:
    """Accuracy and proportion per gold-bigram category.

    A bigram counts as correct iff both of its positions are predicted
    exactly. Proportions are over all adjacent gold pairs and sum to 100.
    """
    if len(predictions) != len(golds):
        raise EvaluationError(
            f"{len(predictions)} predictions vs {len(golds)} gold sequences"
        )
    totals: Counter = Counter()
    corrects: Counter = Counter()
    for pred, gold in zip(predictions, golds):
        if len(pred) != len(gold):
            raise EvaluationError(
                f"prediction length {len(pred)} vs gold length {len(gold)}"
            )
        for t in range(1, len(gold)):
            cat = _bigram_category(gold[t - 1], gold[t])
            totals[cat] += 1
            if pred[t - 1] == gold[t - 1] and pred[t] == gold[t]:
                corrects[cat] += 1
    grand_total = sum(totals.values())
    out: dict[str, dict[str, float]] = {}
    for cat in BIGRAM_CATEGORIES:
        if totals[cat] == 0:
            continue
        out[cat] = {
            "count": float(totals[cat]),
            "correct": float(corrects[cat]),
            "accuracy": 100.0 * corrects[cat] / totals[cat],
            "proportion": 100.0 * totals[cat] / grand_total if grand_total else 0.0,
        }
    return out
