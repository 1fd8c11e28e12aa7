"""Independent span-F1 oracle: a port of the classic chunking-script counting.

Unlike the engine (which extracts span sets and intersects), this walks the
gold and predicted tag streams in lockstep, detecting chunk starts and ends
from adjacent-tag patterns, and counts a chunk correct when both streams
close a same-typed chunk they opened together. IOB2 tags only, with the
script's lenient reading (I-x after O opens a chunk).
"""

from __future__ import annotations

from collections import defaultdict


def _split(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, _, slot = tag.partition("-")
    return prefix, slot


def _is_chunk_end(prev: str, cur: str) -> bool:
    p1, t1 = _split(prev)
    p2, t2 = _split(cur)
    if p1 == "O":
        return False
    if p2 == "O":
        return True
    if t1 != t2:
        return True
    return p2 == "B"


def _is_chunk_start(prev: str, cur: str) -> bool:
    p1, t1 = _split(prev)
    p2, t2 = _split(cur)
    if p2 == "O":
        return False
    if p1 == "O":
        return True
    if t1 != t2:
        return True
    return p2 == "B"


def count_chunks(gold_sentences, pred_sentences):
    """(correct, gold, predicted) chunk counts over sentence-aligned tags."""
    correct = defaultdict(int)
    gold_chunks = defaultdict(int)
    pred_chunks = defaultdict(int)
    for gold_seq, pred_seq in zip(gold_sentences, pred_sentences):
        prev_gold, prev_pred = "O", "O"
        in_correct: str | None = None
        for gold_tag, pred_tag in zip(gold_seq, pred_seq):
            _, gold_type = _split(gold_tag)
            _, pred_type = _split(pred_tag)
            if in_correct is not None:
                gold_end = _is_chunk_end(prev_gold, gold_tag)
                pred_end = _is_chunk_end(prev_pred, pred_tag)
                if gold_end and pred_end:
                    correct[in_correct] += 1
                    in_correct = None
                elif gold_end != pred_end or gold_type != pred_type:
                    in_correct = None
            gold_start = _is_chunk_start(prev_gold, gold_tag)
            pred_start = _is_chunk_start(prev_pred, pred_tag)
            if gold_start and pred_start and gold_type == pred_type:
                in_correct = gold_type
            if gold_start:
                gold_chunks[gold_type] += 1
            if pred_start:
                pred_chunks[pred_type] += 1
            prev_gold, prev_pred = gold_tag, pred_tag
        if in_correct is not None:
            correct[in_correct] += 1
    return (
        sum(correct.values()),
        sum(gold_chunks.values()),
        sum(pred_chunks.values()),
    )


def score(gold_sentences, pred_sentences) -> tuple[float, float, float]:
    """Precision, recall, F1 in percent, the way the script computes them."""
    n_correct, n_gold, n_pred = count_chunks(gold_sentences, pred_sentences)
    precision = 100.0 * n_correct / n_pred if n_pred else 0.0
    recall = 100.0 * n_correct / n_gold if n_gold else 0.0
    f1 = (
        2 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1


def printed(gold_sentences, pred_sentences) -> tuple[float, float, float]:
    """Scores rounded to the script's two printed decimals."""
    p, r, f1 = score(gold_sentences, pred_sentences)
    return round(p, 2), round(r, 2), round(f1, 2)
