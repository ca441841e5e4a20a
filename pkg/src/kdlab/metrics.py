"""Macro-averaged F1 for classification and entity-span micro F1 for tagging."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

Span = tuple[str, int, int]


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    score: float
    metric: str
    per_class: dict[str, ClassScore]
    n_examples: int

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "metric": self.metric,
            "n_examples": self.n_examples,
            "per_class": {
                key: {"precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support}
                for key, c in sorted(self.per_class.items())
            },
        }


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def macro_f1(gold, pred) -> EvalReport:
    """Unweighted mean of per-class F1 over the classes present in gold."""
    gold = list(gold)
    pred = list(pred)
    if not gold:
        raise ValueError("macro_f1: empty input")
    if len(gold) != len(pred):
        raise ValueError(f"macro_f1: {len(gold)} gold labels vs {len(pred)} predictions")
    classes = sorted(set(gold))
    per_class: dict[str, ClassScore] = {}
    total = 0.0
    for cls in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        n_pred = sum(1 for p in pred if p == cls)
        n_gold = sum(1 for g in gold if g == cls)
        precision, recall, f1 = _prf(tp, n_pred, n_gold)
        per_class[str(cls)] = ClassScore(precision, recall, f1, n_gold)
        total += f1
    return EvalReport(score=total / len(classes), metric="macro_f1", per_class=per_class, n_examples=len(gold))


def extract_spans(tags, strict: bool = False) -> set[Span]:
    """Typed (type, start, end) spans from a BIO sequence; end is inclusive.

    Lenient mode (the default) lets an I-X that does not continue a same-type
    span open a new one; strict mode drops such dangling I tokens.
    """
    tags = list(tags)
    spans: set[Span] = set()
    current: tuple[str, int] | None = None

    def close(end: int) -> None:
        nonlocal current
        if current is not None:
            spans.add((current[0], current[1], end))
            current = None

    for i, tag in enumerate(tags):
        if tag == "O":
            close(i - 1)
        elif tag.startswith("B-"):
            close(i - 1)
            current = (tag[2:], i)
        elif tag.startswith("I-"):
            if current is not None and current[0] == tag[2:]:
                continue
            close(i - 1)
            if not strict:
                current = (tag[2:], i)
        else:
            raise ValueError(f"unknown tag {tag!r}")
    close(len(tags) - 1)
    return spans


def span_f1(gold_tags, pred_tags, strict: bool = False) -> EvalReport:
    """Micro precision/recall over exact span matches pooled across the dataset."""
    gold_tags = list(gold_tags)
    pred_tags = list(pred_tags)
    if len(gold_tags) != len(pred_tags):
        raise ValueError(f"span_f1: {len(gold_tags)} gold sequences vs {len(pred_tags)} predicted")
    tp: Counter[str] = Counter()
    n_pred: Counter[str] = Counter()
    n_gold: Counter[str] = Counter()
    for gold_seq, pred_seq in zip(gold_tags, pred_tags):
        if len(list(gold_seq)) != len(list(pred_seq)):
            raise ValueError("span_f1: gold/pred sequence lengths differ")
        gold_spans = extract_spans(gold_seq, strict=strict)
        pred_spans = extract_spans(pred_seq, strict=strict)
        for span in gold_spans & pred_spans:
            tp[span[0]] += 1
        for span in pred_spans:
            n_pred[span[0]] += 1
        for span in gold_spans:
            n_gold[span[0]] += 1
    per_class = {}
    for ent in sorted(set(n_gold) | set(n_pred)):
        precision, recall, f1 = _prf(tp[ent], n_pred[ent], n_gold[ent])
        per_class[ent] = ClassScore(precision, recall, f1, n_gold[ent])
    precision, recall, f1 = _prf(sum(tp.values()), sum(n_pred.values()), sum(n_gold.values()))
    return EvalReport(score=f1, metric="span_f1", per_class=per_class, n_examples=len(gold_tags))


def majority_baseline(gold, seed: int = 0, runs: int = 30) -> EvalReport:
    """Chance-level reference score.

    Classification gold (a list of labels): macro F1 of constantly predicting
    the most frequent class (lowest class id on ties). Tagging gold (a list of
    tag sequences): mean span F1 of `runs` uniform-random tag predictions over
    the tag alphabet observed in gold, deterministic for a given seed.
    """
    gold = list(gold)
    if not gold:
        raise ValueError("majority_baseline: empty gold")
    if isinstance(gold[0], (list, tuple)):
        alphabet = sorted({tag for seq in gold for tag in seq})
        rng = np.random.default_rng(seed)
        scores = []
        for _ in range(runs):
            pred = [[alphabet[i] for i in rng.integers(0, len(alphabet), size=len(seq))] for seq in gold]
            scores.append(span_f1(gold, pred).score)
        mean = float(np.mean(scores))
        return EvalReport(score=mean, metric="span_f1_random_mean", per_class={}, n_examples=len(gold))
    counts = Counter(gold)
    top = max(counts.values())
    majority = min(cls for cls, n in counts.items() if n == top)
    return macro_f1(gold, [majority] * len(gold))
