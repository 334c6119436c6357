"""Content categories for ads: keyword labeling, prediction ingestion, and scoring."""

from __future__ import annotations

import logging
import random
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .model import CATEGORIES, AdCategory, ClassScores, PRF1Report

log = logging.getLogger(__name__)

TIE_PRIORITY = (AdCategory.ALCOHOL, AdCategory.GAMBLING, AdCategory.FOOD)

_NON_WORD = re.compile(r"[\W_]+")


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(_NON_WORD.sub(" ", text.casefold()).split())


def _count_phrase(tokens, phrase) -> int:
    k = len(phrase)
    if k == 0 or k > len(tokens):
        return 0
    return sum(1 for i in range(len(tokens) - k + 1) if tokens[i : i + k] == phrase)


def keyword_label(text: str, lexicons, priority=TIE_PRIORITY) -> AdCategory:
    """Category with the most whole-phrase hits in ``text``; Other when nothing hits."""
    tokens = tokenize(text)
    hits = {}
    for lex in lexicons:
        phrases = {tokenize(p) for p in lex.phrases}
        hits[lex.category] = sum(_count_phrase(tokens, p) for p in phrases)
    best = max(hits.values(), default=0)
    if best == 0:
        return AdCategory.OTHER
    for cat in priority:
        if hits.get(cat, 0) == best:
            return cat
    return next(c for c, n in hits.items() if n == best)


def apply_labels(ads, predictions: dict | None = None, texts: dict | None = None, lexicons=None):
    """Set ``category`` on every ad from a prediction map or from OCR texts + lexicons.

    Ads without an entry become Other; their ids are returned alongside the
    labeled ads.
    """
    if (predictions is None) == (texts is None):
        raise ValueError("pass exactly one of predictions or texts")
    if texts is not None and not lexicons:
        raise ValueError("keyword labeling needs lexicons")
    out = []
    missing = []
    for ad in ads:
        if predictions is not None:
            cat = predictions.get(ad.ad_id)
        else:
            text = texts.get(ad.ad_id)
            cat = None if text is None else keyword_label(text, lexicons)
        if cat is None:
            missing.append(ad.ad_id)
            log.warning("no label source for %s; defaulting to other", ad.ad_id)
            cat = AdCategory.OTHER
        out.append(ad.with_(category=cat))
    return out, missing


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # [truth, prediction], indexed in CATEGORIES order

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key):
        t, p = key
        return int(self.counts[CATEGORIES.index(t), CATEGORIES.index(p)])


def confusion_matrix(preds: dict, truth: dict) -> ConfusionMatrix:
    if set(preds) != set(truth):
        only_p = sorted(set(preds) - set(truth))
        only_t = sorted(set(truth) - set(preds))
        raise ValueError(f"key sets differ: only in predictions {only_p[:5]}, only in truth {only_t[:5]}")
    m = np.zeros((len(CATEGORIES), len(CATEGORIES)), dtype=np.int64)
    for k, t in truth.items():
        m[CATEGORIES.index(t), CATEGORIES.index(preds[k])] += 1
    return ConfusionMatrix(m)


def f1_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def scores_from_confusion(cm: ConfusionMatrix) -> PRF1Report:
    m = cm.counts
    per = {}
    flags = []
    for i, cat in enumerate(CATEGORIES):
        tp = int(m[i, i])
        pred_pos = int(m[:, i].sum())
        support = int(m[i, :].sum())
        if pred_pos:
            p = tp / pred_pos
        else:
            p = 0.0
            flags.append((cat, "precision"))
        if support:
            r = tp / support
        else:
            r = 0.0
            flags.append((cat, "recall"))
        per[cat] = ClassScores(p, r, f1_score(p, r), support)
    present = [c for c in CATEGORIES if per[c].support > 0]
    total = sum(per[c].support for c in present)

    def weighted(attr):
        if not total:
            return 0.0
        return sum(getattr(per[c], attr) * per[c].support for c in present) / total

    return PRF1Report(per, weighted("precision"), weighted("recall"), weighted("f1"), tuple(flags))


def evaluate(preds: dict, truth: dict) -> tuple[PRF1Report, ConfusionMatrix]:
    cm = confusion_matrix(preds, truth)
    return scores_from_confusion(cm), cm


def evaluate_balanced(
    preds: dict,
    truth: dict,
    minority: AdCategory = AdCategory.FOOD,
    majority: AdCategory = AdCategory.OTHER,
    n_subsets: int = 5,
    seed: int = 0,
) -> dict:
    """Mean per-class scores over random majority subsets the size of the minority class.

    Returns ``{category: ClassScores}`` for the two categories, with support
    taken from the first subset.
    """
    confusion_matrix(preds, truth)  # key check
    minority_ids = sorted(k for k, v in truth.items() if v is minority)
    majority_ids = sorted(k for k, v in truth.items() if v is majority)
    size = len(minority_ids)
    if size == 0 or len(majority_ids) < size:
        raise ValueError("need at least as many majority as minority samples")
    rng = random.Random(seed)
    acc = {c: [] for c in (minority, majority)}
    for _ in range(n_subsets):
        keys = minority_ids + rng.sample(majority_ids, size)
        rep = scores_from_confusion(
            confusion_matrix({k: preds[k] for k in keys}, {k: truth[k] for k in keys})
        )
        for c in acc:
            acc[c].append(rep.per_class[c])
    return {
        c: ClassScores(
            float(np.mean([s.precision for s in v])),
            float(np.mean([s.recall for s in v])),
            float(np.mean([s.f1 for s in v])),
            v[0].support,
        )
        for c, v in acc.items()
    }


def category_counts(ads) -> dict:
    c = Counter(ad.category for ad in ads if ad.category is not None)
    return {cat: c.get(cat, 0) for cat in CATEGORIES}
