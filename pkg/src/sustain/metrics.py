"""Recording-level evaluation metrics: AP, ROC AUC, lwlrap and accuracy.

Ties in AP and lwlrap are broken by original order (stable sort), so a
positive listed before a tied negative counts as ranked above it. AUC gives
ties half credit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


def _check_pair(scores, truth):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ValueError(f"scores shape {scores.shape} != truth shape {truth.shape}")
    return scores, truth.astype(bool)


def average_precision(scores, truth) -> float:
    """Mean of precision@k over the ranks k of positive items; NaN without positives."""
    scores, truth = _check_pair(scores, truth)
    n_pos = int(truth.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-scores, kind="stable")
    hits = truth[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    return float((tp[hits] / ranks[hits]).sum() / n_pos)


def _average_ranks(x):
    """1-based ranks with ties replaced by their mean rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_roc(scores, truth) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie); NaN when one side is empty."""
    scores, truth = _check_pair(scores, truth)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    r = _average_ranks(scores)
    return float((r[truth].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def lwlrap(scores, truth) -> float:
    """Label-weighted label-ranking average precision over a (samples, C) matrix.

    Every positive label in the dataset carries equal weight. NaN when the
    truth matrix has no positives at all.
    """
    scores, truth = _check_pair(scores, truth)
    if scores.ndim == 1:
        scores, truth = scores[None], truth[None]
    total = int(truth.sum())
    if total == 0:
        return math.nan
    # ranks never exceed C, so exact rational accumulation stays cheap and
    # results such as 5/6 come out correctly rounded
    acc = Fraction(0)
    for s, t in zip(scores, truth):
        if not t.any():
            continue
        order = np.argsort(-s, kind="stable")
        hits = t[order]
        tp = np.cumsum(hits)
        for k in np.flatnonzero(hits):
            acc += Fraction(int(tp[k]), int(k) + 1)
    return float(acc / total)


def per_class_accuracy(scores, truth, threshold=0.5) -> np.ndarray:
    """Fraction of samples whose thresholded score (``>= threshold``) equals truth, per class."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    scores, truth = _check_pair(scores, truth)
    if scores.ndim == 1:
        scores, truth = scores[:, None], truth[:, None]
    return ((scores >= threshold) == truth).mean(axis=0)


@dataclass
class MetricsReport:
    ap: np.ndarray
    auc: np.ndarray
    accuracy: np.ndarray
    mAP: float
    mAUC: float
    lwlrap: float
    excluded: list = field(default_factory=list)

    @property
    def n_classes(self):
        return len(self.ap)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "ap", "auc", "accuracy", "excluded"])
        for c in range(self.n_classes):
            w.writerow([c, _fmt(self.ap[c]), _fmt(self.auc[c]), _fmt(self.accuracy[c]),
                        int(c in self.excluded)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        return {"mAP": _num(self.mAP), "mAUC": _num(self.mAUC), "lwlrap": _num(self.lwlrap),
                "mean_accuracy": _num(float(np.mean(self.accuracy))),
                "excluded_classes": list(self.excluded)}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{float(x):.10f}"


def _num(x):
    return None if x is None or math.isnan(x) else round(float(x), 10)


def evaluate(scores, truth, threshold=0.5) -> MetricsReport:
    """Per-class AP/AUC/accuracy plus mAP, mAUC and lwlrap.

    Classes without positives are left out of mAP (and classes without
    negatives out of mAUC) and listed in ``excluded``.
    """
    scores, truth = _check_pair(scores, truth)
    C = scores.shape[1]
    ap = np.array([average_precision(scores[:, c], truth[:, c]) for c in range(C)])
    auc = np.array([auc_roc(scores[:, c], truth[:, c]) for c in range(C)])
    acc = per_class_accuracy(scores, truth, threshold)
    excluded = [c for c in range(C) if math.isnan(ap[c]) or math.isnan(auc[c])]
    mAP = float(np.nanmean(ap)) if not np.all(np.isnan(ap)) else math.nan
    mAUC = float(np.nanmean(auc)) if not np.all(np.isnan(auc)) else math.nan
    return MetricsReport(ap, auc, acc, mAP, mAUC, lwlrap(scores, truth), excluded)
