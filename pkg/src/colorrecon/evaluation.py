"""Image-level detection metrics: ROC/AUC, top-K, thresholding, score histograms.

EvalReport JSON (``format_version`` 1)::

    {
      "format_version": 1,
      "methods": {
        "<method>": {
          "n_anomalous": int, "n_normal": int,
          "auc": float,
          "roc": [[fpr, tpr], ...],
          "top_k": {"k": int, "precision": float, "recall": float, "f1": float},
          "histogram": {"edges": [...], "anomalous": [...], "normal": [...]},
          "threshold": float,
          "confusion": {"tp": int, "fp": int, "tn": int, "fn": int}
        }
      }
    }

``threshold`` is the one the caller supplied, or by default the largest
score strictly below the K-th ranked score, so that every image scoring at
least the K-th score is called anomalous (score > threshold).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

REPORT_VERSION = 1


@dataclass(frozen=True)
class LabeledScore:
    image_id: str
    score: float
    label: int  # 1 anomalous, -1 normal

    def __post_init__(self) -> None:
        if self.label not in (1, -1):
            raise ValueError(f"label must be 1 or -1, got {self.label!r}")
        if not math.isfinite(self.score):
            raise ValueError(f"non-finite score for {self.image_id}")


@dataclass(frozen=True)
class RocCurve:
    points: list[tuple[float, float]]
    auc: float


@dataclass(frozen=True)
class TopKReport:
    k: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int


def _split(scores: Sequence[LabeledScore]) -> tuple[np.ndarray, np.ndarray]:
    s = np.array([x.score for x in scores], dtype=np.float64)
    y = np.array([x.label == 1 for x in scores], dtype=bool)
    return s, y


def roc_auc(scores: Sequence[LabeledScore]) -> RocCurve:
    """ROC from a descending threshold sweep with ties grouped; AUC by trapezoids."""
    s, y = _split(scores)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one anomalous and one normal score")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(list(zip(fpr.tolist(), tpr.tolist())), auc)


def rank_by_score(scores: Sequence[LabeledScore]) -> list[LabeledScore]:
    """Descending score, ties by image id ascending."""
    return sorted(scores, key=lambda x: (-x.score, x.image_id))


def top_k_metrics(scores: Sequence[LabeledScore], k: int) -> TopKReport:
    if not 1 <= k <= len(scores):
        raise ValueError(f"K={k} out of range for {len(scores)} scores")
    n_pos = sum(1 for x in scores if x.label == 1)
    hits = sum(1 for x in rank_by_score(scores)[:k] if x.label == 1)
    precision = hits / k
    recall = hits / n_pos if n_pos else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return TopKReport(k, precision, recall, f1)


def threshold_classify(scores: Sequence[LabeledScore], theta: float) -> tuple[list[int], Confusion]:
    """Predict 1 (anomalous) where score > theta, else -1."""
    if not math.isfinite(theta):
        raise ValueError("threshold must be finite")
    pred = [1 if x.score > theta else -1 for x in scores]
    tp = sum(1 for p, x in zip(pred, scores) if p == 1 and x.label == 1)
    fp = sum(1 for p, x in zip(pred, scores) if p == 1 and x.label == -1)
    fn = sum(1 for p, x in zip(pred, scores) if p == -1 and x.label == 1)
    tn = len(scores) - tp - fp - fn
    return pred, Confusion(tp, fp, tn, fn)


def score_histogram(scores: Sequence[LabeledScore], bins: int = 20) -> dict:
    """Per-class counts over a range shared by both classes.

    A degenerate range (all scores equal) collapses to a single bin.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    s, y = _split(scores)
    if s.size == 0:
        return {"edges": [], "anomalous": [], "normal": []}
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        edges = np.array([lo, hi])
    else:
        edges = np.linspace(lo, hi, bins + 1)
    n = len(edges) - 1
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n - 1)
    return {
        "edges": edges.tolist(),
        "anomalous": np.bincount(idx[y], minlength=n).tolist(),
        "normal": np.bincount(idx[~y], minlength=n).tolist(),
    }


def evaluate(scores: Sequence[LabeledScore], k: int | None = None,
             bins: int = 20, threshold: float | None = None) -> dict:
    """Full report block for one scoring method.

    ``k`` defaults to the number of anomalous images. Without an explicit
    ``threshold`` the classifier cuts just below the K-th ranked score.
    """
    n_pos = sum(1 for x in scores if x.label == 1)
    k = n_pos if k is None else k
    roc = roc_auc(scores)
    top = top_k_metrics(scores, k)
    if threshold is None:
        kth = rank_by_score(scores)[k - 1].score
        below = [x.score for x in scores if x.score < kth]
        threshold = max(below) if below else kth - 1.0
    _, conf = threshold_classify(scores, threshold)
    return {
        "n_anomalous": n_pos,
        "n_normal": len(scores) - n_pos,
        "auc": roc.auc,
        "roc": [list(p) for p in roc.points],
        "top_k": {"k": top.k, "precision": top.precision, "recall": top.recall, "f1": top.f1},
        "histogram": score_histogram(scores, bins),
        "threshold": threshold,
        "confusion": {"tp": conf.tp, "fp": conf.fp, "tn": conf.tn, "fn": conf.fn},
    }


def report_json(per_method: dict[str, dict]) -> str:
    return json.dumps({"format_version": REPORT_VERSION, "methods": per_method}, indent=2) + "\n"
