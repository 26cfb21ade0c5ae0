"""Filtered link-prediction ranking, Macro-F1 and continual-learning metrics."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


class FilterIndex:
    """Known true completions for every (head, rel) and (rel, tail) query key."""

    def __init__(self, triples: np.ndarray):
        self.tails: dict[tuple[int, int], set[int]] = defaultdict(set)
        self.heads: dict[tuple[int, int], set[int]] = defaultdict(set)
        self.size = 0
        for h, r, t in np.asarray(triples, dtype=np.int64).reshape(-1, 3):
            self.add(int(h), int(r), int(t))

    def add(self, h: int, r: int, t: int) -> None:
        if t not in self.tails[(h, r)]:
            self.size += 1
        self.tails[(h, r)].add(t)
        self.heads[(r, t)].add(h)

    def __contains__(self, triple) -> bool:
        h, r, t = (int(x) for x in triple)
        return t in self.tails.get((h, r), ())

    def known(self, h: int | None, r: int, t: int | None) -> set[int]:
        """True tails of ``(h, r, ?)`` when ``t`` is None, else true heads of ``(?, r, t)``."""
        if t is None:
            return self.tails.get((h, r), set())
        return self.heads.get((r, t), set())


def filtered_rank(answer: int, scores: np.ndarray, known: set[int] | Sequence[int]) -> float:
    """1 + #surviving candidates scoring above the answer + half the number tied with it.

    Known true candidates other than the answer are removed before ranking.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= answer < len(scores):
        raise IndexError(f"answer {answer} is not among the {len(scores)} scored candidates")
    keep = np.ones(len(scores), dtype=bool)
    known = np.fromiter(known, dtype=np.int64) if not isinstance(known, np.ndarray) else known
    if len(known):
        keep[known] = False
    keep[answer] = False
    s_a = scores[answer]
    rest = scores[keep]
    return 1.0 + float(np.count_nonzero(rest > s_a)) + 0.5 * float(np.count_nonzero(rest == s_a))


class LinkScorer(Protocol):
    def score_tails(self, heads: np.ndarray, rels: np.ndarray) -> np.ndarray: ...

    def score_heads(self, rels: np.ndarray, tails: np.ndarray) -> np.ndarray: ...


def reciprocal_ranks(scorer: LinkScorer, test: np.ndarray, filt: FilterIndex) -> list[float]:
    """Tail then head reciprocal rank for each test triple, in order."""
    test = np.asarray(test, dtype=np.int64).reshape(-1, 3)
    if not len(test):
        return []
    tail_scores = scorer.score_tails(test[:, 0], test[:, 1])
    head_scores = scorer.score_heads(test[:, 1], test[:, 2])
    out = []
    for i, (h, r, t) in enumerate(test):
        h, r, t = int(h), int(r), int(t)
        out.append(1.0 / filtered_rank(t, tail_scores[i], filt.known(h, r, None)))
        out.append(1.0 / filtered_rank(h, head_scores[i], filt.known(None, r, t)))
    return out


def evaluate_lp(scorer: LinkScorer, test: np.ndarray, filt: FilterIndex) -> float:
    """Filtered MRR over head and tail prediction; NaN for an empty test split."""
    rr = reciprocal_ranks(scorer, test, filt)
    if not rr:
        return float("nan")
    # exactly rounded, so the mean does not depend on summation order
    return math.fsum(rr) / len(rr)


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    """Unweighted mean F1 over classes that occur in the labels or the predictions."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if len(y_true) == 0:
        return float("nan")
    scores = []
    for c in np.union1d(y_true, y_pred):
        tp = np.count_nonzero((y_true == c) & (y_pred == c))
        fp = np.count_nonzero((y_true != c) & (y_pred == c))
        fn = np.count_nonzero((y_true == c) & (y_pred != c))
        scores.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return float(np.mean(scores))


def evaluate_nc(predict, entities: np.ndarray, labels: np.ndarray) -> float:
    """Macro-F1 of ``predict(entities)`` against ``labels``; NaN with no labeled entities."""
    entities = np.asarray(entities, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    mask = labels >= 0
    if not mask.any():
        return float("nan")
    return macro_f1(labels[mask], predict(entities[mask]))


@dataclass
class CLMetrics:
    ap: float
    af: float | None
    bwt: float | None
    rem: float | None
    forgetting: list[float | None] = field(default_factory=list)
    peaks: list[float | None] = field(default_factory=list)
    fwt: float = 0.0

    def as_dict(self) -> dict:
        return {
            "AP": self.ap,
            "AF": self.af,
            "BWT": self.bwt,
            "REM": self.rem,
            "FWT": self.fwt,
            "forgetting": self.forgetting,
            "peaks": self.peaks,
        }


def _defined(x) -> bool:
    return x is not None and not (isinstance(x, float) and math.isnan(x))


def cl_metrics(R: np.ndarray) -> CLMetrics:
    """AP/AF/BWT/REM from ``R[j, i]`` = metric on task i after training task j.

    AF, BWT and REM are None when any earlier lower-triangle cell is undefined
    (for instance a joint-training run that only fills the final row) or K = 1.
    """
    R = np.asarray(R, dtype=np.float64)
    K = R.shape[0]
    if R.shape != (K, K) or K == 0:
        raise ValueError(f"metrics matrix must be square and non-empty, got {R.shape}")
    final = R[K - 1]
    ap = float(np.nanmean(final)) if np.isfinite(final).any() else float("nan")

    peaks: list[float | None] = []
    forgetting: list[float | None] = []
    for i in range(K):
        col = R[i:, i]
        if np.isfinite(col).any():
            peak = float(np.nanmax(col))
            peaks.append(peak)
            forgetting.append(peak - float(final[i]) if np.isfinite(final[i]) else None)
        else:
            peaks.append(None)
            forgetting.append(None)

    lower_defined = all(np.isfinite(R[j, i]) for j in range(K) for i in range(j + 1))
    if K == 1 or not lower_defined:
        return CLMetrics(ap, None, None, None, forgetting if lower_defined else [None] * K, peaks)

    af = float(np.mean([float(np.max(R[i:, i])) - final[i] for i in range(K - 1)]))
    bwt = float(np.mean([final[i] - R[i, i] for i in range(K - 1)]))
    return CLMetrics(ap, af, bwt, 1.0 - af, forgetting, peaks)
