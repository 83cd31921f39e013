"""Ranking and search metrics: Psp, mAcc, samples-to-optimum, best-at-budget."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .cells import SearchSpace
from .errors import DuplicateIdError, KTooLargeError, LengthMismatchError, TooShortError

NOT_FOUND = math.inf


class ConstantInputWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EvalReport:
    m_acc: float
    psp: float
    n_space: int
    k: int

    def __post_init__(self):
        if not -1.0 <= self.psp <= 1.0:
            raise ValueError(f"psp {self.psp} outside [-1, 1]")
        if not 0.0 <= self.m_acc <= 100.0:
            raise ValueError(f"m_acc {self.m_acc} outside [0, 100]")


def spearman(pred: Sequence[float], truth: Sequence[float]) -> float:
    """Spearman correlation with average ranks for ties.

    Defined as 0 (with a :class:`ConstantInputWarning`) when either input is
    constant, since untrained predictors can emit constant scores.
    """
    x = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(truth, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthMismatchError(f"lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise TooShortError("spearman needs at least two points")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        warnings.warn("constant input to spearman; returning 0", ConstantInputWarning, stacklevel=2)
        return 0.0
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def top_k_indices(scores: Sequence[float], k: int) -> np.ndarray:
    """Indices of the ``k`` highest scores; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(s.size), -s))
    return order[:k]


def mean_topk(scores: Sequence[float], space: SearchSpace, k: int = 100) -> float:
    """Mean true accuracy (percent) of the ``k`` entries the scores rank highest."""
    if len(scores) != len(space):
        raise LengthMismatchError(f"{len(scores)} scores for {len(space)} entries")
    if k > len(space) or k < 1:
        raise KTooLargeError(f"k={k} for a space of {len(space)}")
    return float(space.accuracies[top_k_indices(scores, k)].mean() * 100.0)


def evaluate(scores: Sequence[float], space: SearchSpace, k: int = 100) -> EvalReport:
    return EvalReport(mean_topk(scores, space, k), spearman(scores, space.accuracies), len(space), k)


def _check_history(history: Sequence[str]) -> None:
    if len(set(history)) != len(history):
        seen = set()
        dup = next(h for h in history if h in seen or seen.add(h))
        raise DuplicateIdError(f"id {dup!r} evaluated twice")


def samples_to_optimum(history: Sequence[str], space: SearchSpace) -> int | float:
    """1-based position of the first globally optimal id in ``history``.

    Any entry tied at the maximum accuracy counts. Returns ``NOT_FOUND``
    (``math.inf``) when no optimum was evaluated.
    """
    _check_history(history)
    optimal = {space.ids[i] for i in space.optimum_indices()}
    for pos, entry_id in enumerate(history, start=1):
        if entry_id in optimal:
            return pos
    return NOT_FOUND


def best_at_budget(history: Sequence[str], space: SearchSpace, budget: int | None = None) -> float:
    """Highest true accuracy among the first ``budget`` evaluated ids."""
    _check_history(history)
    ids = history if budget is None else history[:budget]
    if not ids:
        raise TooShortError("empty history")
    return max(space.entries[space.index_of[i]].accuracy for i in ids)
