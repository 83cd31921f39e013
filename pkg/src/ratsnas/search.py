"""Predictor-guided FLOPs-interval sampling (P3S) and a random-search baseline.

P3S keeps a focus interval ``[lo, hi]`` over the FLOPs-sorted space. Each
iteration it looks at the top 1% of the interval under the current predictor;
if at least 75% of those sit in one half of the interval, the interval
shrinks to that half. The top-``k`` unsampled entries of the interval are
then queried, added to the pool and the predictor is retrained on the pool.

Ground-truth queries are the unit of cost: ``samples_used == len(pool)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .cells import SearchSpace
from .errors import ExhaustedIntervalError, KTooLargeError
from .metrics import NOT_FOUND, samples_to_optimum
from .predictors import (
    PredictorConfig,
    PredictorKind,
    PredictorParams,
    encode_space,
    predict_all,
    train_on_batch,
)

TOP_FRACTION = 0.01
MAJORITY = 0.75
FALLBACKS = ("stay", "upper", "backtrack")


def sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


class Scorer(Protocol):
    def fit(self, space: SearchSpace, pool: np.ndarray, seed: int) -> Any: ...

    def score(self, space: SearchSpace, params: Any) -> np.ndarray: ...


@dataclass(frozen=True)
class PredictorScorer:
    """Retrains a predictor from scratch on the pool, then scores the whole space."""
    kind: PredictorKind = PredictorKind.RATSGCN
    layers: int = 3
    hidden: int = 32
    epochs: int = 300
    lr: float = 1e-3

    def config(self, space: SearchSpace) -> PredictorConfig:
        return PredictorConfig.for_space(self.kind, space, layers=self.layers, hidden=self.hidden)

    def fit(self, space: SearchSpace, pool: np.ndarray, seed: int) -> PredictorParams:
        config = self.config(space)
        batch = encode_space(space, config).take(pool)
        params, _ = train_on_batch(config, batch, space.accuracies[pool], self.epochs, self.lr, seed)
        return params

    def score(self, space: SearchSpace, params: PredictorParams) -> np.ndarray:
        return predict_all(params.config, params, space)


class OracleScorer:
    """Perfect predictor: scores are the ground-truth accuracies."""

    def fit(self, space, pool, seed):
        return None

    def score(self, space, params):
        return np.array(space.accuracies)


@dataclass(frozen=True)
class P3SState:
    lo: int
    hi: int
    t: int
    pool: tuple[tuple[str, float], ...]
    params: Any
    rng_seed: int
    pool_idx: tuple[int, ...] = ()
    scores: np.ndarray | None = field(default=None, repr=False)
    parents: tuple[tuple[int, int], ...] = ()  # interval stack for the backtrack fallback

    @property
    def samples_used(self) -> int:
        return len(self.pool)


@dataclass
class SearchResult:
    history: list[str]
    best_accuracy: float
    samples_used: int
    intervals: list[dict] = field(default_factory=list)
    samples_to_optimum: int | float = NOT_FOUND

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.intervals)

    def write_events(self, path: str | Path) -> None:
        Path(path).write_text(self.events_jsonl(), encoding="utf-8")


def _ranked(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """``candidates`` sorted by descending score, ties to the lower entry index."""
    return candidates[np.lexsort((candidates, -scores[candidates]))]


def p3s_init(space: SearchSpace, k: int = 10, seed: int = 0,
             scorer: Scorer | None = None) -> P3SState:
    if k > len(space) or k < 1:
        raise KTooLargeError(f"k={k} for a space of {len(space)}")
    scorer = scorer or PredictorScorer()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(space), size=k, replace=False)
    params = scorer.fit(space, idx, sub_seed(seed, 0))
    return P3SState(
        lo=0, hi=len(space) - 1, t=0,
        pool=tuple((space.ids[i], float(space.accuracies[i])) for i in idx),
        params=params, rng_seed=seed, pool_idx=tuple(int(i) for i in idx),
        scores=scorer.score(space, params),
    )


def refocus_decision(state: P3SState, space: SearchSpace, k: int) -> str:
    """Which half the top-1% picks favour: ``"lower"``, ``"upper"``, ``"split"`` or ``"floor"``.

    ``"floor"`` means the interval is already at its minimum width of ``2k``.
    """
    lo, hi = state.lo, state.hi
    width = hi - lo + 1
    if width <= 2 * k:
        return "floor"
    window = np.asarray(space.flops_order[lo:hi + 1])
    n_top = math.ceil(TOP_FRACTION * width)
    top = _ranked(state.scores, window)[:n_top]
    pos = np.empty(len(space), dtype=np.int64)
    pos[window] = np.arange(width)
    in_lower = int(np.sum(pos[top] < width // 2))
    if in_lower >= MAJORITY * n_top:
        return "lower"
    if n_top - in_lower >= MAJORITY * n_top:
        return "upper"
    return "split"


def p3s_refocus(state: P3SState, space: SearchSpace, k: int = 10,
                fallback: str = "stay") -> tuple[int, int]:
    """New focus interval after one refocusing decision.

    ``fallback`` selects what happens when neither half holds 75% of the
    top picks: ``"stay"`` keeps the interval, ``"upper"`` moves to the upper
    half, ``"backtrack"`` returns to the interval before the last halving.
    """
    return _refocus(state, space, k, fallback)[:2]


def _refocus(state, space, k, fallback):
    if fallback not in FALLBACKS:
        raise ValueError(f"fallback must be one of {FALLBACKS}, got {fallback!r}")
    lo, hi = state.lo, state.hi
    decision = refocus_decision(state, space, k)
    half = (hi - lo + 1) // 2
    parents = state.parents
    if decision == "lower":
        return lo, lo + half - 1, decision, parents + ((lo, hi),)
    if decision == "upper" or (decision == "split" and fallback == "upper"):
        return lo + half, hi, decision, parents + ((lo, hi),)
    if decision == "split" and fallback == "backtrack" and parents:
        plo, phi = parents[-1]
        return plo, phi, "backtrack", parents[:-1]
    return lo, hi, decision, parents


def _select(state: P3SState, space: SearchSpace, lo: int, hi: int, k: int,
            widen: bool = False) -> np.ndarray:
    sampled = np.zeros(len(space), dtype=bool)
    sampled[list(state.pool_idx)] = True
    if widen:
        candidates = np.flatnonzero(~sampled)
    else:
        window = np.asarray(space.flops_order[lo:hi + 1])
        candidates = window[~sampled[window]]
        if len(candidates) < k:
            raise ExhaustedIntervalError(f"{len(candidates)} unsampled entries left in [{lo}, {hi}]")
    return _ranked(state.scores, candidates)[:k]


def _advance(state: P3SState, space: SearchSpace, k: int, fallback: str,
             n_query: int) -> tuple[P3SState, dict]:
    lo, hi, decision, parents = _refocus(state, space, k, fallback)
    escaped = False
    try:
        chosen = _select(state, space, lo, hi, n_query)
    except ExhaustedIntervalError:
        # widen to the full space for this step only; logged in the event
        chosen = _select(state, space, lo, hi, n_query, widen=True)
        escaped = True
    pool_idx = state.pool_idx + tuple(int(i) for i in chosen)
    pool = state.pool + tuple((space.ids[i], float(space.accuracies[i])) for i in chosen)
    new = replace(state, lo=lo, hi=hi, t=state.t + 1, pool=pool, pool_idx=pool_idx,
                  parents=parents)
    event = {
        "t": new.t, "lo": lo, "hi": hi,
        "sampled_ids": [space.ids[i] for i in chosen],
        "best_so_far": max(a for _, a in pool),
        "decision": decision,
        "escape": escaped,
    }
    return new, event


def _refit(state: P3SState, space: SearchSpace, scorer: Scorer) -> P3SState:
    params = scorer.fit(space, np.asarray(state.pool_idx), sub_seed(state.rng_seed, state.t))
    return replace(state, params=params, scores=scorer.score(space, params))


def p3s_step(state: P3SState, space: SearchSpace, k: int = 10, scorer: Scorer | None = None,
             fallback: str = "stay", retrain: bool = True,
             n_query: int | None = None) -> tuple[P3SState, dict]:
    """One P3S iteration: refocus, query the top-``k`` unsampled, retrain.

    Returns the new state and the event record for the step. ``n_query``
    (default ``k``) caps the number of queries, e.g. to fit a budget. With
    ``retrain=False`` the previous predictor and scores are kept, which
    :func:`run_p3s` uses to skip a wasted fit after the final step.
    """
    new, event = _advance(state, space, k, fallback, k if n_query is None else n_query)
    if retrain:
        new = _refit(new, space, scorer or PredictorScorer())
    return new, event


def _result(space: SearchSpace, history: list[str], events: list[dict]) -> SearchResult:
    best = max(space.accuracies[space.index_of[i]] for i in history)
    return SearchResult(history, float(best), len(history), events,
                        samples_to_optimum(history, space))


def run_p3s(space: SearchSpace, k: int = 10, seed: int = 0, budget: int = 150,
            stop_at_optimum: bool = False, scorer: Scorer | None = None,
            fallback: str = "stay") -> SearchResult:
    """Full P3S run until ``budget`` queries are spent or (optionally) the optimum is hit."""
    if budget < k:
        raise ValueError(f"budget ({budget}) must be >= k ({k})")
    scorer = scorer or PredictorScorer()
    optimum = set(space.optimum_indices().tolist())
    state = p3s_init(space, k, seed, scorer)
    history = [i for i, _ in state.pool]
    events = [{"t": 0, "lo": state.lo, "hi": state.hi, "sampled_ids": list(history),
               "best_so_far": max(a for _, a in state.pool), "decision": "init", "escape": False}]

    def done(st: P3SState) -> bool:
        if stop_at_optimum and optimum.intersection(st.pool_idx):
            return True
        return st.samples_used >= min(budget, len(space))

    while not done(state):
        n_query = min(k, budget - state.samples_used, len(space) - state.samples_used)
        state, event = p3s_step(state, space, k, scorer, fallback, retrain=False, n_query=n_query)
        history.extend(event["sampled_ids"])
        events.append(event)
        if not done(state):
            state = _refit(state, space, scorer)
    return _result(space, history, events)


def run_random_search(space: SearchSpace, seed: int = 0, budget: int = 150,
                      stop_at_optimum: bool = False) -> SearchResult:
    """Uniform sampling without replacement."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(space))[:budget]
    if stop_at_optimum:
        hit = np.flatnonzero(np.isin(order, space.optimum_indices()))
        if hit.size:
            order = order[:hit[0] + 1]
    history = [space.ids[i] for i in order]
    acc = space.accuracies[order]
    events = [{"t": 0, "lo": 0, "hi": len(space) - 1, "sampled_ids": history,
               "best_so_far": float(acc.max()), "decision": "random", "escape": False}]
    return _result(space, history, events)
