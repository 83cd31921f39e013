"""Cell graphs, operation vocabularies and search-space containers.

A cell is a node-labelled DAG: ``adjacency[i, j] == 1`` is a directed trail
``i -> j`` and ``ops`` is an ``n x d`` one-hot matrix over an
:class:`OpVocabulary`. Validated cells are topologically indexed, so the
adjacency is strictly upper-triangular, node 0 is ``input`` and node ``n-1``
is ``output``.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    CellError,
    CycleError,
    DuplicateIdError,
    OneHotError,
    ShapeError,
    TerminalError,
    UnknownOpError,
)

INPUT = "input"
OUTPUT = "output"


@dataclass(frozen=True)
class OpVocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if any(not isinstance(n, str) or not n for n in names):
            raise CellError("operation names must be non-empty strings")
        if len(set(names)) != len(names):
            raise CellError(f"duplicate operation names in {names}")
        for reserved in (INPUT, OUTPUT):
            if reserved not in names:
                raise CellError(f"vocabulary must contain {reserved!r}")

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._lookup

    @cached_property
    def _lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    def index(self, name: str) -> int:
        try:
            return self._lookup[name]
        except KeyError:
            raise UnknownOpError(f"operation {name!r} not in vocabulary {self.names}") from None


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CellGraph:
    adjacency: np.ndarray
    ops: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "adjacency", _frozen(self.adjacency, np.float64))
        object.__setattr__(self, "ops", _frozen(self.ops, np.float64))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def op_indices(self) -> np.ndarray:
        return np.argmax(self.ops, axis=1)

    def __eq__(self, other):
        if not isinstance(other, CellGraph):
            return NotImplemented
        return (
            self.adjacency.shape == other.adjacency.shape
            and self.ops.shape == other.ops.shape
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.ops, other.ops)
        )

    __hash__ = None

    @classmethod
    def from_names(cls, op_names: Sequence[str], adjacency, vocab: OpVocabulary) -> "CellGraph":
        return cls(np.asarray(adjacency, dtype=np.float64), encode_operations(op_names, vocab))


def encode_operations(op_names: Sequence[str], vocab: OpVocabulary) -> np.ndarray:
    out = np.zeros((len(op_names), len(vocab)))
    for row, name in enumerate(op_names):
        out[row, vocab.index(name)] = 1.0
    return out


def decode_operations(ops: np.ndarray, vocab: OpVocabulary) -> list[str]:
    return [vocab.names[int(i)] for i in np.argmax(ops, axis=1)]


def _topological_order(adj: np.ndarray, op_idx: np.ndarray, vocab: OpVocabulary) -> list[int]:
    # Kahn with a priority: input first, output last, otherwise original index.
    n = adj.shape[0]
    in_ip, out_ip = vocab.index(INPUT), vocab.index(OUTPUT)

    def key(i):
        rank = 0 if op_idx[i] == in_ip else 2 if op_idx[i] == out_ip else 1
        return (rank, i)

    indeg = adj.sum(axis=0).astype(int)
    heap = [key(i) for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, i = heapq.heappop(heap)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, key(j))
    if len(order) != n:
        raise CycleError("adjacency contains a directed cycle")
    return order


def validate_cell(cell: CellGraph, vocab: OpVocabulary) -> CellGraph:
    """Check every CellGraph invariant; re-index topologically sortable cells.

    Returns ``cell`` itself when it is already in canonical (strictly
    upper-triangular) form.
    """
    adj, ops = cell.adjacency, cell.ops
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ShapeError(f"adjacency must be square, got {adj.shape}")
    n = adj.shape[0]
    if n < 2:
        raise ShapeError("a cell needs at least the input and output nodes")
    if ops.ndim != 2 or ops.shape[0] != n:
        raise ShapeError(f"ops has {ops.shape[0] if ops.ndim else 0} rows, expected {n}")
    if ops.shape[1] != len(vocab):
        raise ShapeError(f"ops has {ops.shape[1]} columns, vocabulary has {len(vocab)}")
    if not np.all((adj == 0) | (adj == 1)):
        raise ShapeError("adjacency entries must be 0 or 1")
    if not (np.all((ops == 0) | (ops == 1)) and np.all(ops.sum(axis=1) == 1)):
        raise OneHotError("every row of ops must be one-hot")
    if np.any(np.diag(adj)):
        raise CycleError("self-loop in adjacency")

    op_idx = cell.op_indices()
    in_ip, out_ip = vocab.index(INPUT), vocab.index(OUTPUT)
    if np.sum(op_idx == in_ip) != 1 or np.sum(op_idx == out_ip) != 1:
        raise TerminalError("exactly one input and one output node required")

    canonical = not np.any(np.tril(adj)) and op_idx[0] == in_ip and op_idx[-1] == out_ip
    if not canonical:
        order = _topological_order(adj, op_idx, vocab)
        adj = adj[np.ix_(order, order)]
        ops = ops[order]
        op_idx = op_idx[order]

    if op_idx[0] != in_ip or op_idx[-1] != out_ip:
        raise TerminalError("node 0 must be input and the last node output")
    if adj[:, 0].any():
        raise TerminalError("input node has incoming trails")
    if adj[-1].any():
        raise TerminalError("output node has outgoing trails")
    return cell if canonical else CellGraph(adj, ops)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Row-normalised adjacency with self loops, ``D^-1 (A + I)``.

    Accepts a single ``n x n`` matrix or a stack ``(..., n, n)``.
    """
    a = np.asarray(a, dtype=np.float64)
    a_hat = a + np.eye(a.shape[-1])
    return a_hat / a_hat.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class BenchmarkEntry:
    id: str
    cell: CellGraph
    flops: float
    accuracy: float

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise CellError(f"accuracy {self.accuracy} outside [0, 1] for {self.id!r}")
        if not self.flops >= 0.0:
            raise CellError(f"negative flops for {self.id!r}")


def sort_by_flops(flops: Sequence[float] | "SearchSpace") -> np.ndarray:
    """Stable ascending argsort of FLOPs; ties keep input order."""
    if isinstance(flops, SearchSpace):
        flops = flops.flops
    return np.argsort(np.asarray(flops, dtype=np.float64), kind="stable")


@dataclass(frozen=True, eq=False)
class SearchSpace:
    entries: tuple[BenchmarkEntry, ...]
    vocab: OpVocabulary
    name: str = "unnamed"
    flops_order: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise CellError("search space is empty")
        object.__setattr__(self, "entries", entries)
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DuplicateIdError(f"duplicate entry id {dup!r}")
        object.__setattr__(self, "flops_order", _frozen(sort_by_flops(self.flops), np.int64))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, SearchSpace):
            return NotImplemented
        return (self.vocab == other.vocab and self.name == other.name
                and self.entries == other.entries)

    __hash__ = None

    @cached_property
    def flops(self) -> np.ndarray:
        return _frozen([e.flops for e in self.entries], np.float64)

    @cached_property
    def accuracies(self) -> np.ndarray:
        return _frozen([e.accuracy for e in self.entries], np.float64)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)

    @cached_property
    def index_of(self) -> dict[str, int]:
        return {e.id: i for i, e in enumerate(self.entries)}

    @cached_property
    def max_nodes(self) -> int:
        return max(e.cell.n for e in self.entries)

    @property
    def cells(self) -> list[CellGraph]:
        return [e.cell for e in self.entries]

    def optimum_indices(self) -> np.ndarray:
        acc = self.accuracies
        return np.flatnonzero(acc == acc.max())

    def subset(self, indices: Sequence[int], name: str | None = None) -> "SearchSpace":
        return SearchSpace(tuple(self.entries[i] for i in indices), self.vocab, name or self.name)
