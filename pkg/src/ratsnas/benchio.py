"""Tabular benchmark files (JSON Lines) and a seeded synthetic benchmark.

File layout, UTF-8 with LF endings::

    {"record_type": "header", "format_version": 1, "vocab": [...],
     "max_nodes": 8, "dataset_name": "..."}
    {"record_type": "cell", "id": "...", "ops": [...], "adjacency": [[0, 1], [0, 0]],
     "flops": 12.5, "accuracy": 0.9137}
    ...

Unknown fields are ignored. Loading is all-or-nothing.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .cells import (
    INPUT,
    OUTPUT,
    BenchmarkEntry,
    CellGraph,
    OpVocabulary,
    SearchSpace,
    decode_operations,
    encode_operations,
    sort_by_flops,
    validate_cell,
)
from .errors import CellError, DuplicateIdError, ParseError, SpecError, ValidationError

FORMAT_VERSION = 1

__all__ = ["FORMAT_VERSION", "SynthSpec", "gen_synthetic", "load_benchmark", "save_benchmark",
           "dumps_benchmark", "sort_by_flops"]


def _header(space: SearchSpace) -> dict:
    return {
        "record_type": "header",
        "format_version": FORMAT_VERSION,
        "vocab": list(space.vocab.names),
        "max_nodes": space.max_nodes,
        "dataset_name": space.name,
    }


def dumps_benchmark(space: SearchSpace) -> str:
    lines = [json.dumps(_header(space))]
    for e in space.entries:
        lines.append(json.dumps({
            "record_type": "cell",
            "id": e.id,
            "ops": decode_operations(e.cell.ops, space.vocab),
            "adjacency": e.cell.adjacency.astype(int).tolist(),
            "flops": float(e.flops),
            "accuracy": float(e.accuracy),
        }))
    return "\n".join(lines) + "\n"


def save_benchmark(path: str | Path, space: SearchSpace) -> None:
    Path(path).write_bytes(dumps_benchmark(space).encode("utf-8"))


def _require(rec: dict, key: str, lineno: int) -> Any:
    if key not in rec:
        raise ParseError(f"missing field {key!r}", lineno)
    return rec[key]


def load_benchmark(path: str | Path) -> SearchSpace:
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}") from None
    header = None
    vocab = None
    entries: list[BenchmarkEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", lineno)
        kind = rec.get("record_type")
        if header is None:
            if kind != "header":
                raise ParseError("first record must be the header", lineno)
            if rec.get("format_version") != FORMAT_VERSION:
                raise ParseError(f"unsupported format_version {rec.get('format_version')!r}", lineno)
            try:
                vocab = OpVocabulary(tuple(_require(rec, "vocab", lineno)))
            except CellError as exc:
                raise ParseError(f"bad vocabulary: {exc}", lineno) from None
            header = rec
            continue
        if kind != "cell":
            raise ParseError(f"unexpected record_type {kind!r}", lineno)
        cid = str(_require(rec, "id", lineno))
        if cid in seen:
            raise DuplicateIdError(f"duplicate id {cid!r} at line {lineno}")
        seen.add(cid)
        try:
            adjacency = np.asarray(_require(rec, "adjacency", lineno), dtype=np.float64)
            cell = CellGraph(adjacency, encode_operations(_require(rec, "ops", lineno), vocab))
            cell = validate_cell(cell, vocab)
            if cell.n > int(header.get("max_nodes", cell.n)):
                raise CellError(f"{cell.n} nodes exceeds max_nodes={header['max_nodes']}")
            entries.append(BenchmarkEntry(cid, cell, float(_require(rec, "flops", lineno)),
                                          float(_require(rec, "accuracy", lineno))))
        except (CellError, ValueError, TypeError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ValidationError(str(exc), cid) from None
    if header is None:
        raise ParseError("file has no header record")
    if not entries:
        raise ValidationError("benchmark has no cell records")
    return SearchSpace(tuple(entries), vocab, str(header.get("dataset_name", Path(path).stem)))


# ------------------------------------------------------------------ synthetic

BASE_OPS = ("conv3x3", "conv1x1", "maxpool3x3", "avgpool3x3", "skip_connect")
BASE_COSTS = {"conv3x3": 36.0, "conv1x1": 4.0, "maxpool3x3": 0.5, "avgpool3x3": 0.5,
              "skip_connect": 0.0}
STEM_MFLOPS = 5.0


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic benchmark.

    Accuracy is ``base + flops_weight * g(z) + composition_weight * c + noise``
    clamped to [0, 1], where ``z`` is the FLOPs rescaled to [0, 1] over the
    space, ``g(z) = exp(-((z - flops_peak) / flops_width)^2)`` is a unimodal
    FLOPs band and ``c`` is the mean node-op weight plus the mean trail
    weight over the cell's edges.
    """
    n_cells: int = 4096
    n_nodes: int = 8
    vocab_size: int = 4
    seed: int = 0
    noise_sigma: float = 0.002
    base: float = 0.5
    flops_weight: float = 0.35
    flops_peak: float = 0.8
    flops_width: float = 0.3
    composition_weight: float = 0.04
    edge_prob: float = 0.4
    name: str = "synthetic"

    def validate(self) -> None:
        if self.n_cells < 2:
            raise SpecError(f"n_cells must be >= 2, got {self.n_cells}")
        if self.n_nodes < 3:
            raise SpecError(f"n_nodes must be >= 3, got {self.n_nodes}")
        if self.vocab_size < 1:
            raise SpecError(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise SpecError("edge_prob must lie in [0, 1]")
        if self.flops_width <= 0:
            raise SpecError("flops_width must be > 0")


def synth_vocab(vocab_size: int) -> OpVocabulary:
    ops = list(BASE_OPS[:vocab_size]) + [f"op{i}" for i in range(len(BASE_OPS), vocab_size)]
    return OpVocabulary((INPUT, *ops, OUTPUT))


def _random_adjacency(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    adj = np.triu((rng.random((n, n)) < p).astype(np.float64), 1)
    # every intermediate node is fed and consumed
    for i in range(1, n - 1):
        if not adj[:i, i].any():
            adj[rng.integers(0, i), i] = 1.0
        if not adj[i, i + 1:].any():
            adj[i, rng.integers(i + 1, n)] = 1.0
    return adj


def gen_synthetic(spec: SynthSpec) -> tuple[SearchSpace, dict]:
    """Seeded synthetic search space whose accuracy tracks a FLOPs band.

    Returns the space and a JSON-ready description of the ground truth.
    The global optimum is unique: ties at the maximum are broken by lowering
    every tied entry but the first by 1e-9.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vocab = synth_vocab(spec.vocab_size)
    op_names = vocab.names[1:-1]
    costs = {op: BASE_COSTS.get(op, float(np.round(rng.uniform(0.0, 30.0), 3))) for op in op_names}
    node_w = dict(zip(op_names, rng.normal(0.0, 1.0, len(op_names))))
    pair_w = rng.normal(0.0, 1.0, (len(vocab), len(vocab)))

    n = spec.n_nodes
    cells, flops, comp = [], [], []
    for _ in range(spec.n_cells):
        inner = list(rng.choice(op_names, size=n - 2))
        adj = _random_adjacency(rng, n, spec.edge_prob)
        names = [INPUT, *inner, OUTPUT]
        cell = CellGraph(adj, encode_operations(names, vocab))
        idx = cell.op_indices()
        src, dst = np.nonzero(adj)
        cells.append(cell)
        flops.append(STEM_MFLOPS + sum(costs[o] for o in inner))
        comp.append(np.mean([node_w[o] for o in inner]) + pair_w[idx[src], idx[dst]].mean())

    flops = np.asarray(flops)
    span = flops.max() - flops.min()
    z = (flops - flops.min()) / span if span > 0 else np.zeros_like(flops)
    band = np.exp(-(((z - spec.flops_peak) / spec.flops_width) ** 2))
    acc = spec.base + spec.flops_weight * band + spec.composition_weight * np.asarray(comp)
    if spec.noise_sigma > 0:
        acc = acc + rng.normal(0.0, spec.noise_sigma, spec.n_cells)
    acc = np.clip(acc, 0.0, 1.0)
    tied = np.flatnonzero(acc == acc.max())
    acc[tied[1:]] -= 1e-9

    entries = tuple(BenchmarkEntry(f"c{i:05d}", cells[i], float(flops[i]), float(acc[i]))
                    for i in range(spec.n_cells))
    space = SearchSpace(entries, vocab, spec.name)
    opt = int(np.argmax(acc))
    description = {
        "spec": asdict(spec),
        "vocab": list(vocab.names),
        "op_mflops": costs,
        "stem_mflops": STEM_MFLOPS,
        "node_weights": {k: float(v) for k, v in node_w.items()},
        "trail_weights": pair_w.tolist(),
        "flops_band": {"peak": spec.flops_peak, "width": spec.flops_width,
                       "flops_min": float(flops.min()), "flops_max": float(flops.max())},
        "optimum": {"id": entries[opt].id, "accuracy": float(acc[opt]), "flops": float(flops[opt])},
    }
    return space, description
