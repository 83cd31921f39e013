"""Accuracy predictors over cell graphs: MLP, GCN, BI-GCN and RATs-GCN.

All kinds share the same skeleton: ``layers`` propagation steps of width
``hidden``, a masked mean-pool over real nodes and a single linear readout.
They differ only in the trail matrix used for propagation:

* MLP      ``H' = relu(H W)``
* GCN      ``H' = relu(norm(A) H W)``
* BI-GCN   ``H' = relu((norm(A) H W + norm(A^T) H W_r) / 2)``
* RATs-GCN ``H' = relu(norm(A_l) H W)`` with ``A_l = rats_module(H, A)``

where ``norm(A) = D^-1 (A + I)``. Cells smaller than ``max_nodes`` are padded
with nodes carrying a dedicated ``pad`` one-hot column and no trails.
"""
from __future__ import annotations

import json
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tape, Tensor, adam_update, backprop, glorot_uniform
from .cells import CellGraph, SearchSpace, normalize_adjacency
from .errors import EmptyPoolError, ShapeMismatchError

PARAMS_FORMAT_VERSION = 1


class PredictorKind(str, Enum):
    MLP = "MLP"
    GCN = "GCN"
    BIGCN = "BIGCN"
    RATSGCN = "RATSGCN"

    @classmethod
    def parse(cls, value: "str | PredictorKind") -> "PredictorKind":
        if isinstance(value, cls):
            return value
        key = value.upper().replace("-", "").replace("_", "")
        aliases = {"RATS": "RATSGCN", "BI": "BIGCN"}
        return cls(aliases.get(key, key))


@dataclass(frozen=True)
class PredictorConfig:
    kind: PredictorKind
    vocab_size: int
    max_nodes: int
    layers: int = 3
    hidden: int = 32

    def __post_init__(self):
        object.__setattr__(self, "kind", PredictorKind.parse(self.kind))
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be >= 1")
        if self.vocab_size < 2 or self.max_nodes < 2:
            raise ValueError("vocab_size and max_nodes must be >= 2")

    @property
    def in_features(self) -> int:
        return self.vocab_size + 1  # trailing pad column

    def layer_in(self, layer: int) -> int:
        return self.in_features if layer == 0 else self.hidden

    @classmethod
    def for_space(cls, kind, space: SearchSpace, **kw) -> "PredictorConfig":
        return cls(kind, len(space.vocab), space.max_nodes, **kw)


RATS_FIELDS = ("W_q", "W_k", "W_v", "W_off", "b_off", "W_str", "b_str")


@dataclass(frozen=True)
class RatsParams:
    """Weights of one RATs module.

    ``W_q/W_k/W_v`` project node features (``f x h``); ``W_off/W_str`` map
    the embedded code ``[Q | K | V | A]`` (width ``3h + n``) to per-trail
    offset and strength logits (``n`` columns each).
    """
    W_q: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_off: np.ndarray
    b_off: np.ndarray
    W_str: np.ndarray
    b_str: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int, n: int) -> "RatsParams":
        code = 3 * hidden + n
        return cls(
            glorot_uniform(rng, in_dim, hidden), glorot_uniform(rng, in_dim, hidden),
            glorot_uniform(rng, in_dim, hidden),
            glorot_uniform(rng, code, n), np.zeros(n),
            glorot_uniform(rng, code, n), np.zeros(n),
        )

    @classmethod
    def _saturated(cls, in_dim, hidden, n, off_bias, str_bias) -> "RatsParams":
        code = 3 * hidden + n
        z = np.zeros
        return cls(z((in_dim, hidden)), z((in_dim, hidden)), z((in_dim, hidden)),
                   z((code, n)), np.full(n, off_bias), z((code, n)), np.full(n, str_bias))

    @classmethod
    def gcn_extreme(cls, in_dim: int, hidden: int, n: int, scale: float = 40.0) -> "RatsParams":
        """offset ~ 0 and strength ~ 1, so the module returns A unchanged."""
        return cls._saturated(in_dim, hidden, n, -scale, scale)

    @classmethod
    def mlp_extreme(cls, in_dim: int, hidden: int, n: int, scale: float = 40.0) -> "RatsParams":
        """strength ~ 0, so every trail vanishes and norm(A_new) ~ I."""
        return cls._saturated(in_dim, hidden, n, -scale, -scale)

    def as_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: getattr(self, k) for k in RATS_FIELDS}


def _rats(X: Tensor, A: Tensor, p: Mapping[str, Tensor], pair_mask: Tensor | None = None) -> Tensor:
    q = X @ p["W_q"]
    k = X @ p["W_k"]
    v = X @ p["W_v"]
    code = ad.concat([q, k, v, A])
    offset = ad.sigmoid(code @ p["W_off"] + p["b_off"])
    strength = ad.sigmoid(code @ p["W_str"] + p["b_str"])
    a_new = ad.clamp01((A + offset) * strength)
    if pair_mask is not None:
        a_new = a_new * pair_mask
    return a_new


def rats_module(X: np.ndarray, A: np.ndarray, p: RatsParams) -> np.ndarray:
    """Redirect the trails of ``A`` given node features ``X``; result lies in [0, 1]."""
    X, A = np.asarray(X, dtype=np.float64), np.asarray(A, dtype=np.float64)
    n = A.shape[-1]
    if (X.shape[-2] != n or p.W_q.shape[0] != X.shape[-1]
            or p.W_off.shape != (3 * p.W_q.shape[1] + n, n) or p.W_str.shape != p.W_off.shape):
        raise ShapeMismatchError(f"rats_module: X {X.shape}, A {A.shape}, W_off {p.W_off.shape}")
    tape = Tape()
    out = _rats(tape.const(X), tape.const(A), {k: tape.const(v) for k, v in p.as_dict().items()})
    return out.data


# ------------------------------------------------------------------ encoding

@dataclass(frozen=True)
class Batch:
    ops: np.ndarray   # (B, n, d + 1)
    adj: np.ndarray   # (B, n, n)
    mask: np.ndarray  # (B, n), 1 for real nodes

    def __len__(self) -> int:
        return self.ops.shape[0]

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.ops[idx], self.adj[idx], self.mask[idx])


def encode_cells(cells: Sequence[CellGraph], vocab_size: int, max_nodes: int) -> Batch:
    B = len(cells)
    ops = np.zeros((B, max_nodes, vocab_size + 1))
    adj = np.zeros((B, max_nodes, max_nodes))
    mask = np.zeros((B, max_nodes))
    for b, cell in enumerate(cells):
        n = cell.n
        if n > max_nodes or cell.ops.shape[1] != vocab_size:
            raise ShapeMismatchError(
                f"cell with {n} nodes / {cell.ops.shape[1]} ops does not fit "
                f"max_nodes={max_nodes}, vocab_size={vocab_size}")
        ops[b, :n, :vocab_size] = cell.ops
        ops[b, n:, vocab_size] = 1.0
        adj[b, :n, :n] = cell.adjacency
        mask[b, :n] = 1.0
    return Batch(ops, adj, mask)


_SPACE_CACHE: dict[tuple[int, int, int], Batch] = {}


def encode_space(space: SearchSpace, config: PredictorConfig) -> Batch:
    """Encoded batch for a whole space, cached for the lifetime of ``space``."""
    key = (id(space), config.vocab_size, config.max_nodes)
    batch = _SPACE_CACHE.get(key)
    if batch is None:
        batch = encode_cells(space.cells, config.vocab_size, config.max_nodes)
        _SPACE_CACHE[key] = batch
        weakref.finalize(space, _SPACE_CACHE.pop, key, None)
    return batch


# ------------------------------------------------------------------ parameters

@dataclass(frozen=True, eq=False)
class PredictorParams:
    config: PredictorConfig
    arrays: Mapping[str, np.ndarray]

    def __post_init__(self):
        frozen = {}
        for k, v in self.arrays.items():
            a = np.array(v, dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite parameter {k!r}")
            a.setflags(write=False)
            frozen[k] = a
        object.__setattr__(self, "arrays", frozen)

    def rats(self, layer: int) -> RatsParams:
        return RatsParams(**{k: self.arrays[f"rats{layer}.{k}"] for k in RATS_FIELDS})

    def with_rats(self, layer: int, p: RatsParams) -> "PredictorParams":
        return self.replace(p.as_dict(f"rats{layer}."))

    def replace(self, updates: Mapping[str, np.ndarray]) -> "PredictorParams":
        unknown = set(updates) - set(self.arrays)
        if unknown:
            raise KeyError(f"unknown parameters {sorted(unknown)}")
        for k, v in updates.items():
            if np.shape(v) != self.arrays[k].shape:
                raise ShapeMismatchError(f"{k}: {np.shape(v)} vs {self.arrays[k].shape}")
        return PredictorParams(self.config, {**self.arrays, **updates})

    def __eq__(self, other):
        if not isinstance(other, PredictorParams):
            return NotImplemented
        return (self.config == other.config and self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()))

    __hash__ = None

    def to_json(self) -> dict:
        cfg = asdict(self.config)
        cfg["kind"] = self.config.kind.value
        return {
            "format_version": PARAMS_FORMAT_VERSION,
            "config": cfg,
            "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in sorted(self.arrays.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PredictorParams":
        if obj.get("format_version") != PARAMS_FORMAT_VERSION:
            raise ValueError(f"unsupported params format_version {obj.get('format_version')!r}")
        config = PredictorConfig(**obj["config"])
        arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"])
                  for k, v in obj["arrays"].items()}
        expected = init_params(config, 0).arrays
        if arrays.keys() != expected.keys() or any(arrays[k].shape != expected[k].shape for k in arrays):
            raise ShapeMismatchError("parameter record does not match its config")
        return cls(config, arrays)


def save_params(path: str | Path, params: PredictorParams) -> None:
    Path(path).write_text(json.dumps(params.to_json()) + "\n", encoding="utf-8")


def load_params(path: str | Path) -> PredictorParams:
    return PredictorParams.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def init_params(config: PredictorConfig, seed: int) -> PredictorParams:
    rng = np.random.default_rng(seed)
    h, n = config.hidden, config.max_nodes
    arrays = {}
    for layer in range(config.layers):
        f = config.layer_in(layer)
        arrays[f"W{layer}"] = glorot_uniform(rng, f, h)
        if config.kind is PredictorKind.BIGCN:
            arrays[f"Wr{layer}"] = glorot_uniform(rng, f, h)
        if config.kind is PredictorKind.RATSGCN:
            arrays.update(RatsParams.init(rng, f, h, n).as_dict(f"rats{layer}."))
    arrays["W_out"] = glorot_uniform(rng, h, 1)
    arrays["b_out"] = np.zeros(1)
    return PredictorParams(config, arrays)


# ------------------------------------------------------------------ forward

def build_forward(tape: Tape, config: PredictorConfig, p: Mapping[str, Tensor], batch: Batch,
                  trails: list | None = None) -> Tensor:
    """Record the forward pass on ``tape``; returns predictions of shape (B, 1).

    If ``trails`` is a list, the propagation matrix of every layer is appended.
    """
    kind = config.kind
    if batch.ops.shape[1:] != (config.max_nodes, config.in_features):
        raise ShapeMismatchError(f"batch {batch.ops.shape} does not match config {config}")
    H = tape.const(batch.ops)
    if kind is PredictorKind.GCN or kind is PredictorKind.BIGCN:
        fwd = tape.const(normalize_adjacency(batch.adj))
    if kind is PredictorKind.BIGCN:
        bwd = tape.const(normalize_adjacency(np.swapaxes(batch.adj, -1, -2)))
        half = tape.const(0.5)
    if kind is PredictorKind.RATSGCN:
        A = tape.const(batch.adj)
        pair_mask = tape.const(batch.mask[:, :, None] * batch.mask[:, None, :])

    for layer in range(config.layers):
        HW = H @ p[f"W{layer}"]
        if kind is PredictorKind.MLP:
            Z = HW
        elif kind is PredictorKind.GCN:
            Z = fwd @ HW
        elif kind is PredictorKind.BIGCN:
            Z = (fwd @ HW + bwd @ (H @ p[f"Wr{layer}"])) * half
        else:
            rp = {k: p[f"rats{layer}.{k}"] for k in RATS_FIELDS}
            A_l = _rats(H, A, rp, pair_mask)
            if trails is not None:
                trails.append(A_l.data)
            Z = ad.row_normalize(A_l) @ HW
        H = ad.relu(Z)
    pooled = ad.mean_nodes(H, batch.mask)
    return pooled @ p["W_out"] + p["b_out"]


def _param_tensors(tape: Tape, params: PredictorParams, track: bool) -> dict[str, Tensor]:
    if track:
        return {k: tape.param(v, k) for k, v in params.arrays.items()}
    return {k: tape.const(v) for k, v in params.arrays.items()}


def forward_batch(params: PredictorParams, batch: Batch) -> np.ndarray:
    tape = Tape()
    out = build_forward(tape, params.config, _param_tensors(tape, params, False), batch)
    return out.data[:, 0].copy()


def forward(config: PredictorConfig, params: PredictorParams, cell: CellGraph) -> float:
    if params.config != config:
        raise ShapeMismatchError("params were built for a different config")
    return float(forward_batch(params, encode_cells([cell], config.vocab_size, config.max_nodes))[0])


def loss_expr(config: PredictorConfig, batch: Batch, targets: np.ndarray):
    """Autodiff expression ``mse(predict(batch), targets)`` for ``ad.grad_check``."""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)

    def expr(tape, _inputs, p):
        return ad.mse(build_forward(tape, config, p, batch), targets)

    return expr


def layer_trails(params: PredictorParams, cell: CellGraph) -> list[np.ndarray]:
    """Per-layer trail weights used for propagation, cropped to the real nodes.

    RATs-GCN: the redirected ``A_l`` of every layer. GCN/BI-GCN: the static
    adjacency. MLP: full trails between distinct nodes.
    """
    config = params.config
    n = cell.n
    if config.kind is PredictorKind.RATSGCN:
        tape = Tape()
        trails: list[np.ndarray] = []
        build_forward(tape, config, _param_tensors(tape, params, False),
                      encode_cells([cell], config.vocab_size, config.max_nodes), trails)
        return [t[0, :n, :n].copy() for t in trails]
    if config.kind is PredictorKind.MLP:
        full = np.ones((n, n)) - np.eye(n)
        return [full for _ in range(config.layers)]
    return [np.array(cell.adjacency) for _ in range(config.layers)]


# ------------------------------------------------------------------ training

@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_on_batch(config: PredictorConfig, batch: Batch, targets: np.ndarray, epochs: int = 300,
                   lr: float = 1e-3, seed: int = 0) -> tuple[PredictorParams, TrainLog]:
    targets = np.asarray(targets, dtype=np.float64)
    if len(batch) == 0:
        raise EmptyPoolError("cannot train on an empty pool")
    if np.any((targets < 0) | (targets > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    init = init_params(config, seed)
    # start the readout at the pool mean so early epochs fit ranking, not offset
    arrays = {**init.arrays, "b_out": np.array([targets.mean()])}
    state = AdamState(lr=lr)
    y = targets.reshape(-1, 1)
    log = TrainLog()
    for _ in range(epochs):
        tape = Tape()
        p = {k: tape.param(v, k) for k, v in arrays.items()}
        loss = ad.mse(build_forward(tape, config, p, batch), y)
        log.losses.append(float(loss.data))
        arrays, state = adam_update(arrays, backprop(tape, loss), state)
    params = PredictorParams(config, arrays)
    log.losses.append(float(np.mean((forward_batch(params, batch) - targets) ** 2)))
    return params, log


def train_predictor(config: PredictorConfig, pool: Sequence[tuple[CellGraph, float]],
                    epochs: int = 300, lr: float = 1e-3,
                    seed: int = 0) -> tuple[PredictorParams, TrainLog]:
    """Fit ``config`` to ``(cell, accuracy)`` pairs by full-batch Adam on MSE.

    ``log.losses`` holds the loss before every update plus the final loss.
    """
    if not pool:
        raise EmptyPoolError("cannot train on an empty pool")
    cells, acc = zip(*pool)
    batch = encode_cells(cells, config.vocab_size, config.max_nodes)
    return train_on_batch(config, batch, np.asarray(acc, dtype=np.float64), epochs, lr, seed)


def predict_all(config: PredictorConfig, params: PredictorParams, space: SearchSpace,
                chunk_size: int = 1024, jobs: int = 1) -> np.ndarray:
    """Scores for every entry of ``space``, in entry order.

    Evaluation is chunked; chunk boundaries do not depend on ``jobs``, so
    serial and threaded runs return identical vectors.
    """
    if params.config != config:
        raise ShapeMismatchError("params were built for a different config")
    batch = encode_space(space, config)
    starts = range(0, len(batch), chunk_size)
    chunks = [batch.take(np.arange(s, min(s + chunk_size, len(batch)))) for s in starts]
    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda b: forward_batch(params, b), chunks))
    else:
        parts = [forward_batch(params, b) for b in chunks]
    return np.concatenate(parts)
