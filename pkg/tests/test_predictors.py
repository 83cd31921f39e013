import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cell
from ratsnas.autodiff import grad_check
from ratsnas.cells import SearchSpace
from ratsnas.errors import EmptyPoolError, ShapeMismatchError
from ratsnas.predictors import (
    PredictorConfig,
    PredictorKind,
    PredictorParams,
    RatsParams,
    encode_cells,
    forward,
    forward_batch,
    init_params,
    layer_trails,
    load_params,
    loss_expr,
    predict_all,
    rats_module,
    save_params,
    train_on_batch,
    train_predictor,
)

KINDS = list(PredictorKind)


def _config(kind, vocab, n=7, **kw):
    return PredictorConfig(PredictorKind.parse(kind), len(vocab), n, **kw)


def _rand_rats(rng, f, h, n, scale=3.0):
    p = RatsParams.init(rng, f, h, n)
    return RatsParams(*(rng.normal(0, scale, np.shape(a)) for a in
                        (p.W_q, p.W_k, p.W_v, p.W_off, p.b_off, p.W_str, p.b_str)))


def test_kind_aliases():
    assert PredictorKind.parse("RATS-GCN") is PredictorKind.RATSGCN
    assert PredictorKind.parse("bi-gcn") is PredictorKind.BIGCN
    with pytest.raises(ValueError):
        PredictorKind.parse("transformer")


def test_config_invariants():
    with pytest.raises(ValueError):
        PredictorConfig(PredictorKind.GCN, 5, 7, layers=0)
    with pytest.raises(ValueError):
        PredictorConfig(PredictorKind.GCN, 5, 7, hidden=0)


def test_rats_gcn_extreme_returns_adjacency(cell_factory):
    rng = np.random.default_rng(0)
    for seed in range(20):
        cell = cell_factory(seed)
        X = rng.normal(size=(cell.n, 6))
        out = rats_module(X, cell.adjacency, RatsParams.gcn_extreme(6, 4, cell.n))
        assert np.max(np.abs(out - cell.adjacency)) < 1e-6


def test_rats_mlp_extreme_removes_trails(cell_factory):
    cell = cell_factory(1)
    X = np.random.default_rng(1).normal(size=(cell.n, 6))
    out = rats_module(X, cell.adjacency, RatsParams.mlp_extreme(6, 4, cell.n))
    assert np.max(np.abs(out)) < 1e-6


def test_rats_output_range_sweep():
    rng = np.random.default_rng(7)
    lo, hi = np.inf, -np.inf
    for _ in range(10_000):
        n = int(rng.integers(2, 9))
        A = np.triu(rng.random((n, n)) < 0.5, 1).astype(float)
        X = rng.normal(0, 2, size=(n, 5))
        out = rats_module(X, A, _rand_rats(rng, 5, 3, n))
        lo, hi = min(lo, out.min()), max(hi, out.max())
    assert 0.0 <= lo and hi <= 1.0
    assert lo == 0.0 and hi == 1.0  # the clamp is actually exercised


def test_rats_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        rats_module(np.zeros((4, 5)), np.zeros((3, 3)), RatsParams.gcn_extreme(5, 2, 3))
    with pytest.raises(ShapeMismatchError):
        rats_module(np.zeros((3, 5)), np.zeros((3, 3)), RatsParams.gcn_extreme(4, 2, 3))


def _extreme_pair(config, rats_params_fn, other_kind, seed):
    base = init_params(config, seed)
    rats = base
    for layer in range(config.layers):
        rats = rats.with_rats(layer, rats_params_fn(config.layer_in(layer), config.hidden,
                                                    config.max_nodes))
    other_cfg = PredictorConfig(other_kind, config.vocab_size, config.max_nodes,
                                config.layers, config.hidden)
    shared = {k: v for k, v in base.arrays.items() if not k.startswith("rats")}
    return rats, PredictorParams(other_cfg, shared)


@pytest.mark.parametrize("extreme,other", [(RatsParams.gcn_extreme, PredictorKind.GCN),
                                           (RatsParams.mlp_extreme, PredictorKind.MLP)])
def test_forward_degeneracy(vocab, extreme, other):
    rng = np.random.default_rng(3)
    cells = [random_cell(rng, vocab, int(rng.integers(3, 8))) for _ in range(30)]
    config = _config("RATSGCN", vocab, n=7)
    rats, plain = _extreme_pair(config, extreme, other, seed=5)
    batch = encode_cells(cells, config.vocab_size, config.max_nodes)
    diff = forward_batch(rats, batch) - forward_batch(plain, batch)
    assert np.max(np.abs(diff)) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_full_model_gradients(kind, vocab):
    rng = np.random.default_rng(11)
    config = _config(kind, vocab, n=7, hidden=4)
    for seed in range(2):
        cells = [random_cell(rng, vocab, 7)]
        batch = encode_cells(cells, config.vocab_size, config.max_nodes)
        params = init_params(config, seed).arrays
        rep = grad_check(loss_expr(config, batch, [0.7]), {}, params, tolerance=1e-4)
        assert rep.passed, (kind, rep.max_rel_error, rep.worst)


def test_predict_all_singleton(small_space):
    single = SearchSpace(small_space.entries[:1], small_space.vocab)
    config = PredictorConfig.for_space("RATSGCN", single)
    params = init_params(config, 0)
    scores = predict_all(config, params, single)
    assert scores.shape == (1,)
    assert scores[0] == forward(config, params, single.entries[0].cell)


@pytest.mark.parametrize("kind", KINDS)
def test_predict_all_matches_forward(kind, small_space):
    config = PredictorConfig.for_space(kind, small_space)
    params = init_params(config, 1)
    scores = predict_all(config, params, small_space, chunk_size=64)
    for i in (0, 17, 299):
        assert abs(scores[i] - forward(config, params, small_space.entries[i].cell)) < 1e-12


def test_predict_all_is_permutation_equivariant(small_space):
    config = PredictorConfig.for_space("RATSGCN", small_space)
    params = init_params(config, 2)
    perm = np.random.default_rng(0).permutation(len(small_space))
    shuffled = SearchSpace(tuple(small_space.entries[i] for i in perm), small_space.vocab)
    a = predict_all(config, params, small_space)
    b = predict_all(config, params, shuffled)
    np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)


def test_predict_all_parallel_equals_serial(small_space):
    config = PredictorConfig.for_space("BIGCN", small_space)
    params = init_params(config, 3)
    serial = predict_all(config, params, small_space, chunk_size=50, jobs=1)
    threaded = predict_all(config, params, small_space, chunk_size=50, jobs=4)
    assert serial.tobytes() == threaded.tobytes()


def test_training_is_deterministic_and_reduces_loss(small_space):
    config = PredictorConfig.for_space("RATSGCN", small_space)
    pool = [(e.cell, e.accuracy) for e in small_space.entries[:20]]
    p1, log1 = train_predictor(config, pool, epochs=60, seed=4)
    p2, log2 = train_predictor(config, pool, epochs=60, seed=4)
    assert p1 == p2 and log1.losses == log2.losses
    assert log1.final_loss < log1.initial_loss
    assert len(log1.losses) == 61
    p3, _ = train_predictor(config, pool, epochs=60, seed=5)
    assert p3 != p1


@pytest.mark.parametrize("kind", KINDS)
def test_loss_rarely_increases(kind, small_space):
    # Adam is not monotone; bound how often a step makes things worse
    config = PredictorConfig.for_space(kind, small_space)
    batch = encode_cells([e.cell for e in small_space.entries[:30]], config.vocab_size,
                         config.max_nodes)
    _, log = train_on_batch(config, batch, small_space.accuracies[:30], epochs=200, seed=0)
    ups = np.sum(np.diff(log.losses) > 0)
    assert log.final_loss < log.initial_loss
    assert ups / len(log.losses) < 0.5


def test_training_errors(small_space):
    config = PredictorConfig.for_space("GCN", small_space)
    with pytest.raises(EmptyPoolError):
        train_predictor(config, [])
    with pytest.raises(ValueError):
        train_predictor(config, [(small_space.entries[0].cell, 1.5)])


def test_params_json_round_trip(tmp_path, small_space):
    for kind in KINDS:
        config = PredictorConfig.for_space(kind, small_space)
        params = init_params(config, 9)
        path = tmp_path / f"{kind.value}.json"
        save_params(path, params)
        again = load_params(path)
        assert again == params
        assert again.config.kind is kind


def test_params_json_rejects_wrong_shapes(small_space):
    config = PredictorConfig.for_space("GCN", small_space)
    obj = init_params(config, 0).to_json()
    obj["arrays"]["W0"]["shape"] = [1, len(obj["arrays"]["W0"]["data"])]
    with pytest.raises(ShapeMismatchError):
        PredictorParams.from_json(json.loads(json.dumps(obj)))


def test_params_reject_non_finite(small_space):
    params = init_params(PredictorConfig.for_space("MLP", small_space), 0)
    with pytest.raises(ValueError):
        params.replace({"b_out": np.array([np.inf])})


@pytest.mark.parametrize("kind", ["GCN", "MLP", "BIGCN"])
@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), extra=st.integers(1, 4))
def test_padding_does_not_change_predictions(kind, seed, extra):
    from ratsnas.cells import OpVocabulary
    vocab = OpVocabulary(("input", "conv3x3", "conv1x1", "maxpool3x3", "output"))
    cell = random_cell(np.random.default_rng(seed), vocab, 6)
    tight = _config(kind, vocab, n=6)
    loose = _config(kind, vocab, n=6 + extra)
    params = init_params(tight, seed)
    padded = PredictorParams(loose, params.arrays)
    assert abs(forward(tight, params, cell) - forward(loose, padded, cell)) < 1e-12


def test_layer_trails(small_space):
    cell = small_space.entries[0].cell
    gcn = init_params(PredictorConfig.for_space("GCN", small_space), 0)
    assert all(np.array_equal(t, cell.adjacency) for t in layer_trails(gcn, cell))
    config = PredictorConfig.for_space("RATSGCN", small_space)
    rats = init_params(config, 0)
    trails = layer_trails(rats, cell)
    assert len(trails) == config.layers
    assert all(t.shape == (cell.n, cell.n) and t.min() >= 0 and t.max() <= 1 for t in trails)


def test_forward_rejects_foreign_params(small_space):
    a = PredictorConfig.for_space("GCN", small_space)
    b = PredictorConfig.for_space("GCN", small_space, hidden=8)
    with pytest.raises(ShapeMismatchError):
        forward(a, init_params(b, 0), small_space.entries[0].cell)
