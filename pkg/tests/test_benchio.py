import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratsnas.benchio import SynthSpec, dumps_benchmark, gen_synthetic, load_benchmark, save_benchmark
from ratsnas.cells import sort_by_flops
from ratsnas.errors import DuplicateIdError, ParseError, SpecError, ValidationError
from ratsnas.metrics import spearman


def _same_space(a, b):
    assert a.vocab == b.vocab and a.name == b.name and len(a) == len(b)
    for x, y in zip(a.entries, b.entries):
        assert x.id == y.id and x.flops == y.flops and x.accuracy == y.accuracy
        assert x.cell == y.cell


def test_round_trip(tmp_path, small_space):
    path = tmp_path / "b.jsonl"
    save_benchmark(path, small_space)
    loaded = load_benchmark(path)
    _same_space(small_space, loaded)
    assert loaded.flops_order.tolist() == small_space.flops_order.tolist()
    assert path.read_bytes().count(b"\n") == len(small_space) + 1
    assert b"\r" not in path.read_bytes()


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 40), nodes=st.integers(3, 7), ops=st.integers(1, 6), seed=st.integers(0, 999))
def test_round_trip_property(tmp_path_factory, n, nodes, ops, seed):
    space, _ = gen_synthetic(SynthSpec(n_cells=n, n_nodes=nodes, vocab_size=ops, seed=seed))
    path = tmp_path_factory.mktemp("rt") / "b.jsonl"
    save_benchmark(path, space)
    _same_space(space, load_benchmark(path))


def _lines(space):
    return dumps_benchmark(space).splitlines()


def test_truncated_last_line_names_the_line(tmp_path, small_space):
    text = dumps_benchmark(small_space)
    path = tmp_path / "t.jsonl"
    path.write_text(text[:-40])
    with pytest.raises(ParseError) as err:
        load_benchmark(path)
    assert err.value.line == len(small_space) + 1
    assert f"line {len(small_space) + 1}" in str(err.value)


def test_header_must_come_first(tmp_path, small_space):
    lines = _lines(small_space)
    path = tmp_path / "h.jsonl"
    path.write_text("\n".join([lines[1], lines[0], *lines[2:]]) + "\n")
    with pytest.raises(ParseError) as err:
        load_benchmark(path)
    assert err.value.line == 1


def test_duplicate_id(tmp_path, small_space):
    lines = _lines(small_space)
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join([*lines, lines[3]]) + "\n")
    with pytest.raises(DuplicateIdError):
        load_benchmark(path)


def test_invalid_cell_names_its_id(tmp_path, small_space):
    lines = _lines(small_space)
    rec = json.loads(lines[5])
    rec["adjacency"][-1][0] = 1  # output feeds input: cycle/terminal violation
    path = tmp_path / "v.jsonl"
    path.write_text("\n".join([*lines[:5], json.dumps(rec), *lines[6:]]) + "\n")
    with pytest.raises(ValidationError) as err:
        load_benchmark(path)
    assert err.value.cell_id == rec["id"]
    assert rec["id"] in str(err.value)


def test_unknown_fields_and_blank_lines_are_ignored(tmp_path, small_space):
    lines = _lines(small_space)
    rec = json.loads(lines[1])
    rec["note"] = "extra"
    path = tmp_path / "u.jsonl"
    path.write_text("\n".join([lines[0], "", json.dumps(rec), *lines[2:]]) + "\n\n")
    _same_space(small_space, load_benchmark(path))


def test_too_many_nodes_rejected(tmp_path, small_space):
    lines = _lines(small_space)
    header = json.loads(lines[0])
    header["max_nodes"] = 3
    path = tmp_path / "m.jsonl"
    path.write_text("\n".join([json.dumps(header), *lines[1:]]) + "\n")
    with pytest.raises(ValidationError):
        load_benchmark(path)


def test_spec_validation():
    with pytest.raises(SpecError):
        gen_synthetic(SynthSpec(n_cells=1))
    with pytest.raises(SpecError):
        gen_synthetic(SynthSpec(noise_sigma=-0.1))


def test_generator_is_deterministic():
    spec = SynthSpec(n_cells=500, noise_sigma=0.0, seed=3)
    a, da = gen_synthetic(spec)
    b, db = gen_synthetic(spec)
    assert dumps_benchmark(a) == dumps_benchmark(b) and da == db
    assert dumps_benchmark(gen_synthetic(SynthSpec(n_cells=500, seed=4))[0]) != dumps_benchmark(a)


def test_default_space_properties():
    space, desc = gen_synthetic(SynthSpec(seed=0))
    assert len(space) == 4096
    assert spearman(space.flops, space.accuracies) > 0.3
    acc = space.accuracies
    assert np.sum(acc == acc.max()) == 1
    assert desc["optimum"]["id"] == space.ids[int(np.argmax(acc))]
    assert all(0.0 <= a <= 1.0 for a in acc)


@pytest.mark.parametrize("seed", range(5))
def test_noise_free_optimum_is_unique(seed):
    space, _ = gen_synthetic(SynthSpec(n_cells=800, noise_sigma=0.0, seed=seed, vocab_size=2, n_nodes=4))
    acc = space.accuracies
    assert np.sum(acc == acc.max()) == 1


def test_sort_by_flops_examples():
    assert sort_by_flops(np.arange(6.0)).tolist() == list(range(6))
    assert sort_by_flops(np.full(6, 2.5)).tolist() == list(range(6))


def test_sort_by_flops_matches_comparison_sort():
    rng = np.random.default_rng(0)
    for _ in range(50):
        flops = rng.integers(0, 10, size=int(rng.integers(1, 200))).astype(float)
        oracle = sorted(range(len(flops)), key=lambda i: (flops[i], i))
        assert sort_by_flops(flops).tolist() == oracle


def test_flops_order_of_space(small_space):
    order = small_space.flops_order
    assert np.all(np.diff(small_space.flops[order]) >= 0)
