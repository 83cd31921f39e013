import numpy as np
import pytest

from ratsnas.benchio import SynthSpec, gen_synthetic
from ratsnas.cells import CellGraph, OpVocabulary, validate_cell

OPS = ("conv3x3", "conv1x1", "maxpool3x3")
CRITERIA: list[str] = []


@pytest.fixture
def vocab():
    return OpVocabulary(("input", *OPS, "output"))


def random_cell(rng, vocab, n=7, p=0.4):
    adj = np.triu((rng.random((n, n)) < p).astype(float), 1)
    names = ["input", *rng.choice(OPS, size=n - 2), "output"]
    return validate_cell(CellGraph.from_names(names, adj, vocab), vocab)


@pytest.fixture
def cell_factory(vocab):
    def make(seed, n=7, p=0.4):
        return random_cell(np.random.default_rng(seed), vocab, n, p)
    return make


@pytest.fixture(scope="session")
def small_space():
    return gen_synthetic(SynthSpec(n_cells=300, n_nodes=7, vocab_size=3, seed=11))[0]


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


class NoisyOracle:
    """Cheap scorer: true accuracy plus seeded Gaussian noise, redrawn per fit."""

    def __init__(self, sigma=0.01):
        self.sigma = sigma

    def fit(self, space, pool, seed):
        return seed

    def score(self, space, params):
        rng = np.random.default_rng(params)
        return space.accuracies + rng.normal(0.0, self.sigma, len(space))


def ladder_space(accs, vocab=None):
    """Space whose i-th entry has FLOPs i and accuracy accs[i]."""
    from ratsnas.cells import BenchmarkEntry, SearchSpace
    vocab = vocab or OpVocabulary(("input", "conv3x3", "output"))
    cell = CellGraph.from_names(["input", "conv3x3", "output"],
                                [[0, 1, 0], [0, 0, 1], [0, 0, 0]], vocab)
    entries = tuple(BenchmarkEntry(f"e{i:05d}", cell, float(i), float(a)) for i, a in enumerate(accs))
    return SearchSpace(entries, vocab, "ladder")
