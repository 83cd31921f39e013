"""Command-line entry point: ``rats-nas <subcommand>`` (or ``python -m ratsnas``).

Exit codes: 0 success, 2 usage / validation error, 3 runtime failure.
The default seed can be overridden with the ``RATS_SEED`` environment variable.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchio import SynthSpec, gen_synthetic, load_benchmark, save_benchmark
from .cells import SearchSpace
from .errors import (
    CellError,
    DuplicateIdError,
    KTooLargeError,
    ParseError,
    SpecError,
    UnknownCellError,
    ValidationError,
)
from .metrics import evaluate
from .predictors import (
    PredictorConfig,
    PredictorKind,
    encode_space,
    layer_trails,
    load_params,
    predict_all,
    save_params,
    train_on_batch,
)
from .search import PredictorScorer, run_p3s, run_random_search

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
USAGE_ERRORS = (SpecError, ParseError, ValidationError, DuplicateIdError, KTooLargeError,
                UnknownCellError, CellError, FileNotFoundError, IsADirectoryError)
KIND_CHOICES = [k.value for k in PredictorKind] + ["oracle"]


def default_seed() -> int:
    return int(os.environ.get("RATS_SEED", "0"))


@dataclass
class RunConfig:
    subcommand: str
    bench: str | None = None
    synth: SynthSpec | None = None
    kind: str = PredictorKind.RATSGCN.value
    budgets: list[int] = field(default_factory=list)
    k: int = 10
    seed: int = 0
    runs: int = 1
    out: str | None = None

    def __post_init__(self):
        if (self.bench is None) == (self.synth is None):
            raise SpecError("exactly one benchmark source (--bench or --synth) is required")
        if self.runs < 1:
            raise SpecError("--runs must be >= 1")

    def load_space(self) -> SearchSpace:
        return _load_space(self.bench, self.synth)


_SPACES: dict = {}


def _load_space(bench: str | None, synth: SynthSpec | None) -> SearchSpace:
    key = (bench, synth)
    if key not in _SPACES:
        _SPACES[key] = load_benchmark(bench) if bench is not None else gen_synthetic(synth)[0]
    return _SPACES[key]


def _synth_spec(args) -> SynthSpec:
    return SynthSpec(n_cells=args.cells, n_nodes=args.nodes, vocab_size=args.ops,
                     seed=args.synth_seed,
                     noise_sigma=args.noise)


def _run_config(args) -> RunConfig:
    synth = _synth_spec(args) if args.synth else None
    budgets = getattr(args, "budget", None)
    if budgets is None:
        budgets = []
    elif isinstance(budgets, int):
        budgets = [budgets]
    return RunConfig(args.command, bench=args.bench, synth=synth, kind=getattr(args, "kind", "RATSGCN"),
                     budgets=list(budgets), k=getattr(args, "k", 10),
                     seed=args.seed, runs=getattr(args, "runs", 1), out=getattr(args, "out", None))


def _map_runs(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def _write_csv(path: str | None, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    text = buf.getvalue()
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text


# ------------------------------------------------------------------ subcommands

def cmd_gen_synth(args) -> int:
    spec = SynthSpec(n_cells=args.cells, n_nodes=args.nodes, vocab_size=args.ops,
                     seed=args.seed, noise_sigma=args.noise)
    space, desc = gen_synthetic(spec)
    save_benchmark(args.out, space)
    print(f"cells {len(space)}")
    print(f"optimum {desc['optimum']['id']} accuracy {desc['optimum']['accuracy']:.6f}")
    return EXIT_OK


def _eval_one(bench, synth, kind, budget, seed, k, epochs, hidden, layers):
    space = _load_space(bench, synth)
    if kind == "oracle":
        scores = np.array(space.accuracies)
    else:
        config = PredictorConfig.for_space(kind, space, layers=layers, hidden=hidden)
        rng = np.random.default_rng(seed)
        pool = rng.choice(len(space), size=budget, replace=False)
        batch = encode_space(space, config).take(pool)
        params, _ = train_on_batch(config, batch, space.accuracies[pool], epochs, seed=seed)
        scores = predict_all(config, params, space)
    report = evaluate(scores, space, k)
    return report.m_acc, report.psp


def cmd_eval_predictor(args) -> int:
    rc = _run_config(args)
    space = rc.load_space()
    if args.topk > len(space):
        raise KTooLargeError(f"k={args.topk} exceeds the space size {len(space)}")
    budgets = rc.budgets or [30]
    tasks, meta = [], []
    for budget in budgets:
        if budget > len(space):
            raise KTooLargeError(f"budget {budget} exceeds the space size {len(space)}")
        for run in range(rc.runs):
            seed = rc.seed + run
            tasks.append((rc.bench, rc.synth, rc.kind, budget, seed, args.topk, args.epochs,
                          args.hidden, args.layers))
            meta.append((run, seed, budget))
    results = _map_runs(_eval_one, tasks, args.jobs)
    rows = [[run, seed, budget, rc.kind, f"{m:.4f}", f"{p:.6f}"]
            for (run, seed, budget), (m, p) in zip(meta, results)]
    print(_write_csv(rc.out, ["run", "seed", "budget", "kind", "m_acc", "psp"], rows), end="")
    for budget in budgets:
        sel = [r for (_, _, b), r in zip(meta, results) if b == budget]
        print(f"# {rc.kind} budget={budget} runs={len(sel)} "
              f"mean_m_acc={np.mean([m for m, _ in sel]):.4f} mean_psp={np.mean([p for _, p in sel]):.6f}")
    return EXIT_OK


def _search_one(bench, synth, strategy, kind, k, budget, seed, stop, fallback, epochs, hidden, layers):
    space = _load_space(bench, synth)
    if strategy == "random":
        return run_random_search(space, seed, budget, stop)
    scorer = PredictorScorer(PredictorKind.parse(kind), layers=layers, hidden=hidden, epochs=epochs)
    return run_p3s(space, k, seed, budget, stop, scorer, fallback)


def cmd_search(args) -> int:
    rc = _run_config(args)
    space = rc.load_space()
    budget = args.budget if args.budget is not None else len(space)
    if args.strategy == "p3s" and budget < rc.k:
        raise SpecError(f"budget ({budget}) must be >= k ({rc.k})")
    seeds = [rc.seed + run for run in range(rc.runs)]
    tasks = [(rc.bench, rc.synth, args.strategy, rc.kind, rc.k, budget, s, args.stop_at_optimum,
              args.fallback, args.epochs, args.hidden, args.layers) for s in seeds]
    results = _map_runs(_search_one, tasks, args.jobs)
    out_dir = Path(args.out_dir)
    (out_dir / "events").mkdir(parents=True, exist_ok=True)
    rows = []
    for run, (seed, res) in enumerate(zip(seeds, results)):
        res.write_events(out_dir / "events" / f"run_{run:03d}.jsonl")
        rows.append([run, seed, args.strategy, rc.kind if args.strategy == "p3s" else "",
                     rc.k, budget, res.samples_used, res.samples_to_optimum,
                     f"{res.best_accuracy:.6f}"])
    print(_write_csv(str(out_dir / "results.csv"),
                     ["run", "seed", "strategy", "kind", "k", "budget", "samples_used",
                      "samples_to_optimum", "best_accuracy"], rows), end="")
    found = [r.samples_to_optimum for r in results]
    best = [r.best_accuracy * 100 for r in results]
    print(f"# runs={len(results)} mean_samples_to_optimum={np.mean(found):.2f} "
          f"median_samples_to_optimum={statistics.median(found)} "
          f"mean_best={np.mean(best):.4f} optimum={space.accuracies.max() * 100:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args)
    space = rc.load_space()
    budget = rc.budgets[0] if rc.budgets else min(100, len(space))
    if budget > len(space):
        raise KTooLargeError(f"budget {budget} exceeds the space size {len(space)}")
    config = PredictorConfig.for_space(rc.kind, space, layers=args.layers, hidden=args.hidden)
    pool = np.random.default_rng(rc.seed).choice(len(space), size=budget, replace=False)
    batch = encode_space(space, config).take(pool)
    params, log = train_on_batch(config, batch, space.accuracies[pool], args.epochs, seed=rc.seed)
    save_params(args.out, params)
    report = evaluate(predict_all(config, params, space), space, min(100, len(space)))
    print(f"trained {config.kind.value} on {budget} cells: final_mse={log.final_loss:.6g} "
          f"m_acc={report.m_acc:.4f} psp={report.psp:.6f}")
    return EXIT_OK


def cmd_dump_trails(args) -> int:
    rc = _run_config(args)
    space = rc.load_space()
    params = load_params(args.params)
    if args.cell not in space.index_of:
        raise UnknownCellError(f"no cell with id {args.cell!r}")
    cell = space.entries[space.index_of[args.cell]].cell
    print("layer,src,dst,weight")
    for layer, weights in enumerate(layer_trails(params, cell)):
        for src in range(cell.n):
            for dst in range(cell.n):
                if weights[src, dst] != 0.0 or args.all:
                    print(f"{layer},{src},{dst},{weights[src, dst]:.9f}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bench", help="benchmark JSONL file")
    src.add_argument("--synth", action="store_true", help="generate a synthetic benchmark in memory")
    p.add_argument("--cells", type=int, default=4096, help="synthetic: number of cells")
    p.add_argument("--nodes", type=int, default=8, help="synthetic: nodes per cell")
    p.add_argument("--ops", type=int, default=4, help="synthetic: non-terminal operations")
    p.add_argument("--noise", type=float, default=0.002, help="synthetic: accuracy noise sigma")
    p.add_argument("--synth-seed", type=int, default=0, help="synthetic: generator seed")


def _add_model(p: argparse.ArgumentParser, oracle: bool = True) -> None:
    p.add_argument("--kind", default="RATSGCN", type=lambda s: "oracle" if s == "oracle"
                   else PredictorKind.parse(s).value,
                   choices=KIND_CHOICES if oracle else KIND_CHOICES[:-1])
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rats-nas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    jobs_default = os.cpu_count() or 1

    p = sub.add_parser("gen-synth", help="write a synthetic benchmark file")
    p.add_argument("--cells", type=int, default=4096)
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--ops", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.002)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", default="synthetic.jsonl")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("eval-predictor", help="mAcc / Psp of a predictor trained on random samples")
    _add_source(p)
    _add_model(p)
    p.add_argument("--budget", type=int, nargs="+", default=[30])
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--topk", type=int, default=100)
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_eval_predictor)

    p = sub.add_parser("search", help="P3S or random search runs")
    _add_source(p)
    _add_model(p, oracle=False)
    p.add_argument("--strategy", choices=["p3s", "random"], default="p3s")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--budget", type=int, default=None, help="query budget (default: whole space)")
    p.add_argument("--stop-at-optimum", action="store_true")
    p.add_argument("--fallback", choices=["stay", "upper", "backtrack"], default="stay")
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.add_argument("--out-dir", default="search_out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train one predictor and save its parameters")
    _add_source(p)
    _add_model(p, oracle=False)
    p.add_argument("--budget", type=int, nargs=1)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", default="params.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("dump-trails", help="per-layer trail weights of one cell")
    _add_source(p)
    p.add_argument("--params", required=True)
    p.add_argument("--cell", required=True)
    p.add_argument("--all", action="store_true", help="also print zero-weight trails")
    p.add_argument("--seed", type=int, default=default_seed())
    p.set_defaults(func=cmd_dump_trails)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
