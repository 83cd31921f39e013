"""P3S versus random search on a benchmark: samples to the optimum and best-at-budget.

    python3 scripts/desk_search.py --synth --runs 31
    python3 scripts/desk_search.py --bench nb201/cifar10.jsonl --runs 30 --budget 150
"""
import argparse
import csv
import statistics
import time
from pathlib import Path

import numpy as np

from ratsnas.benchio import SynthSpec, gen_synthetic, load_benchmark
from ratsnas.predictors import PredictorKind
from ratsnas.search import PredictorScorer, run_p3s, run_random_search


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bench")
    src.add_argument("--synth", action="store_true")
    p.add_argument("--kind", default="RATSGCN")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--budget", type=int, default=None,
                   help="query budget; default searches until the optimum is found")
    p.add_argument("--runs", type=int, default=31)
    p.add_argument("--fallback", choices=["stay", "upper", "backtrack"], default="stay")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/desk_search.csv")
    return p.parse_args()


def main():
    args = parse_args()
    space = load_benchmark(args.bench) if args.bench else gen_synthetic(SynthSpec())[0]
    stop = args.budget is None
    budget = len(space) if stop else args.budget
    scorer = PredictorScorer(PredictorKind.parse(args.kind))
    rows = []
    t0 = time.perf_counter()
    for run in range(args.runs):
        seed = args.seed + run
        p = run_p3s(space, args.k, seed, budget, stop, scorer, args.fallback)
        r = run_random_search(space, seed, budget, stop)
        rows.append((run, seed, p.samples_to_optimum, p.best_accuracy, r.samples_to_optimum, r.best_accuracy))
        print(f"run {run:3d}: p3s {p.samples_to_optimum:>6} samples, best {p.best_accuracy:.4f} | "
              f"random {r.samples_to_optimum:>6} samples, best {r.best_accuracy:.4f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "p3s_samples", "p3s_best", "random_samples", "random_best"])
        w.writerows(rows)

    col = list(zip(*rows))
    print(f"\n{len(space)} cells, optimum {space.accuracies.max():.4f}, {time.perf_counter() - t0:.0f}s")
    print(f"P3S ({args.kind}): mean samples {np.mean(col[2]):.1f}, median {statistics.median(col[2])}, "
          f"mean best {np.mean(col[3]):.4f}")
    print(f"random:          mean samples {np.mean(col[4]):.1f}, median {statistics.median(col[4])}, "
          f"mean best {np.mean(col[5]):.4f}")


if __name__ == "__main__":
    main()
