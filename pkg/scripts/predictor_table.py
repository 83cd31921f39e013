"""Compare predictor kinds by mAcc / Psp over training budgets.

Trains every kind on ``--runs`` random pools per budget and scores the
whole space. Prints a mean table and writes per-run rows to CSV.

    python3 scripts/predictor_table.py --synth --runs 5
    python3 scripts/predictor_table.py --bench nb201/cifar10.jsonl --runs 30
"""
import argparse
import csv
import time
from pathlib import Path

import numpy as np

from ratsnas.benchio import SynthSpec, gen_synthetic, load_benchmark
from ratsnas.metrics import evaluate
from ratsnas.predictors import PredictorConfig, PredictorKind, encode_space, predict_all, train_on_batch


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--bench")
    src.add_argument("--synth", action="store_true")
    p.add_argument("--cells", type=int, default=4096)
    p.add_argument("--kinds", nargs="+", default=[k.value for k in PredictorKind])
    p.add_argument("--budgets", type=int, nargs="+", default=[30, 60, 90])
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/predictor_table.csv")
    return p.parse_args()


def main():
    args = parse_args()
    space = load_benchmark(args.bench) if args.bench else gen_synthetic(SynthSpec(n_cells=args.cells))[0]
    rows = []
    for kind in args.kinds:
        config = PredictorConfig.for_space(kind, space)
        batch = encode_space(space, config)
        for budget in args.budgets:
            t0 = time.perf_counter()
            for run in range(args.runs):
                seed = args.seed + run
                pool = np.random.default_rng(seed).choice(len(space), size=budget, replace=False)
                params, _ = train_on_batch(config, batch.take(pool), space.accuracies[pool],
                                           args.epochs, seed=seed)
                rep = evaluate(predict_all(config, params, space), space, min(100, len(space)))
                rows.append((config.kind.value, budget, run, seed, rep.m_acc, rep.psp))
            print(f"{config.kind.value:8s} budget {budget:4d}: {time.perf_counter() - t0:6.1f}s")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "budget", "run", "seed", "m_acc", "psp"])
        w.writerows(rows)

    print(f"\n{'kind':8s} " + " ".join(f"{'b=' + str(b):>18s}" for b in args.budgets))
    for kind in dict.fromkeys(r[0] for r in rows):
        cells = []
        for b in args.budgets:
            sel = [r for r in rows if r[0] == kind and r[1] == b]
            cells.append(f"{np.mean([r[4] for r in sel]):7.2f} / {np.mean([r[5] for r in sel]) * 100:6.2f}")
        print(f"{kind:8s} " + " ".join(f"{c:>18s}" for c in cells))
    print("(mAcc % / Psp x100)")


if __name__ == "__main__":
    main()
