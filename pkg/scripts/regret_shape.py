"""Cumulative regret of exact posterior sampling averaged over seeds.

Prints Regret(t) at t = T/4, T/2, T and the ratio Regret(T)/Regret(T/4)
(4 for linear growth, 2 for square-root growth, close to 1 once learning stops),
and writes the averaged curve as CSV.

    python scripts/regret_shape.py --seeds 20 --rounds 3000 --out results/regret_shape.csv
"""

import argparse
import csv
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from tsrlhf.thompson import RunConfig, run_ts


def one_seed(args):
    seed, rounds, transition_mode, count = args
    cfg = RunConfig(rounds=rounds, seed=seed, transition_mode=transition_mode,
                    mdp={"kind": "random", "num_states": 5, "num_actions": 3, "horizon": 3},
                    hypothesis_class={"kind": "perturbed_qstar", "count": count, "noise": 0.5})
    return np.cumsum(run_ts(cfg, keep_posteriors=False).increments)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--rounds", type=int, default=3000)
    p.add_argument("--count", type=int, default=31, help="hypothesis class size")
    p.add_argument("--transition-mode", default="true_P", choices=["true_P", "estimated_P"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results/regret_shape.csv")
    args = p.parse_args()

    jobs = [(s, args.rounds, args.transition_mode, args.count) for s in range(args.seeds)]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            curves = list(ex.map(one_seed, jobs))
    else:
        curves = [one_seed(j) for j in jobs]
    curves = np.stack(curves)
    mean = curves.mean(axis=0)
    se = curves.std(axis=0, ddof=1) / np.sqrt(len(curves)) if len(curves) > 1 else np.zeros_like(mean)
    T = args.rounds
    for t in (T // 4, T // 2, T):
        print(f"Regret({t}) = {mean[t - 1]:.3f} +- {se[t - 1]:.3f}")
    print(f"Regret(T)/Regret(T/4) = {mean[-1] / mean[T // 4 - 1]:.3f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_regret", "stderr"])
        for t in range(T):
            w.writerow([t + 1, repr(float(mean[t])), repr(float(se[t]))])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
