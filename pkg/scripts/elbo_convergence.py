"""Variational Thompson sampling on random 5x3 MDPs, averaged over seeds.

Writes one CSV with the seed-averaged smoothed ELBO, smoothed per-step regret and
value of the greedy policy of the variational mean, next to the optimal value.

    python scripts/elbo_convergence.py --seeds 5 --iterations 1000 --out results/elbo.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from tsrlhf.instances import random_mdp, stream
from tsrlhf.preference import LinkFunction
from tsrlhf.variational import ElboConfig, run_elbo_ts, smooth


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--actions", type=int, default=3)
    p.add_argument("--horizon", type=int, default=3)
    p.add_argument("--stationary", action="store_true", help="share one Gaussian per (s, a) across steps")
    p.add_argument("--out", default="results/elbo_convergence.csv")
    args = p.parse_args()

    cfg = ElboConfig(iterations=args.iterations, stationary=args.stationary)
    elbo, regret, value, vstar = [], [], [], []
    for seed in range(args.seeds):
        mdp = random_mdp(stream(seed, "mdp"), args.states, args.actions, args.horizon)
        res = run_elbo_ts(mdp, LinkFunction(), cfg, seed)
        elbo.append(res.smoothed_elbo)
        regret.append(smooth(res.regret, cfg.smoothing))
        value.append(res.value_of_mean_greedy)
        vstar.append(res.v_star)
        print(f"seed {seed}: smoothed elbo {res.smoothed_elbo[-1]:.3f}, "
              f"greedy value {res.value_of_mean_greedy[-1]:.3f} / V* {res.v_star:.3f}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "smoothed_elbo", "smoothed_regret", "value_of_mean_greedy", "v_star"])
        for i, row in enumerate(zip(*(np.mean(x, axis=0) for x in (elbo, regret, value))), start=1):
            w.writerow([i, *(repr(float(v)) for v in row), repr(float(np.mean(vstar)))])
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
