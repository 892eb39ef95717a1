"""RMSE of the grid least-squares fit against the closed-form optimum as n grows.

    python3 scripts/convergence.py --config gmm3_1d --t 50 --seeds 5
"""

import argparse

import numpy as np

from epsoracle import trainer as TR
from epsoracle.config import load_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="gmm3_1d")
    p.add_argument("--t", type=int, default=50)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--family", choices=("grid", "rbf"), default="grid")
    p.add_argument("--sizes", type=int, nargs="*", default=[10**3, 10**4, 10**5, 10**6])
    args = p.parse_args()

    cfg = load_config(args.config)
    spec = TR.GridSpec() if args.family == "grid" else TR.RBFSpec()
    print(f"{'n':>9} {'params':>7} {'median rmse':>12} {'min':>9} {'max':>9}")
    for n in args.sizes:
        rmses, params = [], 0
        for seed in range(args.seeds):
            try:
                _, rep = TR.fit_least_squares(spec, cfg.distribution, cfg.schedule, args.t, n,
                                              np.random.default_rng([cfg.seed, seed]), n_eval=20_000)
            except TR.UndersampledError as exc:
                print(f"{n:>9} skipped: {exc}")
                break
            rmses.append(rep.comparison.rmse)
            params = rep.n_params
        else:
            print(f"{n:>9} {params:>7} {np.median(rmses):>12.5f} {min(rmses):>9.5f} {max(rmses):>9.5f}")


if __name__ == "__main__":
    main()
