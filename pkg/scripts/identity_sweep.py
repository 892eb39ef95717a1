"""Tabulate the two routes to the optimal noise predictor across all timesteps.

Writes one CSV row per (config, t) with the worst disagreement between the
posterior-mean and score expressions, for plotting against t.

    python3 scripts/identity_sweep.py --out identity_sweep.csv
"""

import argparse
import csv

import numpy as np

from epsoracle import oracle as O
from epsoracle.config import GOLDEN, load_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="identity_sweep.csv")
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--far-tail", action="store_true", help="append 6-sigma tail probes")
    args = p.parse_args()

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "t", "alpha_bar", "max_abs_err", "max_rel_err", "max_mixed_err"])
        for name in GOLDEN:
            cfg = load_config(name)
            s, dist = cfg.schedule, cfg.distribution
            for t in range(1, s.T + 1):
                rng = np.random.default_rng([cfg.seed, t])
                x = O.draw_probes(dist, s, t, args.probes, rng, far_tail=args.far_tail)
                a, r = O.identity_errors(O.epsilon_star(dist, s, t, x), O.epsilon_from_score(dist, s, t, x))
                w.writerow([name, t, f"{s.alpha_bar(t):.17g}", f"{a.max():.3e}", f"{r.max():.3e}",
                            f"{np.minimum(a, r).max():.3e}"])
            print(f"{name}: done")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
