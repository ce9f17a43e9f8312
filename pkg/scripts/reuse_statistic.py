"""Count the units covering 90% of the path-product mass in pruned nets
trained on the reused graph with two hidden layers.

Usage: python3 scripts/reuse_statistic.py [--P 90]
"""

import argparse
from collections import Counter

from hiermod.boolean_graph import family_spec
from hiermod.evaluation import TrialConfig, train_and_prune
from hiermod.paths import layer_coverage


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--P", type=float, default=90.0)
    args = ap.parse_args()
    cfg = TrialConfig(family_spec("reused"))
    tally = Counter()
    for w in cfg.widths:
        for s in cfg.seeds:
            m = train_and_prune(cfg, w, 2, s)
            if m.outcome is None or not m.outcome.ok:
                print(f"width {w} seed {s}: failed ({m.reason})")
                continue
            n1 = layer_coverage(m.outcome.model, 1, args.P).n_units
            n2 = layer_coverage(m.outcome.model, 2, args.P).n_units
            tally[(n1, n2)] += 1
            print(f"width {w} seed {s}: N1={n1} N2={n2} alive={m.outcome.model.alive_counts()}",
                  flush=True)
    print("counts:", dict(tally))


if __name__ == "__main__":
    main()
