"""Welch separability tests on dense and pruned nets for the separable graph.

For every width/depth/seed the dense net is trained (falling back through
the trial training grid) and, with --pruned, also sculpted over the full
pruning grid. Prints one row per architecture with the seed-majority verdict.

Usage: python3 scripts/table1_dense_separability.py [--pruned] [--out FILE.csv]
"""

import argparse
import csv
import sys

from hiermod.boolean_graph import family_spec
from hiermod.evaluation import TrialConfig, train_and_prune, train_dense
from hiermod.paths import input_separability_test, path_product_matrix


def verdict(net):
    pi = path_product_matrix(net)
    a = input_separability_test(net, [0, 1], [0, 1], [2, 3], pi=pi)
    b = input_separability_test(net, [2, 3], [2, 3], [0, 1], pi=pi)
    return a.reject and b.reject, a.result.p_value, b.result.p_value


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--pruned", action="store_true", help="test sculpted nets instead")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = TrialConfig(family_spec("separable"))
    rows = []
    for d in cfg.depths:
        for w in cfg.widths:
            flags = []
            for s in cfg.seeds:
                if args.pruned:
                    m = train_and_prune(cfg, w, d, s)
                    net = m.outcome.model if m.outcome else None
                else:
                    net = train_dense(cfg, w, d, s)[1]
                ok, p1, p2 = verdict(net) if net is not None else (False, float("nan"), float("nan"))
                flags.append(ok)
                rows.append([w, d, s, int(ok), repr(p1), repr(p2)])
            print(f"depth {d} width {w}: {'reject' if 2 * sum(flags) > len(flags) else 'keep'} "
                  f"({sum(flags)}/{len(flags)} seeds)", flush=True)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(["width", "depth", "seed", "reject_both", "p_12", "p_34"])
            w.writerows(rows)
    sys.exit(0)


if __name__ == "__main__":
    main()
