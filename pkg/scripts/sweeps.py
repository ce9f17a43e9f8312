"""Success-rate sweeps over the reuse count and the input overlap.

Usage: python3 scripts/sweeps.py [reuse|overlap ...] [--depth 2] [--out DIR]
"""

import argparse
from pathlib import Path

from hiermod.boolean_graph import family_spec
from hiermod.evaluation import TrialConfig, run_grid

SWEEPS = {"reuse": ("reused", "reuse", range(1, 9)),
          "overlap": ("overlap", "overlap", range(0, 5))}


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("sweeps", nargs="*", default=list(SWEEPS))
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/sweeps")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.sweeps:
        family, param, values = SWEEPS[name]
        for v in values:
            cfg = TrialConfig(family_spec(family, **{param: v}), depths=(args.depth,))
            rep = run_grid(cfg, threads=args.threads)
            (out / f"{name}_{v}.csv").write_text(rep.to_csv(), newline="")
            rates = rep.rates()[args.depth]
            print(f"{name}={v}: " + " ".join(f"{k}={r:.3f}" for k, r in rates.items()), flush=True)


if __name__ == "__main__":
    main()
