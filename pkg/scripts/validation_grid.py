"""Run the 36-trial grid on each validation family and print success rates.

Usage: python3 scripts/validation_grid.py [family ...] [--out DIR]
"""

import argparse
import sys
import time
from pathlib import Path

from hiermod.boolean_graph import VALIDATION_FAMILIES, family_spec
from hiermod.evaluation import TrialConfig, TrialReport, run_trial


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("families", nargs="*", default=list(VALIDATION_FAMILIES))
    ap.add_argument("--out", default="results/validation")
    ap.add_argument("--depths", default="1,2,3")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fam in args.families:
        cfg = TrialConfig(family_spec(fam), depths=tuple(int(d) for d in args.depths.split(",")))
        results = []
        for w, d, s in cfg.trials():
            t0 = time.time()
            r = run_trial(cfg, w, d, s)
            results.append(r)
            print(f"{fam} w={w} d={d} s={s} {time.time() - t0:5.1f}s ok={int(r.ok)} "
                  f"{r.reason or ''} modules={r.n_modules} in={int(r.input_modules)} "
                  f"out={int(r.output_modules)} mid={int(r.middle_separation)} "
                  f"exact={int(r.exact_structure)}", flush=True)
        report = TrialReport(cfg, results)
        (out / f"{fam}.csv").write_text(report.to_csv(), newline="")
        (out / f"{fam}.json").write_text(report.to_json())
        print(f"{fam}: exact rate over depth >= {cfg.spec.gate_levels}: "
              f"{report.exact_rate():.3f}", flush=True)
    sys.exit(0)


if __name__ == "__main__":
    main()
