"""Violation counts against the adversarial fraction: 0, 0.05 .. 0.30, 20 seeds each, to one CSV."""
import argparse
import csv
from pathlib import Path

from gasper_confirm.scenarios import SWEEP_STRATEGIES, run_sweep, sweep_totals

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="out/beta_sweep.csv")
ap.add_argument("--seeds", type=int, default=20)
ap.add_argument("--workers", type=int, default=1)
a = ap.parse_args()

betas = ["0", "0.05", "0.1", "0.15", "0.2", "0.25", "0.3"]
fields = ["beta", "rule", "cells", "safety_premise_cells", "safety_violations",
          "monotonicity_premise_cells", "monotonicity_violations", "void_violations"]
Path(a.out).parent.mkdir(parents=True, exist_ok=True)
with open(a.out, "w", newline="") as fh:
    w = csv.DictWriter(fh, fieldnames=fields)
    w.writeheader()
    for beta in betas:
        rows, _ = run_sweep(SWEEP_STRATEGIES, range(a.seeds), (beta,), workers=a.workers)
        for rule, t in sweep_totals(rows).items():
            w.writerow({"beta": beta, "rule": rule, **t})
            print(beta, rule, t["safety_violations"], t["monotonicity_violations"], t["void_violations"])
print("wrote", a.out)
