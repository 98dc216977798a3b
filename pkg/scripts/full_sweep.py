"""The 200-seed adversarial sweep over all three strategies."""
import argparse
import sys

from gasper_confirm.cli import main

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="out/sweep")
ap.add_argument("--seeds", default="0..199")
ap.add_argument("--workers", default="1")
a = ap.parse_args()

sys.exit(main(["sweep", "--seeds", a.seeds, "--workers", a.workers, "--out", a.out]))
