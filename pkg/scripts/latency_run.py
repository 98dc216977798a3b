"""Fault-free run: per-block confirmation latency for every rule, plus finalization."""
import argparse

from gasper_confirm.monitors import TraceData, latency_table
from gasper_confirm.scenarios import latency_config
from gasper_confirm.simnet import run_scenario

ap = argparse.ArgumentParser()
ap.add_argument("--seed", type=int, default=0)
a = ap.parse_args()

trace, _ = run_scenario(latency_config(seed=a.seed))
table = latency_table(TraceData(trace))
for k, agg in table["aggregate"].items():
    print(f"{k:12s} p50={agg['p50']} p90={agg['p90']} max={agg['max']} unconfirmed={agg['unconfirmed']}")
f = [r["finalization"] for r in table["rows"] if r["finalization"] is not None]
if f:
    print(f"finalization in slots: min={min(f)} max={max(f)} ({min(f) * table['seconds_per_slot']}s .. "
          f"{max(f) * table['seconds_per_slot']}s)")
