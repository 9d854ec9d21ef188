"""
Running an experiment plan
==========================

A plan lists a corpus, methods with parameter grids and the k values to
score. The report holds one CSV row per query, grid point and k.
"""

import json
import os

from adacur import ExperimentPlan, run_benchmark

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, "plans", "rounds_sweep.json")) as f:
    plan = ExperimentPlan.from_dict(json.load(f))
plan.csv = plan.json = None

report = run_benchmark(plan)
for s in report.summary:
    if s["k"] == 1:
        print(f"{s['method']:8s} rounds={s['rounds']!s:4s} split={s['split_ki']!s:4s} "
              f"recall@1={s['mean_recall']:.3f}")
print(report.to_csv(no_timing=True).splitlines()[0])
for b in report.best_splits:
    print("best split (chosen on the test queries):", b["k"], b["best_split_ki"])
