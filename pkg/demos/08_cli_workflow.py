"""The whole CLI surface, driven end to end from Python.

Writes a scenario file, then runs: allocate, bounds, simulate, compare,
sweep-p, sensitivity, and estimate, leaving the CSV outputs in a
temporary directory for plotting.
"""

import json
import tempfile
from pathlib import Path

from bpcc.cli import main

root = Path(tempfile.mkdtemp(prefix="bpcc_cli_"))
scenario = {
    "r": 5000,
    "m": 200,
    "scheme": "bpcc",
    "workers": [
        {"mu": 45.0, "alpha": 1 / 45.0},
        {"mu": 30.0, "alpha": 1 / 30.0},
        {"mu": 22.0, "alpha": 1 / 22.0},
        {"mu": 9.0, "alpha": 1 / 9.0},
        {"mu": 3.0, "alpha": 1 / 3.0},
    ],
    "straggler": {"fraction": 0.2, "delay_factor": 3},
    "trials": 500,
    "seed": 12,
}
scen = root / "scenario.json"
scen.write_text(json.dumps(scenario, indent=2))
print(f"scenario file: {scen}\n")

for argv in (
    ["allocate", str(scen)],
    ["bounds", str(scen)],
    ["simulate", str(scen), "--out", str(root / "trace.csv"), "--grid", "200"],
    ["compare", str(scen), "--out", str(root / "compare.csv"),
     "--trace-out", str(root / "traces.csv")],
    ["sweep-p", str(scen), "--out", str(root / "sweep.csv"), "--p", "1,2,4,8,16,32"],
    ["sensitivity", str(scen), "--out", str(root / "sens.csv"), "--deltas", "0.05,0.25,0.5"],
):
    print(f"$ bpcc {' '.join(argv)}")
    rc = main(argv)
    assert rc == 0, rc
    print()

# Parameter estimation from a timing CSV produced by the model itself.
import csv

import numpy as np

from bpcc.model import WorkerProfile, sample_task_times

rng = np.random.default_rng(0)
w = WorkerProfile(mu=9.42e4, alpha=1.75e-4)
timings = root / "timings.csv"
with open(timings, "w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow(["task_size", "duration_seconds"])
    for r in (500, 1000, 2000):
        for d in sample_task_times(w, r, 1000, rng):
            writer.writerow([r, f"{d:.9g}"])
print(f"$ bpcc estimate {timings}")
main(["estimate", str(timings)])
print(f"\noutputs under {root}")
