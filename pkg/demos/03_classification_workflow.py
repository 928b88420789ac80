#!/usr/bin/env python3
"""Command-line workflow on a monthly-style stream of binary outcomes.

Writes a synthetic CSV of 87 batches (intercept plus three covariates,
about 15% of outcomes missing), fits it with ``streamglm fit-stream`` in
two sittings joined by a snapshot, then scores a complete holdout with
``streamglm classify-eval``.
"""

import csv
import json
import tempfile
from pathlib import Path

import numpy as np

from streamglm.batch import Batch, to_csv_string
from streamglm.cli import main

BETA = np.array([-0.5, 1.0, -0.8, 0.6])
ALPHA = np.array([1.75, 0.3, -0.2, 0.1])


def make_batches(rng, K, n, complete=False):
    out = []
    for _ in range(K):
        x = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-x @ BETA))).astype(float)
        if complete:
            delta = np.ones(n)
        else:
            delta = (rng.uniform(size=n) < 1 / (1 + np.exp(-x @ ALPHA))).astype(float)
        out.append(Batch(delta, np.where(delta == 1, y, np.nan), x))
    return out


work = Path(tempfile.mkdtemp())
rng = np.random.default_rng(5)
stream = make_batches(rng, 87, 150)
(work / "first.csv").write_text(to_csv_string(stream[:60]))
(work / "rest.csv").write_text(to_csv_string(stream[60:]))
(work / "holdout.csv").write_text(to_csv_string(make_batches(rng, 1, 3000, True), False))
print(f"working directory: {work}")

common = ["--family", "bernoulli", "--p", "4", "--batch-col",
          "--snapshot", str(work / "model.json")]
main(["fit-stream", "--input", str(work / "first.csv"), *common])
main(["fit-stream", "--input", str(work / "rest.csv"), "--resume", str(work / "model.json"),
      *common])

with open(work / "estimates.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
print(f"{'k':>3} {'N_k':>6} " + " ".join(f"{'beta' + str(i):>8}" for i in range(1, 5))
      + f" {'half-width':>11}")
for row in rows:
    if int(row["k"]) in (1, 10, 30, 60, 87):
        beta = [float(row[f"beta{i}"]) for i in range(1, 5)]
        half = max(float(row[f"upper{i}"]) - float(row[f"lower{i}"]) for i in range(1, 5)) / 2
        print(f"{row['k']:>3} {row['N_k']:>6} " + " ".join(f"{b:>8.3f}" for b in beta)
              + f" {half:>11.3f}")
print(f"true beta: {BETA}")

main(["classify-eval", "--snapshot", str(work / "model.json"),
      "--input", str(work / "holdout.csv"), "--out", str(work / "metrics.json")])
print("holdout metrics:", json.loads((work / "metrics.json").read_text()))
