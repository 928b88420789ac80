#!/usr/bin/env python3
"""Small-scale Monte Carlo comparison of the streaming and reference estimators.

Runs each design at a few batch counts with a fixed total sample size and
prints the mean squared error of every estimator.  The default of 20
replications finishes in a few minutes on one core; pass a larger count
(for example 200) for tighter estimates.

    python demos/02_simulation_tables.py [replications]
"""

import sys

from streamglm.simgen import DesignSpec, run_experiment

REPS = int(sys.argv[1]) if len(sys.argv) > 1 else 20
GRID = [("linear_4d", 100_000, (50, 100, 200, 500)),
        ("logistic_4d", 100_000, (50, 100, 200)),
        ("hetero_logistic", 20_000, (40, 50, 80, 100))]

for design, total, Ks in GRID:
    print(f"\n{design}, N_K = {total}, {REPS} replications")
    header = None
    for K in Ks:
        report = run_experiment(DesignSpec(design, K, total // K, REPS, seed=1))
        names = list(report.summaries)
        if header is None:
            header = f"{'K':>5} {'n_k':>6} " + " ".join(f"{n:>10}" for n in names)
            print(header)
        cells = " ".join(f"{report.summaries[n].mse:>10.3e}" for n in names)
        print(f"{K:>5} {total // K:>6} {cells}")
