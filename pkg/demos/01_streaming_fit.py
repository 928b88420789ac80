#!/usr/bin/env python3
"""Streaming fit of a linear model with responses missing at random.

Batches arrive one at a time.  After each one the estimator holds only a
few p x p summaries, yet its coefficients track the pooled fit that keeps
every row.  Halfway through, the state is saved to JSON and reloaded to
show that a stream can resume without its history.
"""

import tempfile
from pathlib import Path

import numpy as np

from streamglm import inference, snapshot
from streamglm.baselines import oracle_fit
from streamglm.glm import Family
from streamglm.simgen import BETA_LINEAR, generate_stream
from streamglm.updater import UipwState, ingest

K, N_K, SEED = 40, 1000, 3

batches = generate_stream("linear_4d", K, N_K, SEED)
state = UipwState.initial(Family.GAUSSIAN, 4)
moments = None
print(f"true beta: {BETA_LINEAR}")
print(f"{'k':>3} {'N_k':>6}  {'beta_hat':<40} {'gap to pooled':>13} {'max band':>9}")
for k, batch in enumerate(batches, start=1):
    state = ingest(state, batch)
    m = inference.batch_moments(state, batch)
    moments = m if moments is None else moments + m
    if k == K // 2:
        # Persist and reload; the remaining batches continue from the file alone.
        path = Path(tempfile.mkdtemp()) / "state.json"
        snapshot.save(snapshot.Snapshot(state, moments=moments), path)
        restored = snapshot.load(path)
        state, moments = restored.state, restored.moments
        print(f"    saved and reloaded {path.stat().st_size} bytes at k={k}")
    if k in (1, 2, 5, 10, 20, 30, 40):
        region = inference.confidence_region(state.beta_hat,
                                             inference.sigma_from_moments(moments),
                                             state.n_total)
        gap = np.linalg.norm(state.beta_hat - oracle_fit(batches[:k], Family.GAUSSIAN))
        half = np.max(region.upper - region.lower) / 2
        print(f"{k:>3} {state.n_total:>6}  {np.array2string(state.beta_hat, precision=4):<40} "
              f"{gap:>13.2e} {half:>9.4f}")
