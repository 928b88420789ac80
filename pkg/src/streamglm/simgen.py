"""Seeded simulation designs and the Monte Carlo replication runner.

Batch ``j`` of replication ``r`` under master seed ``s`` draws from
``default_rng([s, r, j])``, so any single batch can be regenerated in
isolation and replications do not depend on execution order.
"""

from __future__ import annotations

import enum
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, euipw, inference
from .batch import Batch
from .errors import InvalidInputError, NonConvergenceError, NumericFailureError
from .glm import Family, _expit
from .updater import UipwState, ingest

BETA_LINEAR = np.array([2.0, 1.5, 1.0, 0.5])
BETA_LOGISTIC = np.array([0.5, 0.5, 1.0, 1.0])
ALPHA_4D = np.array([0.5, 1.0, 1.5, 0.5])
BETA_HETERO = np.array([0.5, 0.5])
ALPHA_HETERO = np.array([0.5, 1.0])
GAMMA_BOUNDS = np.array([1.0, 2.0])


class Design(enum.Enum):
    LINEAR_4D = "linear_4d"
    LOGISTIC_4D = "logistic_4d"
    HETERO_LOGISTIC = "hetero_logistic"

    @property
    def family(self) -> Family:
        return Family.GAUSSIAN if self is Design.LINEAR_4D else Family.BERNOULLI

    @property
    def beta0(self) -> np.ndarray:
        return {Design.LINEAR_4D: BETA_LINEAR, Design.LOGISTIC_4D: BETA_LOGISTIC,
                Design.HETERO_LOGISTIC: BETA_HETERO}[self].copy()

    @property
    def alpha0(self) -> np.ndarray:
        return (ALPHA_HETERO if self is Design.HETERO_LOGISTIC else ALPHA_4D).copy()

    @property
    def streaming_estimator(self) -> str:
        return "euipw" if self is Design.HETERO_LOGISTIC else "uipw"

    @property
    def estimators(self) -> tuple[str, ...]:
        return ("oracle", self.streaming_estimator, "average", "naive")


def _covariates_4d(n, rng):
    return np.column_stack([rng.uniform(size=(n, 2)), rng.standard_normal((n, 2))])


def _missing(x, alpha, rng):
    return (rng.uniform(size=x.shape[0]) < _expit(x @ alpha)).astype(float)


def _blank(delta, y):
    return np.where(delta == 1.0, y, np.nan)


def gen_linear_batch(n: int, rng, beta=BETA_LINEAR, alpha=ALPHA_4D, all_observed=False) -> Batch:
    """Linear model with unit-variance Gaussian noise and logistic MAR on x."""
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    x = _covariates_4d(n, rng)
    y = x @ beta + rng.standard_normal(n)
    delta = np.ones(n) if all_observed else _missing(x, alpha, rng)
    return Batch(delta, _blank(delta, y), x)


def gen_logistic_batch(n: int, rng, beta=BETA_LOGISTIC, alpha=ALPHA_4D, all_observed=False) -> Batch:
    """Logistic model with the same covariates and missingness as the linear design."""
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    x = _covariates_4d(n, rng)
    y = (rng.uniform(size=n) < _expit(x @ beta)).astype(float)
    delta = np.ones(n) if all_observed else _missing(x, alpha, rng)
    return Batch(delta, _blank(delta, y), x)


def hetero_gamma(rng, batch_index: int) -> np.ndarray:
    """Nuisance effects of one batch: coordinates uniform on (-1, 1) and (-2, 2)."""
    key = int(rng.integers(0, 2**63 - 1))
    g = np.random.default_rng([key, int(batch_index)])
    return g.uniform(-GAMMA_BOUNDS, GAMMA_BOUNDS)


def gen_hetero_batch(n: int, rng, batch_index: int, gamma=None, beta=BETA_HETERO,
                     alpha=ALPHA_HETERO) -> Batch:
    """Logistic model with a batch-specific confounder effect.

    ``x`` has two U(0,1) coordinates and ``z_t ~ N(x_t - 0.3, 1)``.  When
    ``gamma`` is None it is drawn from ``rng`` keyed by ``batch_index``.
    """
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    gamma = hetero_gamma(rng, batch_index) if gamma is None else np.asarray(gamma, float)
    x = rng.uniform(size=(n, 2))
    z = x - 0.3 + rng.standard_normal((n, 2))
    y = (rng.uniform(size=n) < _expit(x @ beta + z @ gamma)).astype(float)
    delta = _missing(x, alpha, rng)
    return Batch(delta, _blank(delta, y), x, z)


def batch_rng(seed: int, replication: int, j: int):
    return np.random.default_rng([int(seed), int(replication), int(j)])


def generate_batch(design: Design, n: int, seed: int, replication: int, j: int) -> Batch:
    rng = batch_rng(seed, replication, j)
    if design is Design.LINEAR_4D:
        return gen_linear_batch(n, rng)
    if design is Design.LOGISTIC_4D:
        return gen_logistic_batch(n, rng)
    return gen_hetero_batch(n, rng, j)


def generate_stream(design, K: int, n_k: int, seed: int, replication: int = 0):
    design = Design(design)
    return [generate_batch(design, n_k, seed, replication, j) for j in range(1, K + 1)]


@dataclass(frozen=True)
class DesignSpec:
    design: Design
    K: int
    n_k: int
    replications: int = 200
    seed: int = 0
    variance: inference.Source = inference.Source.ACCUMULATED
    estimators: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        object.__setattr__(self, "variance", inference.Source(self.variance))
        if self.K < 1 or self.n_k < 1 or self.replications < 1:
            raise InvalidInputError("K, n_k and replications must all be positive")
        if self.estimators is not None:
            chosen = tuple(self.estimators)
            unknown = set(chosen) - set(self.design.estimators)
            if unknown or not chosen:
                raise InvalidInputError(
                    f"estimators must be a non-empty subset of {self.design.estimators}")
            object.__setattr__(self, "estimators", chosen)

    @property
    def active_estimators(self) -> tuple[str, ...]:
        if self.estimators is None:
            return self.design.estimators
        return tuple(e for e in self.design.estimators if e in self.estimators)

    @property
    def N_K(self) -> int:
        return self.K * self.n_k

    def echo(self) -> dict:
        d = asdict(self)
        d["design"] = self.design.value
        d["variance"] = self.variance.value
        d["estimators"] = None if self.estimators is None else list(self.estimators)
        return d

    @classmethod
    def from_echo(cls, d: dict) -> DesignSpec:
        return cls(**d)


_FAILURES = (NumericFailureError, NonConvergenceError, InvalidInputError,
             baselines.BatchFitError, np.linalg.LinAlgError)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _uipw_with_moments(family, batches, source):
    state = UipwState.initial(family, batches[0].p)
    total = None
    for b in batches:
        state = ingest(state, b)
        if source is inference.Source.ACCUMULATED:
            m = inference.batch_moments(state, b)
            total = m if total is None else total + m
    return state, total


def _euipw(family, batches):
    state = euipw.HeteroState.initial(family, batches[0].p, batches[0].q)
    for b in batches:
        state = euipw.ingest_hetero(state, b)
    return state


@dataclass
class ReplicationResult:
    replication: int
    estimates: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    covered: list | None = None
    wald_reject: bool | None = None


def run_replication(spec: DesignSpec, replication: int) -> ReplicationResult:
    """One replication: generate the stream and run every estimator on it."""
    design = spec.design
    family = design.family
    batches = generate_stream(design, spec.K, spec.n_k, spec.seed, replication)
    res = ReplicationResult(replication)
    hetero = design is Design.HETERO_LOGISTIC
    beta0 = design.beta0
    active = spec.active_estimators

    def record(name, fn):
        if name not in active:
            return None
        try:
            out, secs = _timed(fn)
        except _FAILURES as exc:
            res.failures[name] = f"{type(exc).__name__}: {exc}"
            return None
        res.seconds[name] = secs
        return out

    if hetero:
        out = record("oracle", lambda: euipw.oracle_fit_hetero(batches, family)[0])
        if out is not None:
            res.estimates["oracle"] = out
        out = record("euipw", lambda: _euipw(family, batches).beta_hat)
        if out is not None:
            res.estimates["euipw"] = out
        out = record("average", lambda: euipw.average_fit_hetero(batches, family))
        if out is not None:
            res.estimates["average"] = out
        out = record("naive", lambda: euipw.naive_fit_hetero(batches[-1], family))
        if out is not None:
            res.estimates["naive"] = out
        return res

    out = record("oracle", lambda: baselines.oracle_fit(batches, family))
    if out is not None:
        res.estimates["oracle"] = out
    out = record("uipw", lambda: _uipw_with_moments(family, batches, spec.variance))
    if out is not None:
        state, moments = out
        res.estimates["uipw"] = state.beta_hat
        try:
            if spec.variance is inference.Source.ACCUMULATED:
                cov = inference.sigma_from_moments(moments)
            else:
                cov = inference.sigma_hat(state, batches[-1])
            region = inference.confidence_region(state.beta_hat, cov, state.n_total)
            res.covered = [bool(c) for c in (region.lower < beta0) & (beta0 < region.upper)]
            _, pval = inference.wald_test(state.beta_hat, cov, state.n_total, beta0)
            res.wald_reject = bool(pval < 0.05)
        except _FAILURES as exc:
            res.failures["coverage"] = f"{type(exc).__name__}: {exc}"
    out = record("average", lambda: baselines.average_fit(batches, family))
    if out is not None:
        res.estimates["average"] = out
    out = record("naive", lambda: baselines.naive_fit(batches[-1], family))
    if out is not None:
        res.estimates["naive"] = out
    return res


@dataclass
class EstimatorSummary:
    mse: float
    mean_seconds: float
    failures: int
    successes: int


@dataclass
class ExperimentReport:
    spec: DesignSpec
    summaries: dict
    coverage: list | None
    wald_size: float | None
    failure_rate: float
    estimates: dict
    environment: dict

    def table_rows(self):
        """Deterministic per-estimator rows (no timings)."""
        return [{"estimator": name, "mse": s.mse, "failures": s.failures,
                 "successes": s.successes} for name, s in self.summaries.items()]

    def timing_rows(self):
        return [{"estimator": name, "mean_seconds": s.mean_seconds}
                for name, s in self.summaries.items()]

    def to_dict(self, with_estimates=False) -> dict:
        d = {
            "config": self.spec.echo(),
            "estimators": {k: asdict(v) for k, v in self.summaries.items()},
            "coverage": self.coverage,
            "wald_size": self.wald_size,
            "failure_rate": self.failure_rate,
            "environment": self.environment,
        }
        if with_estimates:
            d["estimates"] = {k: v.tolist() for k, v in self.estimates.items()}
        return d


def environment_record() -> dict:
    import platform

    from . import __version__
    return {"machine": platform.machine(), "processor": platform.processor(),
            "python": platform.python_version(), "numpy": np.__version__,
            "cpus": os.cpu_count(), "build": __version__}


def _run_chunk(args):
    spec, reps = args
    return [run_replication(spec, r) for r in reps]


def run_experiment(spec: DesignSpec, jobs: int | None = 1) -> ExperimentReport:
    """Run all replications, in parallel when ``jobs > 1``, and aggregate in order."""
    reps = list(range(spec.replications))
    jobs = (os.cpu_count() or 1) if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(reps) == 1:
        results = [run_replication(spec, r) for r in reps]
    else:
        chunks = [reps[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for chunk in pool.map(_run_chunk, [(spec, c) for c in chunks])
                       for r in chunk]
        results.sort(key=lambda r: r.replication)
    return aggregate(spec, results)


def aggregate(spec: DesignSpec, results) -> ExperimentReport:
    beta0 = spec.design.beta0
    summaries = {}
    estimates = {}
    for name in spec.active_estimators:
        ok = [r for r in results if name in r.estimates]
        est = np.array([r.estimates[name] for r in ok]).reshape(len(ok), beta0.size)
        estimates[name] = est
        mse = float(np.mean(np.sum((est - beta0) ** 2, axis=1))) if ok else float("nan")
        secs = float(np.mean([r.seconds[name] for r in ok])) if ok else float("nan")
        summaries[name] = EstimatorSummary(mse, secs, len(results) - len(ok), len(ok))
    cov = [r.covered for r in results if r.covered is not None]
    coverage = np.mean(cov, axis=0).tolist() if cov else None
    walds = [r.wald_reject for r in results if r.wald_reject is not None]
    wald_size = float(np.mean(walds)) if walds else None
    failed = sum(1 for r in results if r.failures)
    return ExperimentReport(spec, summaries, coverage, wald_size, failed / len(results),
                            estimates, environment_record())
