"""Command-line entry point: ``streamglm {simulate,fit-stream,classify-eval}``.

Exit codes: 0 success, 1 hard failure, 2 too many failed replications,
64 usage or schema error, 65 malformed data.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import inference, metrics, simgen, snapshot
from .batch import CsvFormatError, CsvSchemaError, read_csv
from .errors import InvalidInputError, NonConvergenceError, NumericFailureError
from .euipw import HeteroState, ingest_hetero
from .glm import Family
from .propensity import PropensityState
from .updater import UipwState, ingest

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARTIAL = 2
EXIT_USAGE = 64
EXIT_DATA = 65

SEED_ENV = "STREAMGLM_SEED"
DEFAULT_SEED = 0
MAX_FAILURE_RATE = 0.05
_VARIANCE = {"batch": inference.Source.CURRENT_BATCH,
             "accumulated": inference.Source.ACCUMULATED}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def resolve_seed(flag, environ=None) -> int:
    """Seed precedence: explicit flag, then the environment variable, then the default."""
    if flag is not None:
        return flag
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def resolve_sizes(K, n_k, N_K):
    """Fill in the missing one of (K, n_k, N_K); reject inconsistent triples."""
    given = sum(v is not None for v in (K, n_k, N_K))
    if given < 2:
        raise UsageError("give two of --K, --n-k, --N-K")
    if K is None:
        K, rem = divmod(N_K, n_k)
    elif n_k is None:
        n_k, rem = divmod(N_K, K)
    else:
        rem = 0
    if rem or (N_K is not None and K * n_k != N_K):
        raise UsageError(f"--N-K {N_K} is not K * n_k")
    return K, n_k


def _write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def cmd_simulate(args) -> int:
    K, n_k = resolve_sizes(args.K, args.n_k, args.N_K)
    estimators = None if args.estimators is None else tuple(
        e.strip() for e in args.estimators.split(",") if e.strip())
    try:
        spec = simgen.DesignSpec(args.design, K, n_k, args.reps, resolve_seed(args.seed),
                                 _VARIANCE[args.variance], estimators)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    report = simgen.run_experiment(spec, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(args.with_estimates), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_csv(out / "table.csv", report.table_rows(),
               ["estimator", "mse", "failures", "successes"])
    _write_csv(out / "timing.csv", report.timing_rows(), ["estimator", "mean_seconds"])
    if report.failure_rate > MAX_FAILURE_RATE:
        print(f"warning: {report.failure_rate:.1%} of replications failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _open_input(name):
    return sys.stdin if name == "-" else open(name, newline="", encoding="utf-8")


def _bands(state, moments, batch, source):
    """Per-coordinate 95% bands, or NaNs where no variance estimate applies."""
    p = state.p
    if isinstance(state, HeteroState):
        return np.full(p, np.nan), np.full(p, np.nan)
    try:
        if source is inference.Source.ACCUMULATED:
            cov = inference.sigma_from_moments(moments)
        else:
            cov = inference.sigma_hat(state, batch)
        region = inference.confidence_region(state.beta_hat, cov, state.n_total)
    except NumericFailureError:
        return np.full(p, np.nan), np.full(p, np.nan)
    return region.lower, region.upper


def _estimate_columns(p):
    cols = ["k", "N_k"] + [f"alpha{i + 1}" for i in range(p)] + [f"beta{i + 1}" for i in range(p)]
    cols += [f"lower{i + 1}" for i in range(p)] + [f"upper{i + 1}" for i in range(p)]
    return cols


def cmd_fit_stream(args) -> int:
    if args.batch_size is None and not args.batch_col:
        raise UsageError("give --batch-size or --batch-col")
    source = _VARIANCE[args.variance]
    family = Family.parse(args.family)
    q = args.z_cols
    if args.resume:
        snap = snapshot.load(args.resume)
        state = snap.state
        if state.family is not family or state.p != args.p or (
                q != (state.q if isinstance(state, HeteroState) else 0)):
            raise UsageError("snapshot family or dimensions do not match the flags")
        if args.known_propensity is not None and state.prop.known_pi != args.known_propensity:
            raise UsageError("--known-propensity differs from the resumed snapshot")
        digest, moments = snap.digest, snap.moments
    else:
        prop = (PropensityState.known(args.known_propensity, args.p)
                if args.known_propensity is not None else PropensityState.initial(args.p))
        state = (HeteroState.initial(family, args.p, q, prop) if q
                 else UipwState.initial(family, args.p, prop))
        digest, moments = snapshot.EMPTY_DIGEST, None

    est_path = Path(args.estimates) if args.estimates else Path(args.snapshot).with_name(
        "estimates.csv")
    fresh = not args.resume or not est_path.exists() or est_path.stat().st_size == 0
    columns = _estimate_columns(args.p)
    with _open_input(args.input) as fh, open(est_path, "w" if fresh else "a", newline="",
                                                   encoding="utf-8") as out:
        writer = csv.writer(out, lineterminator="\n")
        if fresh:
            writer.writerow(columns)
        for batch in read_csv(fh, args.p, q, None if args.batch_col else args.batch_size):
            family.check_response(batch.y[batch.observed])
            if q:
                state = ingest_hetero(state, batch)
            else:
                state = ingest(state, batch)
                m = inference.batch_moments(state, batch)
                moments = m if moments is None else moments + m
            digest = snapshot.chain_digest(digest, batch)
            lower, upper = _bands(state, moments, batch, source)
            row = [state.batch_count, state.n_total]
            row += [f"{v:.17g}" for v in np.concatenate(
                [state.alpha_hat, state.beta_hat, lower, upper])]
            writer.writerow(row)
            out.flush()
    snapshot.save(snapshot.Snapshot(state, digest, moments), args.snapshot)
    return EXIT_OK


def cmd_classify_eval(args) -> int:
    snap = snapshot.load(args.snapshot)
    state = snap.state
    if state.family is not Family.BERNOULLI:
        raise UsageError("classification needs a bernoulli snapshot")
    q = state.q if isinstance(state, HeteroState) else 0
    batches = list(read_csv(_open_input(args.input), state.p, q, batch_size=10**9))
    if not batches:
        raise InvalidInputError("evaluation file has no rows")
    x = np.vstack([b.x[b.observed] for b in batches])
    y = np.concatenate([b.y[b.observed] for b in batches])
    # Only the shared coefficients score; batch-specific nuisance effects are not carried.
    scores = Family.BERNOULLI.mean(x @ state.beta_hat)
    result = {"n": int(y.size), "threshold": args.threshold,
              "accuracy": metrics.accuracy(y, scores, args.threshold),
              "auc": metrics.auc(y, scores)}
    text = json.dumps(result, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamglm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("--design", required=True, choices=[d.value for d in simgen.Design])
    sim.add_argument("--K", type=int)
    sim.add_argument("--n-k", type=int)
    sim.add_argument("--N-K", type=int)
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", required=True)
    sim.add_argument("--estimators", help="comma-separated subset of estimators")
    sim.add_argument("--variance", choices=sorted(_VARIANCE), default="accumulated")
    sim.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")
    sim.add_argument("--with-estimates", action="store_true",
                     help="include per-replication estimates in report.json")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit-stream", help="fit a CSV batch stream with snapshots")
    fit.add_argument("--input", required=True, help="CSV file, or - for stdin")
    fit.add_argument("--family", required=True, choices=["gaussian", "bernoulli"])
    fit.add_argument("--p", type=int, required=True)
    group = fit.add_mutually_exclusive_group()
    group.add_argument("--batch-col", action="store_true", help="group rows by the batch column")
    group.add_argument("--batch-size", type=int)
    fit.add_argument("--snapshot", required=True, help="where to write the final snapshot")
    fit.add_argument("--resume", help="snapshot to continue from")
    fit.add_argument("--z-cols", type=int, default=0)
    fit.add_argument("--known-propensity", type=float)
    fit.add_argument("--variance", choices=sorted(_VARIANCE), default="batch")
    fit.add_argument("--estimates", help="estimates CSV (default: estimates.csv beside the snapshot)")
    fit.set_defaults(func=cmd_fit_stream)

    cls = sub.add_parser("classify-eval", help="accuracy and AUC of a bernoulli snapshot")
    cls.add_argument("--snapshot", required=True)
    cls.add_argument("--input", required=True)
    cls.add_argument("--threshold", type=float, default=0.5)
    cls.add_argument("--out")
    cls.set_defaults(func=cmd_classify_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, CsvSchemaError, snapshot.SnapshotError) as exc:
        print(f"streamglm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CsvFormatError, InvalidInputError) as exc:
        print(f"streamglm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFailureError, NonConvergenceError, OSError) as exc:
        print(f"streamglm: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
