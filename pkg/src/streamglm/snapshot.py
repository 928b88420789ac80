"""JSON snapshots of estimator state, for resuming a stream without its history.

Every float is stored as a decimal string with 17 significant digits in a
fixed-width exponent form, so a save/load cycle is bit-exact and the file
size depends only on ``p``, ``q`` and the digit width of the counters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields

import numpy as np

from .errors import InvalidInputError
from .euipw import HeteroState
from .glm import Family
from .inference import Moments
from .propensity import PropensityState
from .updater import UipwState

SCHEMA_VERSION = 1

_UIPW_ARRAYS = ("beta_hat", "alpha_prev", "sum_R_alpha", "sum_R_beta", "sum_R_ab",
                "sum_Rab_beta", "sum_Rab_alpha")
_EUIPW_ARRAYS = ("beta_hat", "alpha_prev", "gamma_last", "sum_G_alpha", "sum_G_beta",
                 "sum_G_ab", "sum_Gab_beta", "sum_Gab_alpha")
EMPTY_DIGEST = hashlib.sha256(b"").hexdigest()


class SnapshotError(InvalidInputError):
    """A snapshot file is malformed or written under another schema."""


def _fmt(v: float) -> str:
    return f"{float(v):+.16e}"


def _encode(arr) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": [_fmt(v) for v in arr.ravel()]}


def _decode(obj) -> np.ndarray:
    try:
        return np.array([float(v) for v in obj["data"]], dtype=float).reshape(obj["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"bad array entry: {exc}") from None


def chain_digest(previous: str, batch) -> str:
    """Ingest-log digest after absorbing ``batch``; chains from ``previous``."""
    return hashlib.sha256(bytes.fromhex(previous) + batch.digest()).hexdigest()


@dataclass(frozen=True)
class Snapshot:
    state: UipwState | HeteroState
    digest: str = EMPTY_DIGEST
    moments: Moments | None = None

    @property
    def kind(self) -> str:
        return "euipw" if isinstance(self.state, HeteroState) else "uipw"


def _prop_dict(prop: PropensityState) -> dict:
    return {"alpha_hat": _encode(prop.alpha_hat), "H_tilde": _encode(prop.H_tilde),
            "n_total": prop.n_total, "batch_count": prop.batch_count, "frozen": prop.frozen,
            "known_pi": None if prop.known_pi is None else _fmt(prop.known_pi)}


def _prop_from(d: dict) -> PropensityState:
    known = d["known_pi"]
    return PropensityState(_decode(d["alpha_hat"]), _decode(d["H_tilde"]), int(d["n_total"]),
                           int(d["batch_count"]), bool(d["frozen"]),
                           None if known is None else float(known))


_MOMENT_ARRAYS = ("bread", "s_sum", "v_sum", "ss", "sv", "vv")


def _moments_dict(m: Moments | None):
    if m is None:
        return None
    d = {name: _encode(getattr(m, name)) for name in _MOMENT_ARRAYS}
    d.update(n=m.n, propensity_estimated=m.propensity_estimated)
    return d


def _moments_from(d) -> Moments | None:
    if d is None:
        return None
    return Moments(int(d["n"]), *(_decode(d[name]) for name in _MOMENT_ARRAYS),
                   bool(d["propensity_estimated"]))


def to_dict(snap: Snapshot) -> dict:
    state = snap.state
    names = _EUIPW_ARRAYS if snap.kind == "euipw" else _UIPW_ARRAYS
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": snap.kind,
        "family": state.family.value,
        "counters": {"n_total": state.n_total, "batch_count": state.batch_count},
        "propensity": _prop_dict(state.prop),
        "arrays": {name: _encode(getattr(state, name)) for name in names},
        "ingest_digest": snap.digest,
        "moments": _moments_dict(snap.moments),
    }


def from_dict(d: dict) -> Snapshot:
    if not isinstance(d, dict) or d.get("schema_version") != SCHEMA_VERSION:
        raise SnapshotError(f"unsupported snapshot schema_version "
                            f"{d.get('schema_version') if isinstance(d, dict) else None!r}")
    try:
        kind = d["kind"]
        cls, names = {"uipw": (UipwState, _UIPW_ARRAYS),
                      "euipw": (HeteroState, _EUIPW_ARRAYS)}[kind]
        arrays = {name: _decode(d["arrays"][name]) for name in names}
        kwargs = dict(arrays, family=Family.parse(d["family"]), prop=_prop_from(d["propensity"]),
                      n_total=int(d["counters"]["n_total"]),
                      batch_count=int(d["counters"]["batch_count"]))
        digest = str(d["ingest_digest"])
        moments = _moments_from(d.get("moments"))
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotError(f"malformed snapshot: {exc!r}") from None
    known = {f.name for f in fields(cls)}
    state = cls(**{k: v for k, v in kwargs.items() if k in known})
    p = state.beta_hat.shape[0]
    if state.prop.p != p or state.alpha_prev.shape != (p,):
        raise SnapshotError("snapshot arrays have inconsistent dimensions")
    return Snapshot(state, digest, moments)


def dumps(snap: Snapshot) -> str:
    return json.dumps(to_dict(snap), indent=1, sort_keys=True) + "\n"


def loads(text: str) -> Snapshot:
    try:
        return from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"snapshot is not valid JSON: {exc}") from None


def save(snap: Snapshot, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(snap))


def load(path) -> Snapshot:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
