"""Domain types, validation and CSV ingestion.

Status coding follows the file convention used throughout the package:

* ordinary outcomes: ``1`` = event, ``0`` = censored;
* competing-risk outcomes: ``0`` = primary event, ``1`` = negative-control
  (competing) event, ``2`` = censored.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
import pandas as pd

from .exceptions import SchemaError, ValidationError

EVENT = 1
CENSORED = 0

CAUSE_PRIMARY = 0
CAUSE_NCO = 1
CAUSE_CENSORED = 2

_BINARY_LABELS = frozenset({CENSORED, EVENT})
_COMPETING_LABELS = frozenset({CAUSE_PRIMARY, CAUSE_NCO, CAUSE_CENSORED})


def _frozen(a, ndim: int, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if ndim == 2 and arr.ndim == 0:
        arr = arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SurvivalOutcome:
    """Observed right-censored times with their status codes."""

    time: np.ndarray
    status: np.ndarray
    competing: bool = False

    def __post_init__(self):
        object.__setattr__(self, "time", _frozen(self.time, 1))
        object.__setattr__(self, "status", _frozen(self.status, 1, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.time)

    @property
    def labels(self) -> frozenset:
        return _COMPETING_LABELS if self.competing else _BINARY_LABELS

    @property
    def event_label(self) -> int:
        """Status code of the primary event."""
        return CAUSE_PRIMARY if self.competing else EVENT

    def events(self, label: int | None = None) -> np.ndarray:
        """Boolean indicator of ``status == label`` (primary event by default)."""
        if label is None:
            label = self.event_label
        return self.status == label

    def take(self, index) -> "SurvivalOutcome":
        return SurvivalOutcome(self.time[index], self.status[index], self.competing)

    def equals(self, other: "SurvivalOutcome") -> bool:
        return (
            self.competing == other.competing
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.status, other.status)
        )


class NcoKind(str, enum.Enum):
    LINEAR = "linear"
    LOGLINEAR = "loglinear"
    SURVIVAL = "survival"
    COMPETING_RISK = "competing_risk"


@dataclass(frozen=True)
class NcoSpec:
    """Declares one negative control outcome and how to read it.

    ``column`` names the CSV column of a linear/loglinear NCO (defaults to
    ``name``). Survival NCOs are read from ``time_column``/``status_column``
    (defaults ``<name>_time``/``<name>_status``). A competing-risk NCO has no
    column of its own; it is encoded in the outcome status.
    """

    name: str
    kind: NcoKind
    column: str | None = None
    offset_column: str | None = None
    time_column: str | None = None
    status_column: str | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", NcoKind(self.kind))
        except ValueError:
            raise ValidationError(f"NCO {self.name!r}: unknown kind {self.kind!r}") from None
        if self.offset_column is not None and self.kind is not NcoKind.LOGLINEAR:
            raise ValidationError(
                f"NCO {self.name!r}: offset_column is only allowed for loglinear NCOs"
            )

    @property
    def value_column(self) -> str:
        return self.column or self.name

    @property
    def survival_columns(self) -> tuple[str, str]:
        return (
            self.time_column or f"{self.name}_time",
            self.status_column or f"{self.name}_status",
        )

    @classmethod
    def from_mapping(cls, m: Mapping) -> "NcoSpec":
        allowed = {"name", "kind", "column", "offset_column", "time_column", "status_column"}
        unknown = set(m) - allowed
        if unknown:
            raise ValidationError(f"unknown NCO keys: {sorted(unknown)}")
        return cls(**m)

    def to_mapping(self) -> dict:
        """Config-file form; inverse of :meth:`from_mapping`."""
        out = {"name": self.name, "kind": self.kind.value}
        for key in ("column", "offset_column", "time_column", "status_column"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


NcoValue = Union[np.ndarray, SurvivalOutcome]


@dataclass(frozen=True, eq=False)
class ProximalDataset:
    """Per-subject outcome, exposure, covariates and negative controls.

    ``W`` maps NCO names to a real column (linear/loglinear) or a separately
    censored :class:`SurvivalOutcome` (survival). Competing-risk NCOs live in
    ``outcome.status`` and have no ``W`` entry. ``offsets`` maps loglinear NCO
    names to their offset column.
    """

    outcome: SurvivalOutcome
    A: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: Mapping[str, NcoValue]
    nco_specs: tuple[NcoSpec, ...]
    offsets: Mapping[str, np.ndarray] = field(default_factory=dict)
    a_names: tuple[str, ...] = ()
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.outcome)
        for attr in ("A", "X", "Z"):
            arr = getattr(self, attr)
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            if arr.size == 0:
                arr = arr.reshape(n, 0)
            object.__setattr__(self, attr, _frozen(arr, 2))
        w = {}
        for k, v in dict(self.W).items():
            w[k] = v if isinstance(v, SurvivalOutcome) else _frozen(v, 1)
        object.__setattr__(self, "W", w)
        object.__setattr__(
            self, "offsets", {k: _frozen(v, 1) for k, v in dict(self.offsets).items()}
        )
        object.__setattr__(self, "nco_specs", tuple(self.nco_specs))
        for attr, prefix in (("a_names", "a"), ("x_names", "x"), ("z_names", "z")):
            names = tuple(getattr(self, attr))
            width = getattr(self, attr[0].upper()).shape[1]
            if not names:
                names = tuple(f"{prefix}{j + 1}" for j in range(width))
            object.__setattr__(self, attr, names)

    @property
    def n(self) -> int:
        return len(self.outcome)

    @property
    def p_A(self) -> int:
        return self.A.shape[1]

    @property
    def p_X(self) -> int:
        return self.X.shape[1]

    @property
    def p_Z(self) -> int:
        return self.Z.shape[1]

    def nco(self, name: str) -> NcoSpec:
        for spec in self.nco_specs:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def take(self, index) -> "ProximalDataset":
        """Subset (or resample) subjects by integer index."""
        index = np.asarray(index)
        w = {k: (v.take(index) if isinstance(v, SurvivalOutcome) else v[index]) for k, v in self.W.items()}
        return ProximalDataset(
            outcome=self.outcome.take(index),
            A=self.A[index],
            X=self.X[index],
            Z=self.Z[index],
            W=w,
            nco_specs=self.nco_specs,
            offsets={k: v[index] for k, v in self.offsets.items()},
            a_names=self.a_names,
            x_names=self.x_names,
            z_names=self.z_names,
        )

    def with_ncos(self, W: Mapping[str, NcoValue], nco_specs: Sequence[NcoSpec],
                  offsets: Mapping[str, np.ndarray] | None = None) -> "ProximalDataset":
        return ProximalDataset(
            outcome=self.outcome, A=self.A, X=self.X, Z=self.Z, W=W,
            nco_specs=tuple(nco_specs), offsets=offsets or {},
            a_names=self.a_names, x_names=self.x_names, z_names=self.z_names,
        )

    def equals(self, other: "ProximalDataset") -> bool:
        if not self.outcome.equals(other.outcome):
            return False
        for attr in ("A", "X", "Z"):
            if not np.array_equal(getattr(self, attr), getattr(other, attr)):
                return False
        # CSV column names are I/O metadata; an NCO is identified by name and kind
        key = lambda specs: [(sp.name, sp.kind) for sp in specs]
        if key(self.nco_specs) != key(other.nco_specs) or set(self.W) != set(other.W):
            return False
        for k, v in self.W.items():
            o = other.W[k]
            if isinstance(v, SurvivalOutcome):
                if not (isinstance(o, SurvivalOutcome) and v.equals(o)):
                    return False
            elif isinstance(o, SurvivalOutcome) or not np.array_equal(v, o):
                return False
        if set(self.offsets) != set(other.offsets):
            return False
        return all(np.array_equal(v, other.offsets[k]) for k, v in self.offsets.items())


@dataclass(frozen=True)
class Violation:
    invariant: str
    rows: tuple[int, ...] = ()
    detail: str = ""

    def __str__(self):
        rows = ""
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:10])
            more = f" (+{len(self.rows) - 10} more)" if len(self.rows) > 10 else ""
            rows = f" [rows {shown}{more}]"
        detail = f": {self.detail}" if self.detail else ""
        return f"{self.invariant}{detail}{rows}"


def _bad_rows(mask) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(mask))


def _check_outcome(outcome: SurvivalOutcome, what: str) -> list[Violation]:
    out = []
    t = outcome.time
    bad = ~np.isfinite(t)
    if bad.any():
        out.append(Violation(f"{what} time finite", _bad_rows(bad)))
    neg = np.isfinite(t) & (t < 0)
    if neg.any():
        out.append(Violation(f"{what} time nonnegative", _bad_rows(neg)))
    unknown = ~np.isin(outcome.status, sorted(outcome.labels))
    if unknown.any():
        out.append(Violation(
            f"{what} status label", _bad_rows(unknown),
            f"allowed labels {sorted(outcome.labels)}",
        ))
    return out


def validate(dataset: ProximalDataset) -> list[Violation]:
    """Check every dataset invariant; an empty list means the dataset is valid."""
    v: list[Violation] = []
    n = dataset.n
    outcome = dataset.outcome
    v.extend(_check_outcome(outcome, "outcome"))

    kinds = [s.kind for s in dataset.nco_specs]
    n_cr = kinds.count(NcoKind.COMPETING_RISK)
    cr_labels_used = outcome.competing or bool(np.any(outcome.status == CAUSE_CENSORED))
    if cr_labels_used and n_cr == 0:
        v.append(Violation(
            "competing-risk labels require a competing_risk NCO",
            _bad_rows(outcome.status == CAUSE_CENSORED) if not outcome.competing else (),
        ))
    if n_cr > 0 and not outcome.competing:
        v.append(Violation("competing_risk NCO requires competing-risk outcome labels"))
    if n_cr > 1:
        v.append(Violation("at most one competing_risk NCO", detail=f"found {n_cr}"))
    names = [s.name for s in dataset.nco_specs]
    if len(set(names)) != len(names):
        v.append(Violation("NCO names unique", detail=str(names)))

    for attr in ("A", "X", "Z"):
        arr = getattr(dataset, attr)
        if arr.shape[0] != n:
            v.append(Violation("row counts match", detail=f"{attr} has {arr.shape[0]} rows, outcome has {n}"))
            continue
        miss = ~np.isfinite(arr).all(axis=1)
        if miss.any():
            v.append(Violation("no missing values", _bad_rows(miss), f"column block {attr}"))
    if dataset.p_A == 0:
        v.append(Violation("at least one exposure column"))

    for spec in dataset.nco_specs:
        if spec.kind is NcoKind.COMPETING_RISK:
            continue
        w = dataset.W.get(spec.name)
        if w is None:
            v.append(Violation("NCO data present", detail=spec.name))
            continue
        if spec.kind is NcoKind.SURVIVAL:
            if not isinstance(w, SurvivalOutcome) or w.competing:
                v.append(Violation("survival NCO is a censored outcome", detail=spec.name))
                continue
            if len(w) != n:
                v.append(Violation("row counts match", detail=f"NCO {spec.name}"))
                continue
            v.extend(_check_outcome(w, f"NCO {spec.name}"))
            continue
        if isinstance(w, SurvivalOutcome) or w.ndim != 1:
            v.append(Violation("real-valued NCO column", detail=spec.name))
            continue
        if len(w) != n:
            v.append(Violation("row counts match", detail=f"NCO {spec.name}"))
            continue
        miss = ~np.isfinite(w)
        if miss.any():
            v.append(Violation("no missing values", _bad_rows(miss), f"NCO {spec.name}"))
        if spec.kind is NcoKind.LOGLINEAR:
            neg = np.isfinite(w) & (w < 0)
            if neg.any():
                v.append(Violation("loglinear NCO nonnegative", _bad_rows(neg), spec.name))
            off = dataset.offsets.get(spec.name)
            if off is not None:
                if len(off) != n:
                    v.append(Violation("row counts match", detail=f"offset of {spec.name}"))
                elif not np.isfinite(off).all():
                    v.append(Violation("no missing values", _bad_rows(~np.isfinite(off)), f"offset of {spec.name}"))
    stray = set(dataset.offsets) - {s.name for s in dataset.nco_specs if s.kind is NcoKind.LOGLINEAR}
    if stray:
        v.append(Violation("offset only for loglinear NCO", detail=str(sorted(stray))))

    # the first stage (1, A, Z, X) must have at least as many rows as columns
    needed = dataset.p_A + dataset.p_X + dataset.p_Z + 1
    if n < needed:
        v.append(Violation("sample size", detail=f"n={n} < p_A + p_X + p_Z + 1 = {needed}"))
    return v


# ---------------------------------------------------------------------------
# CSV ingestion


_SCHEMA_KEYS = {"time", "status", "exposure", "covariates", "nce"}


def _as_list(x) -> list[str]:
    if x is None:
        return []
    if isinstance(x, str):
        return [x]
    return list(x)


def _schema_columns(schema: Mapping, specs: Sequence[NcoSpec]) -> dict[str, list[str]]:
    unknown = set(schema) - _SCHEMA_KEYS
    if unknown:
        raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
    for key in ("time", "status", "exposure"):
        if not schema.get(key):
            raise SchemaError(f"schema is missing required role {key!r}")
    roles = {
        "time": [schema["time"]],
        "status": [schema["status"]],
        "exposure": _as_list(schema["exposure"]),
        "covariates": _as_list(schema.get("covariates")),
        "nce": _as_list(schema.get("nce")),
    }
    for spec in specs:
        if spec.kind is NcoKind.SURVIVAL:
            roles[f"nco:{spec.name}"] = list(spec.survival_columns)
        elif spec.kind in (NcoKind.LINEAR, NcoKind.LOGLINEAR):
            roles[f"nco:{spec.name}"] = [spec.value_column]
            if spec.offset_column:
                roles[f"offset:{spec.name}"] = [spec.offset_column]
    seen: dict[str, str] = {}
    for role, cols in roles.items():
        for c in cols:
            if c in seen:
                raise SchemaError(f"column {c!r} assigned to both {seen[c]} and {role}")
            seen[c] = role
    return roles


def _status_codes(values: np.ndarray, column: str, allowed: frozenset) -> np.ndarray:
    codes = np.round(values).astype(np.int64)
    bad = (codes != values) | ~np.isin(codes, sorted(allowed))
    if bad.any():
        rows = [int(i) + 1 for i in np.flatnonzero(bad)[:10]]
        raise ValidationError(
            f"unknown status label in column {column!r} at rows {rows}; allowed {sorted(allowed)}",
            [Violation("status label", tuple(r - 1 for r in rows), column)],
        )
    return codes


def ingest_csv(path, schema: Mapping, nco_specs: Sequence[NcoSpec | Mapping]) -> ProximalDataset:
    """Read a CSV file into a validated :class:`ProximalDataset`.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row.
    schema : mapping
        Column roles: ``time``, ``status``, ``exposure`` (list), and optional
        ``covariates`` and ``nce`` lists. Roles must be disjoint.
    nco_specs : sequence of NcoSpec or mappings

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    SchemaError
        If a configured column is absent or assigned twice.
    ValidationError
        On missing or non-numeric cells, negative times, unknown status
        labels, or any other violated dataset invariant. Rows are reported
        1-based, counting data rows after the header.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    specs = tuple(s if isinstance(s, NcoSpec) else NcoSpec.from_mapping(s) for s in nco_specs)
    roles = _schema_columns(schema, specs)

    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    used = [c for cols in roles.values() for c in cols]
    missing_cols = [c for c in used if c not in df.columns]
    if missing_cols:
        raise SchemaError(f"columns not found in {path.name}: {missing_cols}")

    values = {}
    for c in used:
        col = pd.to_numeric(df[c], errors="coerce")
        non_numeric = col.isna() & df[c].notna()
        if non_numeric.any():
            rows = [int(i) + 1 for i in np.flatnonzero(non_numeric.to_numpy())[:10]]
            raise ValidationError(f"non-numeric value in column {c!r} at rows {rows}")
        values[c] = col.to_numpy(dtype=float)
    holes = [(int(r) + 1, c) for c in used for r in np.flatnonzero(np.isnan(values[c]))]
    if holes:
        holes.sort()
        listing = ", ".join(f"row {r} column {c!r}" for r, c in holes[:10])
        raise ValidationError(
            f"missing values: {listing}" + (f" (+{len(holes) - 10} more)" if len(holes) > 10 else ""),
            [Violation("no missing values", (r - 1,), c) for r, c in holes],
        )

    competing = any(s.kind is NcoKind.COMPETING_RISK for s in specs)
    time = values[schema["time"]]
    neg = time < 0
    if neg.any():
        rows = [int(i) + 1 for i in np.flatnonzero(neg)[:10]]
        raise ValidationError(f"negative time in column {schema['time']!r} at rows {rows}")
    status = _status_codes(
        values[schema["status"]], schema["status"],
        _COMPETING_LABELS if competing else _BINARY_LABELS,
    )

    W: dict[str, NcoValue] = {}
    offsets = {}
    for spec in specs:
        if spec.kind is NcoKind.SURVIVAL:
            tcol, scol = spec.survival_columns
            wt = values[tcol]
            if (wt < 0).any():
                raise ValidationError(f"negative time in column {tcol!r}")
            W[spec.name] = SurvivalOutcome(wt, _status_codes(values[scol], scol, _BINARY_LABELS))
        elif spec.kind is not NcoKind.COMPETING_RISK:
            W[spec.name] = values[spec.value_column]
            if spec.offset_column:
                offsets[spec.name] = values[spec.offset_column]

    def block(cols):
        return np.column_stack([values[c] for c in cols]) if cols else np.empty((len(df), 0))

    ds = ProximalDataset(
        outcome=SurvivalOutcome(time, status, competing),
        A=block(roles["exposure"]),
        X=block(roles["covariates"]),
        Z=block(roles["nce"]),
        W=W,
        nco_specs=specs,
        offsets=offsets,
        a_names=tuple(roles["exposure"]),
        x_names=tuple(roles["covariates"]),
        z_names=tuple(roles["nce"]),
    )
    problems = validate(ds)
    if problems:
        raise ValidationError(
            "dataset failed validation: " + "; ".join(str(p) for p in problems), problems
        )
    return ds


def to_csv(dataset: ProximalDataset, path, time_column: str = "time",
           status_column: str = "status") -> tuple[dict, list[NcoSpec]]:
    """Write ``dataset`` as CSV and return the ``(schema, nco_specs)`` that re-read it.

    Floats are written with 17 significant digits, so re-ingesting reproduces
    the arrays bit for bit.
    """
    cols: dict[str, np.ndarray] = {
        time_column: dataset.outcome.time,
        status_column: dataset.outcome.status,
    }
    for block, names in ((dataset.A, dataset.a_names), (dataset.X, dataset.x_names),
                         (dataset.Z, dataset.z_names)):
        for j, name in enumerate(names):
            cols[name] = block[:, j]
    specs = []
    for spec in dataset.nco_specs:
        if spec.kind is NcoKind.SURVIVAL:
            w = dataset.W[spec.name]
            tcol, scol = spec.survival_columns
            cols[tcol] = w.time
            cols[scol] = w.status
            specs.append(NcoSpec(spec.name, spec.kind, time_column=tcol, status_column=scol))
        elif spec.kind is NcoKind.COMPETING_RISK:
            specs.append(NcoSpec(spec.name, spec.kind))
        else:
            cols[spec.value_column] = dataset.W[spec.name]
            off_col = None
            if spec.name in dataset.offsets:
                off_col = spec.offset_column or f"{spec.name}_offset"
                cols[off_col] = dataset.offsets[spec.name]
            specs.append(NcoSpec(spec.name, spec.kind, column=spec.value_column, offset_column=off_col))
    if len(set(cols)) != len(cols):
        raise SchemaError("duplicate column names when serializing dataset")
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")
    schema = {
        "time": time_column,
        "status": status_column,
        "exposure": list(dataset.a_names),
        "covariates": list(dataset.x_names),
        "nce": list(dataset.z_names),
    }
    return schema, specs



@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function, zero before the first knot.

    Queries past the last knot return the last value; use
    :meth:`beyond_support` to flag them.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "knots", _frozen(self.knots, 1))
        object.__setattr__(self, "values", _frozen(self.values, 1))
        if len(self.knots) != len(self.values):
            raise ValueError("knots and values must have equal length")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)] if len(self.values) else 0.0, 0.0)
        return out if out.ndim else float(out)

    def beyond_support(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if len(self.knots) == 0:
            return np.ones_like(t, dtype=bool)
        return t > self.knots[-1]
