"""Categorical panel data: ingestion, long-to-wide reshaping and collapsing.

A :class:`Dataset` stores one row per distinct *configuration*, i.e. a
response trajectory together with the covariate trajectory of a unit, and
the number of units sharing it.  Covariates of the first occasion live in
``X1`` (``n x p1``), those of occasions ``2..T`` in ``X2``
(``n x (T-1) x p2``).  Arrays with zero covariate columns are used when a
dataset carries no covariates.

Wide CSV layout
---------------
One row per unit (or per configuration when a ``freq`` column is given).
Responses are named ``y{j}_t{t}`` and covariates ``x{m}_t{t}`` with 1-based
``j``, ``m`` and ``t``.  An optional ``id`` column is carried through.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class CategorySpec:
    c: tuple

    def __post_init__(self):
        c = tuple(int(v) for v in self.c)
        if any(v < 2 for v in c):
            raise DataError("every response variable needs at least 2 categories")
        object.__setattr__(self, "c", c)

    @property
    def r(self):
        return len(self.c)


@dataclass(frozen=True)
class LongRecord:
    unit_id: object
    occasion: int
    covariates: tuple
    responses: tuple


@dataclass
class LongSchema:
    """Column roles of a long-format CSV file.

    ``code_base`` is subtracted from every response code, so files coded
    ``1..c`` can be read with ``code_base=1``.  When ``categories`` is None
    the category counts are inferred as ``max code + 1``.
    """

    id: str
    time: str
    responses: list
    covariates: list = field(default_factory=list)
    categories: tuple = None
    code_base: int = 0


@dataclass
class Dataset:
    S: np.ndarray
    yv: np.ndarray
    X1: np.ndarray = None
    X2: np.ndarray = None
    categories: tuple = None

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.int64)
        if self.S.ndim == 2:
            self.S = self.S[:, :, None]
        if self.S.ndim != 3:
            raise DataError("S must have shape (n, T, r)")
        n, T, _ = self.S.shape
        self.yv = np.asarray(self.yv, dtype=np.int64).reshape(-1)
        if self.X1 is None:
            self.X1 = np.zeros((n, 0))
        self.X1 = np.asarray(self.X1, dtype=float)
        if self.X1.ndim == 1:
            self.X1 = self.X1[:, None]
        if self.X2 is None:
            self.X2 = np.zeros((n, max(T - 1, 0), 0))
        self.X2 = np.asarray(self.X2, dtype=float)
        if self.X2.ndim == 2:
            self.X2 = self.X2[:, :, None]
        if self.categories is None:
            if n == 0:
                raise DataError("categories are required for an empty dataset")
            self.categories = tuple(int(max(2, m + 1)) for m in self.S.max(axis=(0, 1)))
        self.categories = tuple(int(c) for c in self.categories)

    @property
    def n_config(self):
        return self.S.shape[0]

    @property
    def T(self):
        return self.S.shape[1]

    @property
    def r(self):
        return self.S.shape[2]

    @property
    def p1(self):
        return self.X1.shape[1]

    @property
    def p2(self):
        return self.X2.shape[2]

    @property
    def n_total(self):
        return int(self.yv.sum())

    def X_full(self):
        """Covariates for every occasion, shape ``(n, T, p)``.

        Requires ``p1 == p2``; used when the same covariates enter at each
        occasion (covariates in the measurement model).
        """
        if self.p1 != self.p2:
            raise DataError("X1 and X2 have different numbers of covariates")
        return np.concatenate([self.X1[:, None, :], self.X2], axis=1)

    def subset(self, mask):
        mask = np.asarray(mask)
        return Dataset(self.S[mask], self.yv[mask], self.X1[mask], self.X2[mask], self.categories)


def _config_keys(S, X1, X2):
    n = S.shape[0]
    return np.hstack([S.reshape(n, -1).astype(float), X1.reshape(n, -1), X2.reshape(n, -1)])


def collapse(ds, return_index=False):
    """Merge identical (response, covariate) configurations, summing ``yv``.

    Rows of the result are in lexicographic order of the key formed by the
    response trajectory followed by the covariate trajectory.  With
    ``return_index`` the map from input rows to output rows is returned too.
    """
    n = ds.n_config
    if n == 0:
        out = Dataset(ds.S, ds.yv, ds.X1, ds.X2, ds.categories)
        return (out, np.zeros(0, dtype=np.int64)) if return_index else out
    keys = _config_keys(ds.S, ds.X1, ds.X2)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    yv = np.bincount(inverse, weights=ds.yv, minlength=len(first)).astype(np.int64)
    out = Dataset(ds.S[first], yv, ds.X1[first], ds.X2[first], ds.categories)
    return (out, inverse) if return_index else out


def expand(ds):
    """Unit-level dataset: each configuration repeated ``yv`` times, ``yv = 1``."""
    idx = np.repeat(np.arange(ds.n_config), ds.yv)
    return Dataset(ds.S[idx], np.ones(len(idx), dtype=np.int64), ds.X1[idx], ds.X2[idx], ds.categories)


def validate(ds, allow_duplicates=False):
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    n, T, r = ds.S.shape
    if ds.yv.shape != (n,):
        out.append(f"frequency vector has length {ds.yv.shape[0]}, expected {n}")
    elif np.any(ds.yv <= 0):
        out.append("nonpositive frequency")
    if len(ds.categories) != r:
        out.append(f"{len(ds.categories)} category counts for {r} response variables")
    else:
        for j, c in enumerate(ds.categories):
            if c < 2:
                out.append(f"variable {j + 1} has fewer than 2 categories")
            col = ds.S[:, :, j]
            if np.any(col < 0) or np.any(col >= c):
                out.append(f"category out of range for variable {j + 1}")
    if ds.X1.shape[0] != n:
        out.append("X1 row count differs from S")
    if ds.X2.shape[:2] != (n, max(T - 1, 0)):
        out.append("X2 must have shape (n, T-1, p2)")
    if not (np.all(np.isfinite(ds.X1)) and np.all(np.isfinite(ds.X2))):
        out.append("non-finite covariate value")
    if T < 1:
        out.append("no occasions")
    if not allow_duplicates and n > 1 and not out:
        keys = _config_keys(ds.S, ds.X1, ds.X2)
        if len(np.unique(keys, axis=0)) < n:
            out.append("duplicate configuration")
    return out


def check_dataset(ds, allow_duplicates=True):
    problems = validate(ds, allow_duplicates=allow_duplicates)
    if problems:
        raise DataError("; ".join(problems))
    if ds.n_total == 0:
        raise DataError("empty dataset")


def _parse_number(text, line, column, integer=False):
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        raise DataError(f"missing value in column {column!r}", line=line)
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} in column {column!r}", line=line) from None
    if integer:
        if v != int(v):
            raise DataError(f"non-integer code {text!r} in column {column!r}", line=line)
        return int(v)
    return v


def read_long_csv(path, schema):
    """Read a long-format CSV (one row per unit-occasion) into records.

    Response codes are shifted by ``schema.code_base`` and, when
    ``schema.categories`` is given, checked against ``0..c_j-1``.
    """
    path = Path(path)
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return records
        header = [h.strip() for h in header]
        needed = [schema.id, schema.time, *schema.covariates, *schema.responses]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"columns not found: {', '.join(missing)}", line=1)
        pos = {h: i for i, h in enumerate(header)}
        cats = tuple(schema.categories) if schema.categories is not None else None
        if cats is not None and len(cats) != len(schema.responses):
            raise DataError("one category count per response column is required")
        for line, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", line=line)
            occ = _parse_number(row[pos[schema.time]], line, schema.time, integer=True)
            cov = tuple(_parse_number(row[pos[c]], line, c) for c in schema.covariates)
            resp = []
            for j, c in enumerate(schema.responses):
                y = _parse_number(row[pos[c]], line, c, integer=True) - schema.code_base
                if y < 0 or (cats is not None and y >= cats[j]):
                    hi = cats[j] - 1 if cats is not None else "c-1"
                    raise DataError(f"code {y + schema.code_base} in column {c!r} outside 0..{hi} "
                                    f"after subtracting base {schema.code_base}", line=line)
                resp.append(y)
            records.append(LongRecord(row[pos[schema.id]].strip(), occ, cov, tuple(resp)))
    return records


def long2wide(records, categories=None, time_varying=None, return_index=False):
    """Reshape long records into a collapsed wide :class:`Dataset`.

    Parameters
    ----------
    records : sequence of LongRecord
        Every unit must have exactly the occasions ``1..T``.
    categories : CategorySpec or sequence of int, optional
        Category counts; inferred from the data when omitted.
    time_varying : iterable of int, optional
        Indices of the covariates that vary over time.  The others are
        time-constant: their occasion-1 value is broadcast to every
        occasion and they must not change within a unit.  By default all
        covariates are taken as recorded.
    return_index : bool
        Also return the unit ids (first-appearance order) and the
        configuration row of each unit.
    """
    if isinstance(categories, CategorySpec):
        categories = categories.c
    units = {}
    for rec in records:
        occ = units.setdefault(rec.unit_id, {})
        if rec.occasion in occ:
            kind = "conflicting covariates" if occ[rec.occasion].covariates != rec.covariates else "duplicate record"
            raise DataError(f"unit {rec.unit_id!r}: {kind} at occasion {rec.occasion}")
        occ[rec.occasion] = rec
    if not units:
        raise DataError("no records")
    T = max(max(o) for o in units.values())
    for uid, occ in units.items():
        if sorted(occ) != list(range(1, T + 1)):
            gaps = sorted(set(range(1, T + 1)) - set(occ))
            raise DataError(f"unit {uid!r} is unbalanced: missing occasions {gaps}")
    first = next(iter(next(iter(units.values())).values()))
    r, p = len(first.responses), len(first.covariates)
    ids = list(units)
    S = np.empty((len(ids), T, r), dtype=np.int64)
    X = np.empty((len(ids), T, p))
    for i, uid in enumerate(ids):
        for t in range(T):
            rec = units[uid][t + 1]
            if len(rec.responses) != r or len(rec.covariates) != p:
                raise DataError(f"unit {uid!r}: inconsistent record width at occasion {t + 1}")
            S[i, t] = rec.responses
            X[i, t] = rec.covariates
    if time_varying is not None:
        const = [m for m in range(p) if m not in set(time_varying)]
        for m in const:
            bad = np.any(X[:, :, m] != X[:, :1, m], axis=1)
            if np.any(bad):
                raise DataError(f"unit {ids[int(np.argmax(bad))]!r}: time-constant covariate {m + 1} varies")
            X[:, :, m] = X[:, :1, m]
    if categories is not None and len(categories) != r:
        raise DataError("one category count per response variable is required")
    ds = Dataset(S, np.ones(len(ids), dtype=np.int64), X[:, 0, :], X[:, 1:, :], categories)
    problems = validate(ds, allow_duplicates=True)
    if problems:
        raise DataError("; ".join(problems))
    out, index = collapse(ds, return_index=True)
    return (out, ids, index) if return_index else out


def read_wide_csv(path, categories=None, code_base=0, return_index=False):
    """Read a wide-format CSV (see module docstring) into a collapsed Dataset."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file") from None
        rows = [(line, row) for line, row in enumerate(reader, start=2) if row and any(v.strip() for v in row)]
    ycols, xcols = {}, {}
    for i, h in enumerate(header):
        if h.startswith(("y", "x")) and "_t" in h:
            a, b = h[1:].split("_t", 1)
            try:
                key = (int(a), int(b))
            except ValueError:
                continue
            (ycols if h[0] == "y" else xcols)[key] = i
    if not ycols:
        raise DataError("no response columns named y{j}_t{t}", line=1)
    r = max(j for j, _ in ycols)
    T = max(t for _, t in ycols)
    p = max((m for m, _ in xcols), default=0)
    for j in range(1, r + 1):
        for t in range(1, T + 1):
            if (j, t) not in ycols:
                raise DataError(f"missing column y{j}_t{t}", line=1)
    for m in range(1, p + 1):
        for t in range(1, T + 1):
            if (m, t) not in xcols:
                raise DataError(f"missing column x{m}_t{t}", line=1)
    pos = {h: i for i, h in enumerate(header)}
    n = len(rows)
    S = np.empty((n, T, r), dtype=np.int64)
    X = np.empty((n, T, p))
    yv = np.ones(n, dtype=np.int64)
    ids = []
    for i, (line, row) in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line=line)
        for (j, t), c in ycols.items():
            y = _parse_number(row[c], line, header[c], integer=True) - code_base
            if y < 0 or (categories is not None and y >= categories[j - 1]):
                raise DataError(f"code out of range in column {header[c]!r}", line=line)
            S[i, t - 1, j - 1] = y
        for (m, t), c in xcols.items():
            X[i, t - 1, m - 1] = _parse_number(row[c], line, header[c])
        if "freq" in pos:
            yv[i] = _parse_number(row[pos["freq"]], line, "freq", integer=True)
        ids.append(row[pos["id"]].strip() if "id" in pos else str(i + 1))
    if n == 0:
        raise DataError("no data rows")
    ds = Dataset(S, yv, X[:, 0, :], X[:, 1:, :], categories)
    problems = validate(ds, allow_duplicates=True)
    if problems:
        raise DataError("; ".join(problems))
    out, index = collapse(ds, return_index=True)
    return (out, ids, index) if return_index else out


def write_wide_csv(ds, path, expand_units=True):
    """Write ``ds`` in wide format; with ``expand_units`` one row per unit."""
    data = expand(ds) if expand_units else ds
    X = data.X_full() if data.p1 == data.p2 else None
    if X is None:
        raise DataError("wide CSV needs the same covariates at every occasion")
    T, r, p = data.T, data.r, data.p1
    header = ["id"] + [f"y{j}_t{t}" for j in range(1, r + 1) for t in range(1, T + 1)]
    header += [f"x{m}_t{t}" for m in range(1, p + 1) for t in range(1, T + 1)]
    if not expand_units:
        header.append("freq")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n_config):
            row = [i + 1] + [int(data.S[i, t, j]) for j in range(r) for t in range(T)]
            row += [repr(float(X[i, t, m])) for m in range(p) for t in range(T)]
            if not expand_units:
                row.append(int(data.yv[i]))
            w.writerow(row)
