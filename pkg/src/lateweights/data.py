"""Observed-data container, CSV ingestion, and validation.

The sample is a vector of outcomes ``y``, binary treatment ``d``, binary
instrument ``z``, and a covariate matrix ``x`` whose first column is an
intercept. The intercept is always prepended automatically; user covariates
may not be named ``"intercept"``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyData, EstimationError, MissingColumn, NonBinary, NonNumericCell

INTERCEPT_NAME = "intercept"

#: Formatting used by :func:`write_csv`; 17 significant digits round-trips
#: every IEEE double exactly.
FLOAT_FORMAT = "%.17g"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable observed sample.

    Attributes
    ----------
    y : ndarray, shape (n,)
        Outcome.
    d : ndarray, shape (n,)
        Binary treatment, values in {0, 1}.
    z : ndarray, shape (n,)
        Binary instrument, values in {0, 1}.
    x : ndarray, shape (n, k)
        Covariates; column 0 is identically 1.
    covariate_names : tuple of str
        Column names of ``x``, starting with ``"intercept"``.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        y = _frozen(np.asarray(self.y, dtype=float).ravel())
        d = _frozen(np.asarray(self.d, dtype=float).ravel())
        z = _frozen(np.asarray(self.z, dtype=float).ravel())
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = _frozen(x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        n = y.shape[0]
        if n < 2:
            raise EmptyData(f"need at least 2 observations, got {n}")
        if not (d.shape[0] == z.shape[0] == x.shape[0] == n):
            raise EstimationError(
                f"row mismatch: y={n}, d={d.shape[0]}, z={z.shape[0]}, x={x.shape[0]}"
            )
        for name, v in (("d", d), ("z", z)):
            bad = np.nonzero((v != 0.0) & (v != 1.0))[0]
            if bad.size:
                raise NonBinary(name, int(bad[0]), float(v[bad[0]]))
        for name, v in (("y", y), ("x", x)):
            if not np.all(np.isfinite(v)):
                raise EstimationError(f"non-finite values in {name}")
        if not np.all(x[:, 0] == 1.0):
            raise EstimationError("column 0 of x must be an all-ones intercept")
        names = tuple(self.covariate_names) or (
            (INTERCEPT_NAME,) + tuple(f"x{j}" for j in range(1, x.shape[1]))
        )
        if len(names) != x.shape[1]:
            raise EstimationError("covariate_names length does not match x columns")
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_arrays(cls, y, d, z, covariates=None, names=None) -> "Dataset":
        """Build a Dataset, prepending the intercept column.

        ``covariates`` holds the user covariates only (no intercept); pass
        ``None`` for an intercept-only design.
        """
        y = np.asarray(y, dtype=float).ravel()
        n = y.shape[0]
        if covariates is None:
            cov = np.empty((n, 0))
            names = names or ()
        else:
            cov = np.asarray(covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            names = tuple(names) if names else tuple(f"x{j+1}" for j in range(cov.shape[1]))
        if INTERCEPT_NAME in names:
            raise EstimationError(f"user covariates may not be named {INTERCEPT_NAME!r}")
        x = np.column_stack([np.ones(n), cov]) if cov.size else np.ones((n, 1))
        return cls(y=y, d=d, z=z, x=x, covariate_names=(INTERCEPT_NAME,) + tuple(names))


def load_csv(path, y: str, d: str, z: str, x: list[str] | tuple[str, ...] = ()) -> Dataset:
    """Read an RFC-4180-style CSV into a :class:`Dataset`.

    Parameters
    ----------
    path : str or os.PathLike
        File with a header row, comma delimiter, '.' decimal separator.
    y, d, z : str
        Column names for outcome, treatment, and instrument.
    x : sequence of str
        Covariate column names (intercept is added automatically).

    Raises
    ------
    MissingColumn, NonNumericCell, NonBinary, EmptyData
    """
    wanted = [y, d, z, *x]
    if INTERCEPT_NAME in x:
        raise EstimationError(f"user covariates may not be named {INTERCEPT_NAME!r}")
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyData(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise MissingColumn(f"{path}: columns not found: {missing}")
        idx = {c: header.index(c) for c in wanted}
        columns: dict[str, list[float]] = {c: [] for c in wanted}
        for i, row in enumerate(reader):
            if not row or (len(row) == 1 and row[0].strip() == ""):
                continue
            for c in wanted:
                try:
                    cell = row[idx[c]].strip()
                except IndexError:
                    raise NonNumericCell(i, c, "<missing>") from None
                try:
                    val = float(cell)
                except ValueError:
                    raise NonNumericCell(i, c, cell) from None
                if not np.isfinite(val):
                    raise NonNumericCell(i, c, cell)
                columns[c].append(val)
    if not columns[y]:
        raise EmptyData(f"{path}: header only, no data rows")
    cov = np.array([columns[c] for c in x]).T if x else None
    return Dataset.from_arrays(
        np.array(columns[y]), np.array(columns[d]), np.array(columns[z]),
        covariates=cov, names=tuple(x),
    )


def write_csv(ds: Dataset, path, y: str = "y", d: str = "d", z: str = "z") -> None:
    """Write a Dataset back to CSV (intercept column omitted).

    Numeric values are formatted with 17 significant digits, so a
    load/write/load round trip reproduces every value bit-exactly.
    """
    names = [y, d, z, *ds.covariate_names[1:]]
    fmt = FLOAT_FORMAT
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(ds.n):
            row = [fmt % ds.y[i], fmt % ds.d[i], fmt % ds.z[i]]
            row += [fmt % v for v in ds.x[i, 1:]]
            writer.writerow(row)


def zd_cell_counts(ds: Dataset) -> dict[tuple[int, int], int]:
    """Counts of the four (Z, D) cells."""
    z = ds.z.astype(int)
    d = ds.d.astype(int)
    return {
        (zi, di): int(np.sum((z == zi) & (d == di)))
        for zi in (1, 0) for di in (1, 0)
    }


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding: a stable code plus a human-readable message."""

    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def validate(ds: Dataset) -> list[Diagnostic]:
    """Informational checks on a structurally valid sample.

    Returns warnings only; an empty list means nothing noteworthy. Detects
    one-sided noncompliance (an empty off-diagonal (Z, D) cell) and covariate
    columns that duplicate the intercept. Cell counts are available through
    :func:`zd_cell_counts`.
    """
    out: list[Diagnostic] = []
    counts = zd_cell_counts(ds)
    if counts[(0, 1)] == 0:
        out.append(Diagnostic(
            "NoTreatedAmongZ0",
            "no observations with Z=0, D=1: no always-takers observed "
            f"(one-sided noncompliance); cells={counts}",
        ))
    if counts[(1, 0)] == 0:
        out.append(Diagnostic(
            "AllTreatedAmongZ1",
            "no observations with Z=1, D=0: no never-takers observed "
            f"(one-sided noncompliance); cells={counts}",
        ))
    for j in range(1, ds.k):
        col = ds.x[:, j]
        if np.all(col == col[0]):
            out.append(Diagnostic(
                "ConstantColumn",
                f"covariate {ds.covariate_names[j]!r} is constant and collinear "
                "with the intercept",
            ))
    return out
