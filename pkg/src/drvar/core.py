"""Observed data, design specifications and the partitioned parameter vector."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ShapeError, SpecError, ValidationError

TRANSFORMS = {
    "identity": lambda v: v,
    "sin": np.sin,
}


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed triples ``(y, x, Z)``.

    Parameters
    ----------
    y : array_like, shape (n,)
        Outcome.
    x : array_like, shape (n,)
        Binary treatment indicator.
    Z : array_like, shape (n, d)
        Covariate matrix.
    covariate_names : sequence of str
        One unique name per column of ``Z``.
    """

    y: np.ndarray
    x: np.ndarray
    Z: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        names = tuple(self.covariate_names)
        if y.ndim != 1 or x.ndim != 1 or Z.ndim != 2:
            raise ShapeError("y and x must be vectors and Z a matrix")
        n = y.shape[0]
        if x.shape[0] != n or Z.shape[0] != n:
            raise ShapeError(f"row counts differ: y={n}, x={x.shape[0]}, Z={Z.shape[0]}")
        if len(names) != Z.shape[1]:
            raise ShapeError(f"{len(names)} covariate names for {Z.shape[1]} columns")
        if len(set(names)) != len(names):
            raise DataError("covariate names must be unique")
        if n < 2:
            raise DataError("need at least two observations")
        bad = np.flatnonzero((x != 0) & (x != 1))
        if bad.size:
            raise DataError(f"treatment must be 0/1; row {int(bad[0])} has {x[bad[0]]!r}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(Z))):
            raise DataError("y and Z must be finite")
        n_treated = int(x.sum())
        if n_treated == 0 or n_treated == n:
            raise DataError("need at least one treated and one control observation")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "Z", _frozen(Z))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise SpecError(f"unknown covariate {name!r}") from None
        return self.Z[:, j]

    def take(self, rows) -> "Dataset":
        """Row subset (or resample, with repeated indices) as a new Dataset."""
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.x[rows], self.Z[rows], self.covariate_names)

    @classmethod
    def from_csv(
        cls,
        path,
        outcome: str,
        treatment: str,
        covariates: Sequence[str] | None = None,
    ) -> "Dataset":
        """Read a comma-separated file with a header row.

        Every cell must parse as a plain float ("." decimal, no thousands
        separators). Covariates default to all columns other than the outcome
        and treatment.
        """
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh, delimiter=",", strict=True)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ValidationError(f"{path}: empty file") from None
            rows = list(reader)
        for col in (outcome, treatment):
            if col not in header:
                raise ValidationError(f"{path}: column {col!r} not in header")
        if covariates is None:
            covariates = [h for h in header if h not in (outcome, treatment)]
        missing = [c for c in covariates if c not in header]
        if missing:
            raise ValidationError(f"{path}: covariate column(s) {missing} not in header")

        values = np.empty((len(rows), len(header)))
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: data row {i + 1} has {len(row)} fields, expected {len(header)}"
                )
            for j, cell in enumerate(row):
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{path}: data row {i + 1}, column {header[j]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
        idx = {h: j for j, h in enumerate(header)}
        x = values[:, idx[treatment]]
        bad = np.flatnonzero((x != 0) & (x != 1))
        if bad.size:
            raise DataError(
                f"{path}: treatment column {treatment!r} must be 0/1; "
                f"data row {int(bad[0]) + 1} has {x[bad[0]]:g}"
            )
        Z = values[:, [idx[c] for c in covariates]]
        return cls(values[:, idx[outcome]], x, Z, tuple(covariates))


@dataclass(frozen=True)
class Factor:
    name: str
    transform: str = "identity"

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise SpecError(
                f"unknown transform {self.transform!r}; expected one of {sorted(TRANSFORMS)}"
            )


@dataclass(frozen=True)
class Term:
    """Product of transformed covariates, optionally multiplied by the treatment."""

    factors: tuple[Factor, ...] = ()
    with_treatment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def is_intercept(self) -> bool:
        return not self.factors and not self.with_treatment

    def label(self) -> str:
        parts = ["x"] if self.with_treatment else []
        for f in self.factors:
            parts.append(f.name if f.transform == "identity" else f"{f.transform}({f.name})")
        return "*".join(parts) if parts else "(Intercept)"

    def to_json(self) -> dict:
        return {
            "factors": [{"name": f.name, "transform": f.transform} for f in self.factors],
            "with_treatment": self.with_treatment,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Term":
        if not isinstance(obj, dict):
            raise SpecError(f"term must be an object, got {obj!r}")
        unknown = set(obj) - {"factors", "with_treatment"}
        if unknown:
            raise SpecError(f"unknown term keys {sorted(unknown)}")
        factors = []
        for f in obj.get("factors", []):
            if isinstance(f, str):
                factors.append(Factor(f))
            elif isinstance(f, dict) and "name" in f:
                factors.append(Factor(f["name"], f.get("transform", "identity")))
            else:
                raise SpecError(f"bad factor {f!r}")
        return cls(tuple(factors), bool(obj.get("with_treatment", False)))


def term(*names: str, x: bool = False) -> Term:
    """Shorthand: ``term("z1", "sin:z2", x=True)`` is x*z1*sin(z2)."""
    factors = []
    for nm in names:
        transform, _, base = nm.rpartition(":")
        factors.append(Factor(base, transform or "identity"))
    return Term(tuple(factors), x)


@dataclass(frozen=True)
class DesignSpec:
    """Ordered term list; the first term is always the intercept."""

    terms: tuple[Term, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms or not terms[0].is_intercept:
            raise SpecError("first term of a design must be the intercept")
        if len(set(terms)) != len(terms):
            raise SpecError("design has duplicate terms")

    @classmethod
    def of(cls, *terms: Term) -> "DesignSpec":
        """Intercept followed by ``terms``."""
        return cls((Term(),) + terms)

    def __len__(self):
        return len(self.terms)

    @property
    def uses_treatment(self) -> bool:
        return any(t.with_treatment for t in self.terms)

    def labels(self) -> list[str]:
        return [t.label() for t in self.terms]

    def covariates(self) -> set[str]:
        return {f.name for t in self.terms for f in t.factors}

    def validate(self, ds: Dataset) -> None:
        missing = self.covariates() - set(ds.covariate_names)
        if missing:
            raise SpecError(f"design references unknown covariate(s) {sorted(missing)}")

    def to_json(self) -> list[dict]:
        return [t.to_json() for t in self.terms]

    @classmethod
    def from_json(cls, obj: Iterable[dict]) -> "DesignSpec":
        if isinstance(obj, (str, bytes)) or not hasattr(obj, "__iter__"):
            raise SpecError("design must be a list of term objects")
        return cls(tuple(Term.from_json(t) for t in obj))


def build_design(ds: Dataset, spec: DesignSpec, treatment=None) -> np.ndarray:
    """Evaluate ``spec`` row by row on ``ds``.

    ``treatment`` replaces the observed ``x`` in terms flagged
    ``with_treatment``; pass 1 or 0 to get the design under Q(1, .) or Q(0, .).
    """
    spec.validate(ds)
    if treatment is None:
        xcol = ds.x
    else:
        xcol = np.broadcast_to(np.asarray(treatment, dtype=float), (ds.n,))
    out = np.empty((ds.n, len(spec.terms)))
    for j, t in enumerate(spec.terms):
        col = np.ones(ds.n)
        for f in t.factors:
            col = col * TRANSFORMS[f.transform](ds.column(f.name))
        if t.with_treatment:
            col = col * xcol
        out[:, j] = col
    if not np.all(np.isfinite(out)):
        raise DataError("design evaluation produced non-finite values")
    return out


@dataclass(frozen=True)
class BlockIndex:
    """Column layout of theta = (mu, psi, xi)."""

    q: int
    r: int

    def __post_init__(self):
        if self.q < 0 or self.r < 0:
            raise ShapeError("block sizes must be non-negative")

    @property
    def size(self) -> int:
        return 1 + self.q + self.r

    @property
    def mu(self) -> slice:
        return slice(0, 1)

    @property
    def psi(self) -> slice:
        return slice(1, 1 + self.q)

    @property
    def xi(self) -> slice:
        return slice(1 + self.q, 1 + self.q + self.r)


@dataclass(frozen=True, eq=False)
class JointParams:
    mu: float
    psi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "psi", _frozen(np.atleast_1d(self.psi)))
        object.__setattr__(self, "xi", _frozen(np.atleast_1d(self.xi)))
        if self.psi.ndim != 1 or self.xi.ndim != 1:
            raise ShapeError("psi and xi must be vectors")

    @property
    def block_index(self) -> BlockIndex:
        return BlockIndex(self.psi.size, self.xi.size)

    def __eq__(self, other):
        if not isinstance(other, JointParams):
            return NotImplemented
        return (
            self.mu == other.mu
            and np.array_equal(self.psi, other.psi)
            and np.array_equal(self.xi, other.xi)
        )


def flatten(p: JointParams) -> np.ndarray:
    return np.concatenate(([p.mu], p.psi, p.xi))


def unflatten(v, index: BlockIndex) -> JointParams:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != index.size:
        raise ShapeError(f"expected a vector of length {index.size}, got shape {v.shape}")
    return JointParams(v[0], v[index.psi], v[index.xi])
