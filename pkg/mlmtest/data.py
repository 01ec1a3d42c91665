"""
Longitudinal datasets, model specifications and the design matrices built from them.

Rows are regrouped by experimental unit (units in order of first appearance, row
order inside a unit preserved). Design matrices put the interest coefficients
first so that X = (X̃_p, X̃).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyUnit, MissingColumn, ParseError, RankDeficientDesign

logger = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"
FAMILIES = ("unstructured-G", "ar1-errors")


@dataclass(frozen=True)
class ColumnMap:
    unit: str
    response: str
    time: Optional[str] = None
    covariates: Tuple[str, ...] = ()

    def numeric_columns(self) -> List[str]:
        cols = [self.response]
        if self.time:
            cols.append(self.time)
        cols.extend(c for c in self.covariates if c not in cols)
        return cols


@dataclass
class LongitudinalDataset:
    table: pd.DataFrame
    columns: ColumnMap

    def __post_init__(self) -> None:
        if len(self.table) == 0:
            raise EmptyUnit("dataset has no observations")
        codes, uniques = pd.factorize(self.table[self.columns.unit], sort=False)
        self._units = tuple(str(u) for u in uniques)
        self._tau = np.bincount(codes, minlength=len(uniques)).astype(int)
        if np.any(self._tau < 1):
            raise EmptyUnit("unit without observations", unit=self._units[int(np.argmin(self._tau))])
        if np.any(np.diff(codes) < 0):
            order = np.argsort(codes, kind="stable")
            self.table = self.table.iloc[order].reset_index(drop=True)

    @property
    def units(self) -> Tuple[str, ...]:
        return self._units

    @property
    def tau(self) -> np.ndarray:
        return self._tau

    @property
    def N(self) -> int:
        return len(self._units)

    @property
    def T(self) -> int:
        return int(self._tau.sum())

    def column(self, name: str) -> np.ndarray:
        if name not in self.table.columns:
            raise MissingColumn(f"column '{name}' not in dataset", column=name)
        return self.table[name].to_numpy()

    def write_csv(self, path: Union[str, Path]) -> None:
        self.table.to_csv(path, index=False)


def ingest_csv(path: Union[str, Path], columns: ColumnMap) -> LongitudinalDataset:
    """Read a comma separated file with a header row into a validated dataset."""
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV {path}: {exc}") from exc

    required = [columns.unit] + columns.numeric_columns()
    for name in required:
        if name not in raw.columns:
            raise MissingColumn(f"column '{name}' missing from {path}", column=name)

    table = raw.copy()
    unit_values = table[columns.unit].str.strip()
    empty = np.flatnonzero(unit_values.to_numpy() == "")
    if empty.size:
        # header is line 1
        raise ParseError("empty unit id", row=int(empty[0]) + 2, column=columns.unit)
    table[columns.unit] = unit_values

    for name in columns.numeric_columns():
        converted = pd.to_numeric(table[name].str.strip(), errors="coerce")
        bad = np.flatnonzero(~np.isfinite(converted.to_numpy(dtype=float)))
        if bad.size:
            row = int(bad[0]) + 2
            raise ParseError(f"non-numeric or missing value in column '{name}' at line {row}", row=row, column=name)
        table[name] = converted.astype(float)

    dataset = LongitudinalDataset(table=table, columns=columns)
    logger.debug("ingested %s: N=%d units, T=%d rows", path, dataset.N, dataset.T)
    return dataset


@dataclass(frozen=True)
class DummyCoding:
    """Treatment coding of a categorical column; levels other than ``reference`` get a 0/1 column."""

    column: str
    reference: str
    prefix: Optional[str] = None

    def expand(self, table: pd.DataFrame) -> Dict[str, np.ndarray]:
        if self.column not in table.columns:
            raise MissingColumn(f"dummy column '{self.column}' not in dataset", column=self.column)
        column = table[self.column]
        if pd.api.types.is_numeric_dtype(column):
            values = column.map(lambda v: f"{v:g}")
        else:
            values = column.astype(str).str.strip()
        if self.reference not in set(values):
            raise ConfigError(f"reference level '{self.reference}' not found in '{self.column}'", key="dummies.reference")
        prefix = self.column if self.prefix is None else self.prefix
        return {
            f"{prefix}{level}": (values == level).to_numpy(dtype=float)
            for level in sorted(set(values))
            if level != self.reference
        }


@dataclass(frozen=True)
class ModelSpec:
    fixed: Tuple[str, ...]
    interest: Tuple[str, ...]
    random: Tuple[str, ...] = (INTERCEPT,)
    family: str = "unstructured-G"
    dummies: Optional[DummyCoding] = None

    def __post_init__(self) -> None:
        if not self.interest:
            raise ConfigError("interest set must be nonempty", key="interest")
        unknown = [t for t in self.interest if t not in self.fixed]
        if unknown:
            raise ConfigError(f"interest terms {unknown} are not fixed-effect terms", key="interest")
        if len(set(self.fixed)) != len(self.fixed):
            raise ConfigError("duplicate fixed-effect terms", key="fixed")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown covariance family '{self.family}'", key="family")

    @property
    def ordered_fixed(self) -> Tuple[str, ...]:
        return tuple(self.interest) + tuple(t for t in self.fixed if t not in self.interest)

    def reduced(self, fixed: Sequence[str], interest: Sequence[str]) -> "ModelSpec":
        return ModelSpec(
            fixed=tuple(fixed),
            interest=tuple(interest),
            random=self.random,
            family=self.family,
            dummies=self.dummies,
        )


@dataclass(frozen=True)
class DesignPartition:
    Xp_tilde: np.ndarray
    X_tilde: np.ndarray

    @property
    def p(self) -> int:
        return self.Xp_tilde.shape[1]

    @property
    def n(self) -> int:
        return self.Xp_tilde.shape[1] + self.X_tilde.shape[1]


@dataclass(frozen=True)
class UnitGroup:
    """Units sharing one size τ, stacked along a leading axis for batched algebra."""

    tau: int
    units: np.ndarray
    rows: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    @property
    def size(self) -> int:
        return self.units.shape[0]

    def split(self, p: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.X[:, :, :p], self.X[:, :, p:]

    def take(self, vector: np.ndarray) -> np.ndarray:
        return vector[self.rows]


@dataclass(frozen=True)
class ModelFrame:
    """Response, fixed and random designs of one model, with the interest block first."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    tau: np.ndarray
    names: Tuple[str, ...]
    p: int
    family: str = "unstructured-G"
    random_names: Tuple[str, ...] = ()
    groups: Tuple[UnitGroup, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, dtype=int)
        if tau.size == 0 or np.any(tau < 1):
            raise EmptyUnit("every unit needs at least one observation")
        if self.X.shape[0] != tau.sum() or self.y.shape[0] != tau.sum() or self.Z.shape[0] != tau.sum():
            raise ValueError("row counts of y, X and Z must equal the sum of unit sizes")
        if not 1 <= self.p <= self.X.shape[1]:
            raise ConfigError(f"interest block size {self.p} outside 1..{self.X.shape[1]}", key="interest")
        object.__setattr__(self, "tau", tau)
        offsets = np.concatenate([[0], np.cumsum(tau)[:-1]])
        groups = []
        for size in sorted(set(tau.tolist())):
            units = np.flatnonzero(tau == size)
            rows = offsets[units][:, None] + np.arange(size)[None, :]
            groups.append(UnitGroup(tau=size, units=units, rows=rows, X=self.X[rows], Z=self.Z[rows]))
        object.__setattr__(self, "groups", tuple(groups))

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def N(self) -> int:
        return self.tau.shape[0]

    @property
    def T(self) -> int:
        return int(self.tau.sum())

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.tau)[:-1]])

    @property
    def partition(self) -> DesignPartition:
        return DesignPartition(Xp_tilde=self.X[:, : self.p], X_tilde=self.X[:, self.p :])

    def with_response(self, y: np.ndarray) -> "ModelFrame":
        return ModelFrame(
            y=np.asarray(y, dtype=float),
            X=self.X,
            Z=self.Z,
            tau=self.tau,
            names=self.names,
            p=self.p,
            family=self.family,
            random_names=self.random_names,
        )

    def with_design(self, X: np.ndarray, p: int, names: Optional[Sequence[str]] = None) -> "ModelFrame":
        return ModelFrame(
            y=self.y,
            X=np.asarray(X, dtype=float),
            Z=self.Z,
            tau=self.tau,
            names=tuple(names) if names is not None else tuple(f"x{i}" for i in range(X.shape[1])),
            p=p,
            family=self.family,
            random_names=self.random_names,
        )


def _term_values(term: str, table: pd.DataFrame, extra: Dict[str, np.ndarray]) -> np.ndarray:
    if term == INTERCEPT:
        return np.ones(len(table))
    value = np.ones(len(table))
    for part in term.split(":"):
        part = part.strip()
        if part in extra:
            value = value * extra[part]
        elif part in table.columns:
            column = pd.to_numeric(table[part], errors="coerce").to_numpy(dtype=float)
            if not np.all(np.isfinite(column)):
                raise ParseError(f"column '{part}' used in term '{term}' is not numeric", column=part)
            value = value * column
        else:
            raise MissingColumn(f"term '{term}' references unknown column '{part}'", column=part)
    return value


def check_full_rank(X: np.ndarray, names: Sequence[str]) -> None:
    """Raise RankDeficientDesign naming the columns that add no rank."""
    offending = []
    kept: List[int] = []
    for j in range(X.shape[1]):
        trial = X[:, kept + [j]]
        if np.linalg.matrix_rank(trial) <= len(kept):
            offending.append(names[j])
        else:
            kept.append(j)
    if offending:
        raise RankDeficientDesign("design matrix is rank deficient", columns=offending)


def build_frame(dataset: LongitudinalDataset, spec: ModelSpec) -> ModelFrame:
    table = dataset.table
    extra = spec.dummies.expand(table) if spec.dummies is not None else {}
    names = spec.ordered_fixed
    X = np.column_stack([_term_values(t, table, extra) for t in names])
    check_full_rank(X, names)
    if spec.random:
        Z = np.column_stack([_term_values(t, table, extra) for t in spec.random])
    else:
        Z = np.zeros((len(table), 0))
    y = dataset.column(dataset.columns.response).astype(float)
    return ModelFrame(
        y=y,
        X=X,
        Z=Z,
        tau=dataset.tau,
        names=tuple(names),
        p=len(spec.interest),
        family=spec.family,
        random_names=tuple(spec.random),
    )
