"""
Observations, datasets and estimator configuration shared by every other module.
"""
import hashlib
import math
from dataclasses import asdict, dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from bdr.util.exceptions import (
    EmptyInputError,
    DataFileError,
    ParseError,
    SchemaError,
    ValidationError,
    Violation,
)

if TYPE_CHECKING:
    from bdr.bayes_boot import PriorSpec
    from bdr.matching import MatchingConfig


@dataclass(frozen=True)
class ObservationRecord:
    y: float
    d: int
    x: tuple[float, ...] = ()


class Dataset:
    """
    An immutable, ordered collection of (y, d, x) observations.

    Values are stored column-wise in read-only numpy arrays; `records` rebuilds
    the row view on demand. Construction only checks shapes, value-level
    invariants are reported by `validate`.
    """

    def __init__(
        self,
        y: Sequence[float],
        d: Sequence[int],
        x: Optional[np.ndarray] = None,
        covariate_names: Sequence[str] = (),
        outcome_name: str = "y",
        treatment_name: str = "d",
    ):
        y = np.array(y, dtype=np.float64).reshape(-1)
        n = y.shape[0]
        d = np.array(d, dtype=np.float64).reshape(-1)
        if x is None:
            x = np.empty((n, len(covariate_names)))
        x = np.array(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(n, -1) if n else x.reshape(0, len(covariate_names))

        if d.shape[0] != n or x.shape[0] != n:
            raise ValueError(
                f"column lengths disagree: y={n}, d={d.shape[0]}, x={x.shape[0]}"
            )
        if x.shape[1] != len(covariate_names):
            raise ValueError(
                f"{x.shape[1]} covariate columns but {len(covariate_names)} names"
            )

        for arr in (y, d, x):
            arr.setflags(write=False)

        self._y = y
        self._d = d
        self._x = x
        self.covariate_names = tuple(covariate_names)
        self.outcome_name = outcome_name
        self.treatment_name = treatment_name

    @classmethod
    def from_records(
        cls, records: Iterable[ObservationRecord], covariate_names: Sequence[str] = ()
    ) -> "Dataset":
        records = list(records)
        p = len(covariate_names)
        ragged = tuple(i for i, r in enumerate(records) if len(r.x) != p)
        if ragged:
            raise ValidationError(
                [Violation("ragged", f"expected {p} covariates per record", ragged)]
            )
        x = np.array([r.x for r in records], dtype=np.float64).reshape(len(records), p)
        return cls(
            [r.y for r in records], [r.d for r in records], x, covariate_names
        )

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"Dataset(n={self.n}, p={self.p}, covariates={list(self.covariate_names)})"

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.covariate_names == other.covariate_names
            and np.array_equal(self._y, other._y, equal_nan=True)
            and np.array_equal(self._d, other._d, equal_nan=True)
            and np.array_equal(self._x, other._x, equal_nan=True)
        )

    __hash__ = None  # type: ignore

    @property
    def n(self) -> int:
        return self._y.shape[0]

    @property
    def p(self) -> int:
        return self._x.shape[1]

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def d(self) -> np.ndarray:
        return self._d

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def records(self) -> list[ObservationRecord]:
        return [
            ObservationRecord(float(y), int(d), tuple(float(v) for v in x))
            for y, d, x in zip(self._y, self._d, self._x)
        ]

    @property
    def treated_fraction(self) -> float:
        return float(self._d.mean()) if self.n else math.nan

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update("\x00".join(self.covariate_names).encode("utf-8"))
        for arr in (self._y, self._d, self._x):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def covariate_index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise SchemaError(name) from None

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(
            self._y[rows],
            self._d[rows],
            self._x[rows],
            self.covariate_names,
            self.outcome_name,
            self.treatment_name,
        )

    def require_valid(self) -> None:
        violations = validate(self)
        if violations:
            raise ValidationError(violations)


def validate(dataset: Dataset) -> list[Violation]:
    """
    Check the dataset invariants. Returns one Violation per failed invariant
    (with the offending rows), or an empty list.
    """
    ret = []
    if dataset.n == 0:
        return [Violation("empty", "dataset has no records")]

    bad_d = np.flatnonzero((dataset.d != 0) & (dataset.d != 1))
    if bad_d.size:
        ret.append(
            Violation("treatment", "treatment values must be 0 or 1", tuple(bad_d.tolist()))
        )

    bad_y = np.flatnonzero(~np.isfinite(dataset.y))
    if bad_y.size:
        ret.append(Violation("outcome", "non-finite outcome", tuple(bad_y.tolist())))

    if dataset.p:
        bad_x = np.flatnonzero(~np.isfinite(dataset.x).all(axis=1))
        if bad_x.size:
            ret.append(
                Violation("covariate", "non-finite covariate", tuple(bad_x.tolist()))
            )

    if not (dataset.d == 1).any():
        ret.append(Violation("no_treated", "no treated units"))
    if not (dataset.d == 0).any():
        ret.append(Violation("no_control", "no control units"))

    return ret


def _read_table(path: Path) -> pd.DataFrame:
    # every cell as text; numeric conversion reports the offending row
    try:
        df = pd.read_csv(
            path, dtype=str, keep_default_na=False, skipinitialspace=True, index_col=False
        )
    except pd.errors.EmptyDataError:
        raise EmptyInputError(f"{path}: file is empty") from None
    except pd.errors.ParserError as e:
        raise DataFileError(str(path), f"malformed csv: {e}") from e
    except (OSError, UnicodeDecodeError) as e:
        raise DataFileError(str(path), f"cannot read: {e}") from e
    df.columns = df.columns.str.strip()
    if df.empty:
        raise EmptyInputError(f"{path}: no data rows")
    return df


def _require_columns(df: pd.DataFrame, columns: Iterable[str], path: Path) -> None:
    for c in columns:
        if c not in df.columns:
            raise SchemaError(c, str(path))


def _numeric_column(df: pd.DataFrame, column: str) -> np.ndarray:
    text = df[column].str.strip()
    values = pd.to_numeric(text, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise ParseError(row, column, str(text.iloc[row]))
    # exact decimal conversion, so that written values round-trip
    return text.to_numpy(dtype=object).astype(np.float64)


def _treatment_column(df: pd.DataFrame, column: str) -> np.ndarray:
    values = _numeric_column(df, column)
    bad = np.flatnonzero((values != 0.0) & (values != 1.0))
    if bad.size:
        row = int(bad[0])
        value = str(df[column].iloc[row]).strip()
        raise ParseError(row, column, value, reason="treatment must be 0 or 1, got")
    return values.astype(np.int64)


def load_csv(
    path,
    outcome_col: str,
    treatment_col: str,
    covariate_cols: Sequence[str] = (),
) -> Dataset:
    path = Path(path)
    df = _read_table(path)
    covariate_cols = list(covariate_cols)
    _require_columns(df, [outcome_col, treatment_col, *covariate_cols], path)

    y = _numeric_column(df, outcome_col)
    d = _treatment_column(df, treatment_col)
    x = np.empty((len(df), len(covariate_cols)))
    for j, c in enumerate(covariate_cols):
        x[:, j] = _numeric_column(df, c)
    return Dataset(y, d, x, covariate_cols, outcome_col, treatment_col)


def write_frame(df: pd.DataFrame, path: Path) -> None:
    try:
        # 17 significant digits round-trips every binary64 value
        df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise DataFileError(str(path), f"cannot write: {e}") from e


def save_csv(dataset: Dataset, path) -> None:
    df = pd.DataFrame({dataset.outcome_name: dataset.y, dataset.treatment_name: dataset.d})
    df[dataset.treatment_name] = df[dataset.treatment_name].astype(np.int64)
    for j, name in enumerate(dataset.covariate_names):
        df[name] = dataset.x[:, j]
    write_frame(df, Path(path))


def difference(path, pre_col: str, post_col: str, out_col: str, out_path) -> int:
    """
    Copy a CSV, appending `out_col` = `post_col` - `pre_col` to every row.
    Returns the number of data rows written.
    """
    path = Path(path)
    df = _read_table(path)
    if out_col in df.columns:
        raise ValueError(f"{path}: column {out_col!r} already exists")
    _require_columns(df, [pre_col, post_col], path)

    df[out_col] = _numeric_column(df, post_col) - _numeric_column(df, pre_col)
    write_frame(df, Path(out_path))
    return len(df)


class EstimatorKind(str, Enum):
    OR = "OR"
    IPW = "IPW"
    DR = "DR"
    NAIVE = "NAIVE"


@dataclass(frozen=True)
class EstimatorConfig:
    estimator_kind: EstimatorKind = EstimatorKind.DR
    # M; also the number of bayesian bootstrap replicates L
    bootstrap_reps: int = 1000
    # V
    covariate_resample_size: int = 1000
    prior: Optional["PriorSpec"] = None
    measure_of_faith: float = 1.0
    rng_seed: int = 0

    # outcome model: polynomial degree, covariates used (None = all) and
    # whether to add treatment x covariate columns
    degree: int = 1
    or_covariates: Optional[tuple[str, ...]] = None
    interact: bool = False
    ps_degree: int = 1
    reestimate_ps: bool = False

    frequentist_reps: int = 0
    threads: int = 1
    use_matching: bool = False
    matching: Optional["MatchingConfig"] = None

    def __post_init__(self):
        object.__setattr__(self, "estimator_kind", EstimatorKind(self.estimator_kind))
        if self.bootstrap_reps < 1:
            raise ValueError(f"bootstrap_reps (M) must be >= 1, got {self.bootstrap_reps}")
        if self.covariate_resample_size < 1:
            raise ValueError(
                f"covariate_resample_size (V) must be >= 1, got {self.covariate_resample_size}"
            )
        if self.prior is not None and self.measure_of_faith < 1:
            raise ValueError(
                f"measure of faith k must be >= 1 with a prior, got {self.measure_of_faith}"
            )
        if self.degree < 1 or self.ps_degree < 1:
            raise ValueError("basis degrees must be >= 1")
        if self.frequentist_reps < 0:
            raise ValueError("frequentist_reps must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.or_covariates is not None:
            object.__setattr__(self, "or_covariates", tuple(self.or_covariates))

    @property
    def L(self) -> int:
        return self.bootstrap_reps

    def prior_spec(self) -> Optional["PriorSpec"]:
        # the config's measure of faith is authoritative
        if self.prior is None:
            return None
        return self.prior.with_faith(self.measure_of_faith)

    def matching_config(self) -> "MatchingConfig":
        from bdr.matching import MatchingConfig

        return self.matching or MatchingConfig()

    def to_dict(self) -> dict:
        # results are independent of `threads`
        ret = asdict(self)
        del ret["threads"]
        ret["estimator_kind"] = self.estimator_kind.value
        ret["prior"] = None if self.prior is None else self.prior.to_dict()
        ret["matching"] = self.matching_config().to_dict()
        ret["or_covariates"] = (
            None if self.or_covariates is None else list(self.or_covariates)
        )
        return ret
