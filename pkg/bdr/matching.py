"""
Greedy nearest-neighbour matching on the estimated propensity score.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from bdr.core import Dataset, write_frame
from bdr.propensity import PropensityFit
from bdr.util.exceptions import PoolExhaustedError


@dataclass(frozen=True)
class MatchingConfig:
    ratio: int = 1
    with_replacement: bool = False
    caliper: Optional[float] = None

    def __post_init__(self):
        if self.ratio < 1:
            raise ValueError(f"matching ratio must be >= 1, got {self.ratio}")
        if self.caliper is not None and not self.caliper > 0:
            raise ValueError(f"caliper must be positive, got {self.caliper}")

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "with_replacement": self.with_replacement,
            "caliper": self.caliper,
        }


@dataclass(frozen=True)
class MatchedPair:
    treated_row: int
    control_row: int
    distance: float


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[MatchedPair, ...]
    trimmed_dataset: Dataset
    # original row of every trimmed_dataset record
    rows: tuple[int, ...]
    excluded_treated: tuple[int, ...] = ()

    @property
    def matched_indices(self) -> list[tuple[int, int]]:
        return [(p.treated_row, p.control_row) for p in self.pairs]

    def to_rows(self) -> list[tuple[int, int, float]]:
        return [(p.treated_row, p.control_row, p.distance) for p in self.pairs]

    def write_csv(self, path) -> None:
        df = pd.DataFrame(self.to_rows(), columns=["treated_row", "control_row", "distance"])
        write_frame(df.astype({"distance": np.float64}), Path(path))


def nearest_neighbor_match(
    fit: PropensityFit,
    dataset: Dataset,
    ratio: int = 1,
    with_replacement: bool = False,
    caliper: Optional[float] = None,
) -> MatchResult:
    """
    Treated units are processed from the highest score down; each takes its
    `ratio` nearest available controls by absolute score distance, ties going
    to the lowest row index. Matches further than `caliper` are dropped and a
    treated unit left without matches is excluded from the trimmed dataset.
    """
    config = MatchingConfig(ratio, with_replacement, caliper)
    scores = np.asarray(fit.scores)
    if scores.shape[0] != dataset.n:
        raise ValueError(f"{scores.shape[0]} scores for {dataset.n} units")

    treated = np.flatnonzero(dataset.d == 1)
    controls = np.flatnonzero(dataset.d == 0)

    required = config.ratio * treated.size
    if not config.with_replacement and controls.size < required:
        raise PoolExhaustedError(required - controls.size, controls.size, required)
    if controls.size == 0 and treated.size:
        raise PoolExhaustedError(config.ratio, 0, config.ratio)

    # stable sort: equal scores keep ascending row order
    order = treated[np.argsort(-scores[treated], kind="stable")]
    available = np.ones(controls.size, dtype=bool)

    pairs = []
    excluded = []
    for t in order:
        pool = np.flatnonzero(available)
        dist = np.abs(scores[controls[pool]] - scores[t])
        # primary key distance, secondary key row index
        ranked = pool[np.lexsort((controls[pool], dist))][: config.ratio]
        distances = np.abs(scores[controls[ranked]] - scores[t])
        if config.caliper is not None:
            keep = distances <= config.caliper
            ranked, distances = ranked[keep], distances[keep]
        if ranked.size == 0:
            excluded.append(int(t))
            continue
        if not config.with_replacement:
            available[ranked] = False
        pairs.extend(
            MatchedPair(int(t), int(controls[j]), float(dd))
            for j, dd in zip(ranked, distances)
        )

    kept_treated = sorted({p.treated_row for p in pairs})
    matched_controls = sorted(p.control_row for p in pairs)  # repeats kept
    rows = tuple(sorted(kept_treated + matched_controls))

    return MatchResult(
        pairs=tuple(pairs),
        trimmed_dataset=dataset.subset(list(rows)),
        rows=rows,
        excluded_treated=tuple(sorted(excluded)),
    )


def match(fit: PropensityFit, dataset: Dataset, config: MatchingConfig) -> MatchResult:
    return nearest_neighbor_match(
        fit, dataset, config.ratio, config.with_replacement, config.caliper
    )


def standardized_mean_difference(values, d) -> float:
    """
    |mean_1 - mean_0| / sqrt((var_1 + var_0) / 2), the balance statistic
    used to compare arms before and after matching.
    """
    values = np.asarray(values, dtype=np.float64)
    d = np.asarray(d)
    a, b = values[d == 1], values[d == 0]
    if a.size == 0 or b.size == 0:
        return float("nan")
    var_a = a.var(ddof=1) if a.size > 1 else 0.0
    var_b = b.var(ddof=1) if b.size > 1 else 0.0
    pooled = np.sqrt((var_a + var_b) / 2.0)
    diff = abs(a.mean() - b.mean())
    if pooled == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / pooled)
