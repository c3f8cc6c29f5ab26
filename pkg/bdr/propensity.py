"""
Propensity scores, inverse-probability (kappa) weights and overlap diagnostics.
"""
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from bdr.core import Dataset
from bdr.glm import GlmFit, fit_weighted_logistic, predict, propensity_design
from bdr.util.exceptions import DomainError

# scores are clamped into [EPS, 1 - EPS] before they become weights
SCORE_EPS = 1e-6
HISTOGRAM_BINS = 20


def clamp_scores(scores) -> np.ndarray:
    return np.clip(np.asarray(scores, dtype=np.float64), SCORE_EPS, 1.0 - SCORE_EPS)


def kappa_weight(d: int, score: float) -> float:
    if not 0.0 < score < 1.0:
        raise DomainError(f"propensity score must lie in (0, 1), got {score}")
    if d not in (0, 1):
        raise DomainError(f"treatment must be 0 or 1, got {d}")
    return d / score + (1 - d) / (1.0 - score)


def kappa_weights(d: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # vectorized kappa_weight; scores are assumed clamped
    return d / scores + (1.0 - d) / (1.0 - scores)


@dataclass(frozen=True)
class PropensityFit:
    glm: Optional[GlmFit]  # None for scores that did not come from a model
    scores: np.ndarray
    kappa: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.shape[0]


def propensity_from_scores(
    dataset: Dataset, scores, glm: Optional[GlmFit] = None
) -> PropensityFit:
    scores = clamp_scores(scores)
    if scores.shape != (dataset.n,):
        raise ValueError(f"expected {dataset.n} scores, got {scores.shape}")
    kappa = kappa_weights(dataset.d, scores)
    scores.setflags(write=False)
    kappa.setflags(write=False)
    return PropensityFit(glm=glm, scores=scores, kappa=kappa)


def estimate_propensity(dataset: Dataset, degree: int = 1, weights=None) -> PropensityFit:
    """
    Logistic regression of treatment on the covariate basis. `weights`
    defaults to unit weights; the bootstrap passes its replicate weights
    when the score is re-estimated per replicate.
    """
    dataset.require_valid()
    design = propensity_design(dataset, degree)
    if weights is None:
        weights = np.ones(dataset.n)
    fit = fit_weighted_logistic(design, dataset.d, weights)
    return propensity_from_scores(dataset, predict(fit, design), glm=fit)


def random_propensity(dataset: Dataset, rng: np.random.Generator) -> PropensityFit:
    # a deliberately wrong PS model: one Uniform(0, 1) score per unit
    return propensity_from_scores(dataset, rng.uniform(0.0, 1.0, size=dataset.n))


@dataclass(frozen=True)
class OverlapSummary:
    treated_min: float
    treated_max: float
    control_min: float
    control_max: float
    support_low: float
    support_high: float
    off_support: int
    off_support_fraction: float
    bin_edges: tuple[float, ...]
    treated_counts: tuple[int, ...]
    control_counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "treated_range": [self.treated_min, self.treated_max],
            "control_range": [self.control_min, self.control_max],
            "common_support": [self.support_low, self.support_high],
            "off_support": self.off_support,
            "off_support_fraction": self.off_support_fraction,
            "histogram": {
                "bin_edges": list(self.bin_edges),
                "treated": list(self.treated_counts),
                "control": list(self.control_counts),
            },
        }


def overlap_report(fit: PropensityFit, dataset: Dataset) -> OverlapSummary:
    treated = fit.scores[dataset.d == 1]
    control = fit.scores[dataset.d == 0]
    if treated.size == 0 or control.size == 0:
        # no common support without both arms
        nan = float("nan")
        t_min = t_max = c_min = c_max = nan
        low, high = nan, nan
        off = dataset.n
    else:
        t_min, t_max = float(treated.min()), float(treated.max())
        c_min, c_max = float(control.min()), float(control.max())
        low, high = max(t_min, c_min), min(t_max, c_max)
        off = int(np.sum((fit.scores < low) | (fit.scores > high)))

    edges = np.linspace(0.0, 1.0, HISTOGRAM_BINS + 1)
    t_counts, _ = np.histogram(treated, bins=edges)
    c_counts, _ = np.histogram(control, bins=edges)

    if dataset.n and off:
        warnings.warn(
            f"{off} of {dataset.n} units lie outside the common support "
            f"[{low:.4g}, {high:.4g}]",
            stacklevel=2,
        )

    return OverlapSummary(
        treated_min=t_min,
        treated_max=t_max,
        control_min=c_min,
        control_max=c_max,
        support_low=low,
        support_high=high,
        off_support=off,
        off_support_fraction=off / dataset.n if dataset.n else 0.0,
        bin_edges=tuple(float(e) for e in edges),
        treated_counts=tuple(int(c) for c in t_counts),
        control_counts=tuple(int(c) for c in c_counts),
    )
