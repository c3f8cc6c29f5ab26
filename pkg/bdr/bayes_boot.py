"""
Approximate bayesian inference for the (kappa-weighted) outcome regression.

The pipeline is:
  1. draw_dirichlet_weights / posterior_sample: refit the regression under
     L independent uniform-Dirichlet observation weights (times the kappa
     weights, if any); the fits form the bootstrap posterior p_n.
  2. muliere_secchi_resample: mix p_n with a parametric prior p_0 held with
     "measure of faith" k, giving p_m.
  3. posterior_predictive_ate: average the predicted treated-minus-control
     contrast over resampled covariate vectors, once per draw from p_m.
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from bdr.core import Dataset
from bdr.glm import Family, OutcomeModel, fit_weighted_linear
from bdr.util.exceptions import FitError, ReplicateError
from bdr.util.parallel import parallel_map
from bdr.util.rng import RandomStreams, Stage


@dataclass(frozen=True)
class BootstrapWeights:
    w: np.ndarray

    def __post_init__(self):
        if not np.all(self.w > 0):
            raise ValueError("bootstrap weights must be strictly positive")

    @property
    def n(self) -> int:
        return self.w.shape[0]


def draw_dirichlet_weights(n: int, rng: np.random.Generator) -> BootstrapWeights:
    """
    n standard exponential variates divided by their mean: n times a
    uniform Dirichlet vector, so the weights have mean 1 and sum n.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    e = rng.standard_exponential(n)
    # exact zeros have probability ~0 but would break the weighted fit
    e = np.maximum(e, np.finfo(np.float64).tiny)
    return BootstrapWeights(e / e.mean())


WeightSampler = Callable[[int, np.random.Generator], BootstrapWeights]
KappaSource = Union[None, np.ndarray, Callable[[np.ndarray], np.ndarray]]


class PosteriorLabel(str, Enum):
    PN = "PN"  # bootstrap posterior
    PM = "PM"  # after prior mixing


@dataclass(frozen=True)
class PosteriorDraws:
    draws: np.ndarray  # L x q
    label: PosteriorLabel
    model: OutcomeModel
    column_names: tuple[str, ...]
    treatment_column: int = 1
    family: Family = Family.GAUSSIAN
    # Gamma resampling weights v_i and the number of prior-origin proposals
    # (PM only)
    resample_weights: Optional[np.ndarray] = None
    prior_proposals: int = 0

    @property
    def L(self) -> int:
        return self.draws.shape[0]

    @property
    def treatment_draws(self) -> np.ndarray:
        return self.draws[:, self.treatment_column]


class PriorKind(str, Enum):
    NORMAL_ON_COEFFICIENT = "NORMAL_ON_COEFFICIENT"
    POINT_MASS = "POINT_MASS"


@dataclass(frozen=True)
class PriorSpec:
    kind: PriorKind = PriorKind.NORMAL_ON_COEFFICIENT
    mean: float = 0.0
    sd: float = 1.0  # ignored for POINT_MASS
    k: float = 1.0
    # design column the prior is placed on; None = the treatment coefficient
    target_coefficient: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.k < 1:
            raise ValueError(f"measure of faith k must be >= 1, got {self.k}")
        if self.kind == PriorKind.NORMAL_ON_COEFFICIENT and not self.sd > 0:
            raise ValueError(f"prior sd must be positive, got {self.sd}")

    def with_faith(self, k: float) -> "PriorSpec":
        return replace(self, k=k)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == PriorKind.POINT_MASS:
            return np.full(size, float(self.mean))
        return rng.normal(self.mean, self.sd, size=size)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "mean": self.mean,
            "sd": None if self.kind == PriorKind.POINT_MASS else self.sd,
            "k": self.k,
            "target_coefficient": self.target_coefficient,
        }


@dataclass(frozen=True)
class ATEDistribution:
    samples: np.ndarray
    mean: float
    sd: float
    credible_interval_95: tuple[float, float]

    @classmethod
    def from_samples(cls, samples) -> "ATEDistribution":
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size == 0:
            raise ValueError("an ATE distribution needs at least one sample")
        samples.setflags(write=False)
        if np.ptp(samples) == 0:
            # constant samples summarise exactly, without summation rounding
            value = float(samples[0])
            return cls(samples, value, 0.0, (value, value))
        sd = float(samples.std(ddof=1))
        lo, hi = np.percentile(samples, [2.5, 97.5])
        return cls(samples, float(samples.mean()), sd, (float(lo), float(hi)))

    @property
    def M(self) -> int:
        return self.samples.shape[0]

    def to_dict(self, include_samples: bool = False) -> dict:
        ret = {
            "M": self.M,
            "mean": self.mean,
            "sd": self.sd,
            "credible_interval_95": list(self.credible_interval_95),
        }
        if include_samples:
            ret["samples"] = self.samples.tolist()
        return ret


def _replicate_fit(
    l: int,
    design,
    y: np.ndarray,
    kappa: KappaSource,
    streams: RandomStreams,
    weight_sampler: WeightSampler,
) -> np.ndarray:
    rng = streams.generator(Stage.WEIGHTS, l)
    n = y.shape[0]
    failure: Optional[Exception] = None
    # one redraw is allowed; a second consecutive failure is surfaced
    for _attempt in range(2):
        w = weight_sampler(n, rng).w
        try:
            if kappa is None:
                combined = w
            elif callable(kappa):
                combined = w * kappa(w)
            else:
                combined = w * kappa
            return fit_weighted_linear(design, y, combined).coefficients
        except FitError as e:
            logging.debug(f"replicate {l}: fit failed ({e}), redrawing weights")
            failure = e
    assert failure is not None
    raise ReplicateError(l, failure)


def posterior_sample(
    dataset: Dataset,
    design_builder: OutcomeModel,
    kappa: KappaSource = None,
    L: int = 1000,
    streams: Optional[RandomStreams] = None,
    threads: int = 1,
    weight_sampler: WeightSampler = draw_dirichlet_weights,
) -> PosteriorDraws:
    """
    L bayesian-bootstrap refits of the gaussian outcome regression.

    `kappa` is None (plain OR posterior), a fixed vector of kappa weights, or
    a callable mapping the replicate's Dirichlet weights to kappa weights
    (the propensity score re-estimated inside each replicate).
    Replicate l draws from its own stream, streams.generator(WEIGHTS, l).
    """
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if kappa is not None and not callable(kappa):
        kappa = np.asarray(kappa, dtype=np.float64)
        if kappa.shape != (dataset.n,):
            raise ValueError(f"kappa has shape {kappa.shape}, expected ({dataset.n},)")
    if streams is None:
        streams = RandomStreams()

    design = design_builder.design(dataset)
    y = dataset.y

    draws = parallel_map(
        lambda l: _replicate_fit(l, design, y, kappa, streams, weight_sampler),
        range(L),
        threads,
    )
    return PosteriorDraws(
        draws=np.vstack(draws),
        label=PosteriorLabel.PN,
        model=design_builder,
        column_names=design.column_names,
        treatment_column=design.treatment_column,
    )


def muliere_secchi_resample(
    pn: PosteriorDraws,
    prior: PriorSpec,
    m: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> PosteriorDraws:
    """
    Mix the bootstrap posterior with the prior: m proposals from
    (k p_0 + L p_n) / (k + L), Gamma((L + k) / m, 1) weights, and m draws
    resampled proportionally to those weights. Prior-origin proposals copy a
    uniformly chosen p_n row and replace only the prior's target coefficient.
    """
    if pn.L < 1:
        raise ValueError("empty posterior")
    L = pn.L
    m = L if m is None else m
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if rng is None:
        rng = np.random.default_rng()
    k = float(prior.k)
    target = pn.treatment_column if prior.target_coefficient is None else prior.target_coefficient

    from_prior = rng.random(m) < k / (k + L)
    proposals = pn.draws[rng.integers(0, L, size=m)].copy()
    n_prior = int(from_prior.sum())
    proposals[from_prior, target] = prior.sample(rng, n_prior)

    v = rng.gamma((L + k) / m, 1.0, size=m)
    picked = rng.choice(m, size=m, replace=True, p=v / v.sum())

    return replace(
        pn,
        draws=proposals[picked],
        label=PosteriorLabel.PM,
        resample_weights=v,
        prior_proposals=n_prior,
    )


def ate_from_coefficients(mean_contrast_row: np.ndarray, coefficients: np.ndarray) -> np.ndarray:
    """
    Identity-link ATE for each coefficient row: the averaged contrast design
    row (treated minus control) times the coefficients. Without interactions
    the contrast row is the unit vector of the treatment column, so each ATE
    equals that row's treatment coefficient exactly.
    """
    return np.einsum("...q,...q->...", mean_contrast_row, coefficients)


def posterior_predictive_ate(
    pm: PosteriorDraws,
    dataset: Dataset,
    V: int = 1000,
    M: int = 1000,
    rng: Optional[np.random.Generator] = None,
    chunk: int = 256,
) -> ATEDistribution:
    """
    For each of M samples: draw one coefficient row from `pm` and V
    covariate vectors uniformly with replacement from `dataset`, and average
    the predicted treated-minus-control contrast over them.
    """
    if V < 1 or M < 1:
        raise ValueError(f"V and M must be >= 1, got V={V}, M={M}")
    if rng is None:
        rng = np.random.default_rng()

    treated, control = pm.model.contrast_designs(dataset)
    n = dataset.n

    samples = np.empty(M)
    for start in range(0, M, chunk):
        size = min(chunk, M - start)
        rows = pm.draws[rng.integers(0, pm.L, size=size)]
        idx = rng.integers(0, n, size=(size, V))
        if pm.family == Family.GAUSSIAN:
            # difference the design rows first so that covariate terms cancel
            # exactly when they do not interact with the treatment
            contrast = (treated.values - control.values)[idx].mean(axis=1)
            samples[start : start + size] = ate_from_coefficients(contrast, rows)
        else:
            eta1 = np.einsum("svq,sq->sv", treated.values[idx], rows)
            eta0 = np.einsum("svq,sq->sv", control.values[idx], rows)
            samples[start : start + size] = (expit(eta1) - expit(eta0)).mean(axis=1)

    return ATEDistribution.from_samples(samples)
