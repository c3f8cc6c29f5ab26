"""
The estimator menu: outcome regression (OR), inverse probability weighting
(IPW), doubly robust (DR) and the naive difference in means, each as a
bayesian-bootstrap posterior with an optional frequentist bootstrap
comparator.
"""
import logging
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from bdr.bayes_boot import (
    ATEDistribution,
    KappaSource,
    ate_from_coefficients,
    draw_dirichlet_weights,
    muliere_secchi_resample,
    posterior_predictive_ate,
    posterior_sample,
)
from bdr.core import Dataset, EstimatorConfig, EstimatorKind
from bdr.glm import NAIVE_MODEL, OutcomeModel, fit_weighted_linear
from bdr.matching import MatchResult, match
from bdr.propensity import (
    OverlapSummary,
    PropensityFit,
    estimate_propensity,
    overlap_report,
)
from bdr.util.exceptions import BdrError, ReplicateError
from bdr.util.parallel import parallel_map
from bdr.util.rng import RandomStreams, Stage

DEFAULT_FREQUENTIST_REPS = 1000


class ReportKind(str, Enum):
    OR = "OR"
    IPW = "IPW"
    DR = "DR"
    NAIVE_MATCHED = "NAIVE_MATCHED"
    NAIVE_FULL = "NAIVE_FULL"

    @property
    def estimator_kind(self) -> EstimatorKind:
        if self in (ReportKind.NAIVE_MATCHED, ReportKind.NAIVE_FULL):
            return EstimatorKind.NAIVE
        return EstimatorKind(self.value)


@dataclass(frozen=True)
class FrequentistEstimate:
    point: float
    se: float
    reps: int

    def to_dict(self) -> dict:
        return {"point": self.point, "se": self.se, "reps": self.reps}


@dataclass(frozen=True)
class EstimateReport:
    kind: ReportKind
    bayes: ATEDistribution
    config: EstimatorConfig
    n: int
    matched: bool = False
    frequentist: Optional[FrequentistEstimate] = None
    label: str = ""
    baseline_mean: Optional[float] = None
    overlap: Optional[OverlapSummary] = None
    dataset_fingerprint: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.kind.value)

    @property
    def seed(self) -> int:
        return self.config.rng_seed

    @property
    def percent_change(self) -> Optional[float]:
        # derived convenience: 100 * ATE / baseline mean
        if self.baseline_mean is None or self.baseline_mean == 0:
            return None
        return 100.0 * self.bayes.mean / self.baseline_mean

    def with_baseline(self, baseline_mean: float) -> "EstimateReport":
        return replace(self, baseline_mean=float(baseline_mean))

    def to_dict(self, include_samples: bool = False) -> dict:
        return {
            "kind": self.kind.value,
            "label": self.label,
            "n": self.n,
            "matched": self.matched,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "dataset_fingerprint": self.dataset_fingerprint,
            "bayes": self.bayes.to_dict(include_samples),
            "frequentist": None if self.frequentist is None else self.frequentist.to_dict(),
            "baseline_mean": self.baseline_mean,
            "percent_change": self.percent_change,
            "overlap": None if self.overlap is None else self.overlap.to_dict(),
        }


def outcome_model(config: EstimatorConfig) -> OutcomeModel:
    return OutcomeModel(config.degree, config.or_covariates, config.interact)


def kappa_source(dataset: Dataset, config: EstimatorConfig, fit: PropensityFit) -> KappaSource:
    """
    The kappa weights fed to the weighted outcome regression: fixed from the
    initial propensity fit, or re-estimated under each replicate's weights
    when `config.reestimate_ps` is set.
    """
    if not config.reestimate_ps:
        return fit.kappa
    return lambda w: estimate_propensity(dataset, config.ps_degree, weights=w).kappa


def bayesian_ate(
    dataset: Dataset,
    model: OutcomeModel,
    kappa: KappaSource,
    config: EstimatorConfig,
    streams: Optional[RandomStreams] = None,
    threads: Optional[int] = None,
) -> ATEDistribution:
    """
    Bootstrap posterior of the (kappa-weighted) regression, optional prior
    mixing, then the posterior predictive ATE. Each stage draws from its own
    stream, so dropping the prior leaves the other stages' draws unchanged.
    """
    if streams is None:
        streams = RandomStreams(config.rng_seed)
    pn = posterior_sample(
        dataset,
        model,
        kappa,
        L=config.L,
        streams=streams,
        threads=config.threads if threads is None else threads,
    )
    prior = config.prior_spec()
    pm = pn if prior is None else muliere_secchi_resample(
        pn, prior, rng=streams.generator(Stage.PRIOR)
    )
    return posterior_predictive_ate(
        pm,
        dataset,
        V=config.covariate_resample_size,
        M=config.bootstrap_reps,
        rng=streams.generator(Stage.PREDICTIVE),
    )


def ipw_ate(y, d, scores, w=None) -> float:
    """
    Horvitz-Thompson ATE: mean of w_i * (d_i y_i / pi_i - (1 - d_i) y_i / (1 - pi_i)).
    """
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=np.float64)
    return float(np.mean(w * (d * y / scores - (1.0 - d) * y / (1.0 - scores))))


def _matched_dataset(dataset: Dataset, config: EstimatorConfig) -> MatchResult:
    fit = estimate_propensity(dataset, config.ps_degree)
    result = match(fit, dataset, config.matching_config())
    logging.info(
        f"matched {len(result.pairs)} pairs, trimmed dataset has "
        f"{result.trimmed_dataset.n} of {dataset.n} units"
    )
    return result


def _analysis_dataset(dataset: Dataset, config: EstimatorConfig, use_matching: bool) -> Dataset:
    dataset.require_valid()
    if not use_matching:
        return dataset
    trimmed = _matched_dataset(dataset, config).trimmed_dataset
    trimmed.require_valid()
    return trimmed


def _finish(
    kind: ReportKind,
    bayes: ATEDistribution,
    dataset: Dataset,
    config: EstimatorConfig,
    matched: bool,
    overlap: Optional[OverlapSummary] = None,
) -> EstimateReport:
    frequentist = None
    if config.frequentist_reps > 0:
        point, se = frequentist_bootstrap(dataset, config, kind.estimator_kind)
        frequentist = FrequentistEstimate(point, se, config.frequentist_reps)
    return EstimateReport(
        kind=kind,
        bayes=bayes,
        config=config,
        n=dataset.n,
        matched=matched,
        frequentist=frequentist,
        overlap=overlap,
        dataset_fingerprint=dataset.fingerprint,
    )


def estimate_or(dataset: Dataset, config: EstimatorConfig) -> EstimateReport:
    data = _analysis_dataset(dataset, config, config.use_matching)
    bayes = bayesian_ate(data, outcome_model(config), None, config)
    return _finish(ReportKind.OR, bayes, data, config, config.use_matching)


def estimate_ipw(dataset: Dataset, config: EstimatorConfig) -> EstimateReport:
    """
    Bayesian IPW: the Horvitz-Thompson sum with each replicate's Dirichlet
    weights inserted. There is no regression to place a prior on, so a
    configured prior is ignored.
    """
    data = _analysis_dataset(dataset, config, config.use_matching)
    if config.prior is not None:
        warnings.warn("the IPW estimator has no coefficient prior; ignoring it", stacklevel=2)

    fit = estimate_propensity(data, config.ps_degree)
    streams = RandomStreams(config.rng_seed)

    def replicate(l: int) -> float:
        rng = streams.generator(Stage.WEIGHTS, l)
        w = draw_dirichlet_weights(data.n, rng).w
        scores = fit.scores
        if config.reestimate_ps:
            scores = estimate_propensity(data, config.ps_degree, weights=w).scores
        return ipw_ate(data.y, data.d, scores, w)

    samples = parallel_map(replicate, range(config.bootstrap_reps), config.threads)
    bayes = ATEDistribution.from_samples(samples)
    return _finish(
        ReportKind.IPW, bayes, data, config, config.use_matching, overlap_report(fit, data)
    )


def estimate_dr(dataset: Dataset, config: EstimatorConfig) -> EstimateReport:
    data = _analysis_dataset(dataset, config, config.use_matching)
    fit = estimate_propensity(data, config.ps_degree)
    logging.info(f"DR: propensity fitted on {data.n} units in {fit.glm.iterations} iterations")
    bayes = bayesian_ate(data, outcome_model(config), kappa_source(data, config, fit), config)
    return _finish(
        ReportKind.DR, bayes, data, config, config.use_matching, overlap_report(fit, data)
    )


def estimate_naive(dataset: Dataset, config: EstimatorConfig, use_matching: bool) -> EstimateReport:
    data = _analysis_dataset(dataset, config, use_matching)
    bayes = bayesian_ate(data, NAIVE_MODEL, None, config)
    kind = ReportKind.NAIVE_MATCHED if use_matching else ReportKind.NAIVE_FULL
    return _finish(kind, bayes, data, config, use_matching)


def run_estimator(dataset: Dataset, config: EstimatorConfig, kind: ReportKind) -> EstimateReport:
    kind = ReportKind(kind)
    if kind == ReportKind.OR:
        return estimate_or(dataset, config)
    if kind == ReportKind.IPW:
        return estimate_ipw(dataset, config)
    if kind == ReportKind.DR:
        return estimate_dr(dataset, config)
    return estimate_naive(dataset, config, use_matching=kind == ReportKind.NAIVE_MATCHED)


def point_estimate(dataset: Dataset, config: EstimatorConfig, kind: EstimatorKind) -> float:
    """
    The non-bayesian estimate of `kind` with unit observation weights: the
    regression contrast for OR, DR (kappa-weighted) and NAIVE, the
    Horvitz-Thompson sum for IPW.
    """
    kind = EstimatorKind(kind)
    if kind == EstimatorKind.IPW:
        fit = estimate_propensity(dataset, config.ps_degree)
        return ipw_ate(dataset.y, dataset.d, fit.scores)

    model = NAIVE_MODEL if kind == EstimatorKind.NAIVE else outcome_model(config)
    weights = np.ones(dataset.n)
    if kind == EstimatorKind.DR:
        weights = estimate_propensity(dataset, config.ps_degree).kappa
    beta = fit_weighted_linear(model.design(dataset), dataset.y, weights).coefficients
    treated, control = model.contrast_designs(dataset)
    contrast = (treated.values - control.values).mean(axis=0)
    return float(ate_from_coefficients(contrast, beta))


def frequentist_bootstrap(
    dataset: Dataset,
    config: EstimatorConfig,
    kind: EstimatorKind,
    reps: Optional[int] = None,
) -> tuple[float, float]:
    """
    Nonparametric bootstrap of `point_estimate`: `reps` row resamples with
    replacement (default config.frequentist_reps, or 1000 when unset), the
    propensity score refitted on every resample. Returns the full-sample
    estimate and the standard deviation over resamples.
    """
    dataset.require_valid()
    B = reps or config.frequentist_reps or DEFAULT_FREQUENTIST_REPS
    streams = RandomStreams(config.rng_seed)
    point = point_estimate(dataset, config, kind)

    def resample(b: int) -> float:
        rng = streams.generator(Stage.FREQUENTIST, b)
        failure: Optional[Exception] = None
        for _attempt in range(2):
            rows = rng.integers(0, dataset.n, size=dataset.n)
            sub = dataset.subset(rows)
            try:
                sub.require_valid()
                return point_estimate(sub, config, kind)
            except BdrError as e:
                failure = e
        raise ReplicateError(b, failure)

    estimates = np.asarray(parallel_map(resample, range(B), config.threads))
    se = float(estimates.std(ddof=1)) if B > 1 else 0.0
    return point, se
