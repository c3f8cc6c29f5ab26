"""
Simulation harness: a confounded data-generating process with a known
treatment effect, and a study running five outcome/propensity model
combinations over many generated datasets.

DGP (all scales are standard deviations):
    X ~ Normal(0, x_scale^2)
    D ~ Bernoulli(expit(alpha0 + alpha1 X))
    Y ~ Normal(beta0 + beta1 D + beta2 X, y_noise_scale^2)
The true ATE is beta1.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import expit

from bdr.bayes_boot import PriorSpec
from bdr.core import Dataset, EstimatorConfig, EstimatorKind, save_csv
from bdr.estimators import bayesian_ate, point_estimate
from bdr.glm import NAIVE_MODEL, OutcomeModel
from bdr.propensity import PropensityFit, estimate_propensity, random_propensity
from bdr.util.exceptions import BdrError, SimulationRunError
from bdr.util.parallel import parallel_map
from bdr.util.rng import RandomStreams, Stage

# bayesian bootstrap replicates per run
DEFAULT_SIM_REPS = 200
DEFAULT_RUNS = 1000

# "Normal(0, 10)" read as variance 10; see scale_calibration
X_SCALE = math.sqrt(10.0)
Y_NOISE_SCALE = math.sqrt(5.0)


@dataclass(frozen=True)
class DgpParams:
    alpha0: float = 2.0
    alpha1: float = 0.2
    beta0: float = 10.0
    beta1: float = 5.0
    beta2: float = 0.2
    x_scale: float = X_SCALE
    y_noise_scale: float = Y_NOISE_SCALE
    n: int = 1000

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if not (self.x_scale > 0 and self.y_noise_scale > 0):
            raise ValueError("x_scale and y_noise_scale must be positive")

    @property
    def true_ate(self) -> float:
        return self.beta1

    def to_dict(self) -> dict:
        return asdict(self)


def generate_dgp(params: DgpParams, rng: np.random.Generator) -> Dataset:
    x = rng.normal(0.0, params.x_scale, size=params.n)
    d = (rng.random(params.n) < expit(params.alpha0 + params.alpha1 * x)).astype(np.int64)
    noise = rng.normal(0.0, params.y_noise_scale, size=params.n)
    y = params.beta0 + params.beta1 * d + params.beta2 * x + noise
    return Dataset(y, d, x.reshape(-1, 1), ("x",))


def write_dgp_csv(params: DgpParams, rng: np.random.Generator, path) -> Dataset:
    dataset = generate_dgp(params, rng)
    save_csv(dataset, path)
    return dataset


class PropensitySource(str, Enum):
    NONE = "NONE"  # plain outcome regression
    FITTED = "FITTED"  # logistic fit on the covariate
    RANDOM = "RANDOM"  # one Uniform(0, 1) score per unit


@dataclass(frozen=True)
class SimulationConfiguration:
    name: str
    model: OutcomeModel
    propensity: PropensitySource
    description: str = ""


CORRECT_OR = OutcomeModel()

CONFIGURATIONS = (
    SimulationConfiguration("BOR1", CORRECT_OR, PropensitySource.NONE, "correct OR"),
    SimulationConfiguration("BOR2", NAIVE_MODEL, PropensitySource.NONE, "OR omitting X"),
    SimulationConfiguration(
        "BDR1", NAIVE_MODEL, PropensitySource.FITTED, "wrong OR, correct PS"
    ),
    SimulationConfiguration(
        "BDR2", CORRECT_OR, PropensitySource.RANDOM, "correct OR, random PS"
    ),
    SimulationConfiguration(
        "BDR3", NAIVE_MODEL, PropensitySource.RANDOM, "wrong OR, random PS"
    ),
)


def simulation_config(
    L: int = DEFAULT_SIM_REPS,
    V: int = 1000,
    prior_mean: float = 5.0,
    prior_sd: float = 1.0,
    k: float = 1.0,
    seed: int = 0,
    threads: int = 1,
) -> EstimatorConfig:
    """
    The study's estimator settings: a Normal prior centred on the true
    effect, held with a low measure of faith.
    """
    prior = PriorSpec(mean=prior_mean, sd=prior_sd, k=k) if k > 0 else None
    return EstimatorConfig(
        estimator_kind=EstimatorKind.DR,
        bootstrap_reps=L,
        covariate_resample_size=V,
        prior=prior,
        measure_of_faith=k if prior is not None else 1.0,
        rng_seed=seed,
        threads=threads,
    )


@dataclass(frozen=True)
class SimulationRow:
    name: str
    average_estimate: float
    empirical_variance: float
    mse: float

    @classmethod
    def from_estimates(cls, name: str, estimates, truth: float) -> "SimulationRow":
        estimates = np.asarray(estimates, dtype=np.float64)
        return cls(
            name=name,
            average_estimate=float(estimates.mean()),
            # population variance, so that mse = variance + bias^2
            empirical_variance=float(estimates.var()),
            mse=float(np.mean((estimates - truth) ** 2)),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SimulationReport:
    rows: tuple[SimulationRow, ...]
    runs: int
    n: int
    true_ate: float
    params: DgpParams
    config: EstimatorConfig
    # run-by-configuration matrix of posterior means
    estimates: Optional[np.ndarray] = field(repr=False, compare=False, default=None)

    @property
    def seed(self) -> int:
        return self.config.rng_seed

    def row(self, name: str) -> SimulationRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def bias(self, name: str) -> float:
        return self.row(name).average_estimate - self.true_ate

    def to_dict(self, include_estimates: bool = False) -> dict:
        ret = {
            "runs": self.runs,
            "n": self.n,
            "true_ate": self.true_ate,
            "seed": self.seed,
            "params": self.params.to_dict(),
            "config": self.config.to_dict(),
            "rows": [r.to_dict() for r in self.rows],
        }
        if include_estimates and self.estimates is not None:
            names = [r.name for r in self.rows]
            ret["estimates"] = {
                name: self.estimates[:, j].tolist() for j, name in enumerate(names)
            }
        return ret


def _run_once(
    run: int,
    params: DgpParams,
    config: EstimatorConfig,
    streams: RandomStreams,
    configurations: tuple[SimulationConfiguration, ...],
) -> list[float]:
    run_streams = streams.spawn(Stage.RUN, run)
    dataset = generate_dgp(params, run_streams.generator(Stage.DGP))
    dataset.require_valid()

    fits: dict[PropensitySource, PropensityFit] = {}

    def kappa_for(source: PropensitySource) -> Optional[np.ndarray]:
        if source == PropensitySource.NONE:
            return None
        if source not in fits:
            if source == PropensitySource.FITTED:
                fits[source] = estimate_propensity(dataset, config.ps_degree)
            else:
                fits[source] = random_propensity(
                    dataset, run_streams.generator(Stage.PROPENSITY)
                )
        return fits[source].kappa

    # configurations share the run's streams (common random numbers)
    return [
        bayesian_ate(
            dataset, c.model, kappa_for(c.propensity), config, run_streams, threads=1
        ).mean
        for c in configurations
    ]


def run_simulation_study(
    runs: int,
    params: DgpParams,
    config: EstimatorConfig,
    streams: Optional[RandomStreams] = None,
    configurations: tuple[SimulationConfiguration, ...] = CONFIGURATIONS,
) -> SimulationReport:
    """
    Generate `runs` datasets and record the posterior-mean ATE of every
    configuration on each. Runs are spread over `config.threads` threads;
    run r always draws from streams.spawn(RUN, r).
    """
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    if streams is None:
        streams = RandomStreams(config.rng_seed)

    def one(run: int) -> list[float]:
        try:
            return _run_once(run, params, config, streams, configurations)
        except (BdrError, ValueError) as e:
            raise SimulationRunError(run, e) from e

    logging.info(f"simulation: {runs} runs of n={params.n}, L={config.L}")
    estimates = np.array(parallel_map(one, range(runs), config.threads), dtype=np.float64)
    estimates = estimates.reshape(runs, len(configurations))

    rows = tuple(
        SimulationRow.from_estimates(c.name, estimates[:, j], params.true_ate)
        for j, c in enumerate(configurations)
    )
    return SimulationReport(
        rows=rows,
        runs=runs,
        n=params.n,
        true_ate=params.true_ate,
        params=params,
        config=config,
        estimates=estimates,
    )


@dataclass(frozen=True)
class ScaleCalibration:
    n: int
    # average OLS treatment coefficient with X omitted, per reading of the
    # covariate scale
    variance_reading: float
    sd_reading: float
    target: float = 5.350

    @property
    def adopted(self) -> str:
        if abs(self.variance_reading - self.target) <= abs(self.sd_reading - self.target):
            return "variance"
        return "sd"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "target": self.target,
            "variance_reading": self.variance_reading,
            "sd_reading": self.sd_reading,
            "adopted": self.adopted,
        }


def scale_calibration(
    n: int = 1_000_000, streams: Optional[RandomStreams] = None
) -> ScaleCalibration:
    """
    Fit the OR omitting X on one large dataset under each reading of the
    "Normal(0, 10)" covariate scale (variance 10 or sd 10) and report the
    resulting biased treatment coefficients.
    """
    if streams is None:
        streams = RandomStreams()
    config = EstimatorConfig()
    results = []
    for i, x_scale in enumerate((math.sqrt(10.0), 10.0)):
        params = replace(DgpParams(), x_scale=x_scale, n=n)
        dataset = generate_dgp(params, streams.generator(Stage.DGP, i))
        results.append(point_estimate(dataset, config, EstimatorKind.NAIVE))
    return ScaleCalibration(n=n, variance_reading=results[0], sd_reading=results[1])
