"""
Weighted GLM fitting for the two families the estimators need: logistic (the
propensity score) and gaussian-identity (the outcome regression).

Both fits solve the weighted score equations
    sum_i w_i * x_i * (y_i - mu_i) = 0
with the working variance fixed to 1 for the gaussian family and to the
canonical bernoulli variance for the logistic family.
"""
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular
from scipy.special import expit, log_expit

from bdr.core import Dataset
from bdr.util.exceptions import SeparationError, SingularFitError

INTERCEPT = "(intercept)"

# IRLS stopping rules
TOLERANCE = 1e-8
MAX_ITERATIONS = 100
COEFFICIENT_CAP = 30.0

# relative size of the smallest R diagonal below which the weighted design
# is treated as rank deficient
_RANK_RTOL = 1e-10


class Family(str, Enum):
    LOGISTIC = "LOGISTIC"
    GAUSSIAN = "GAUSSIAN"


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]
    treatment_column: Optional[int] = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError(f"design must be a 2d matrix with q >= 1, got {values.shape}")
        if len(self.column_names) != values.shape[1]:
            raise ValueError("one column name per design column required")
        if values.shape[0] and not np.all(values[:, 0] == 1.0):
            raise ValueError("first design column must be the intercept (all ones)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def q(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    family: Family
    converged: bool
    iterations: int
    deviance: float = float("nan")
    column_names: tuple[str, ...] = field(default=(), compare=False)

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.column_names.index(name)])


def _check_inputs(design: DesignMatrix, response, weights) -> tuple[np.ndarray, ...]:
    X = design.values
    y = np.asarray(response, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if y.shape[0] != design.n or w.shape[0] != design.n:
        raise ValueError(
            f"dimension mismatch: design has {design.n} rows, "
            f"response {y.shape[0]}, weights {w.shape[0]}"
        )
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and strictly positive")
    return X, y, w


def _weighted_lstsq(X: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    # solve min sum w (z - X b)^2 through a QR factorization of sqrt(w) X
    n, q = X.shape
    if n < q:
        raise SingularFitError(n, q)
    sw = np.sqrt(w)
    Q, R = qr(X * sw[:, None], mode="economic", check_finite=False)
    diag = np.abs(np.diag(R))
    if not diag.max() > 0 or diag.min() <= _RANK_RTOL * diag.max():
        raise SingularFitError(int(np.sum(diag > _RANK_RTOL * diag.max())), q)
    return solve_triangular(R, Q.T @ (sw * z), check_finite=False)


def fit_weighted_linear(design: DesignMatrix, response, weights) -> GlmFit:
    X, y, w = _check_inputs(design, response, weights)
    beta = _weighted_lstsq(X, y, w)
    resid = y - X @ beta
    return GlmFit(
        coefficients=beta,
        family=Family.GAUSSIAN,
        converged=True,
        iterations=1,
        deviance=float(np.sum(w * resid**2)),
        column_names=design.column_names,
    )


def _logistic_deviance(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    return float(-2.0 * np.sum(w * (y * log_expit(eta) + (1.0 - y) * log_expit(-eta))))


def fit_weighted_logistic(
    design: DesignMatrix,
    response,
    weights,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITERATIONS,
    cap: float = COEFFICIENT_CAP,
) -> GlmFit:
    """
    Weighted bernoulli maximum likelihood by iteratively reweighted least
    squares, starting from zero.

    Converged means both the relative deviance change and the largest
    absolute coefficient update of the last iteration fell below `tol`.
    A coefficient leaving [-cap, cap] is reported as perfect separation.
    """
    X, y, w = _check_inputs(design, response, weights)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic response must be 0/1")

    beta = np.zeros(design.q)
    eta = X @ beta
    dev = _logistic_deviance(eta, y, w)

    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):  # noqa: B007
        mu = expit(eta)
        # saturated units carry (almost) no information; keep them finite
        var = np.maximum(mu * (1.0 - mu), 1e-12)
        z = eta + (y - mu) / var
        new_beta = _weighted_lstsq(X, z, w * var)

        step = float(np.max(np.abs(new_beta - beta)))
        beta = new_beta

        worst = int(np.argmax(np.abs(beta)))
        if abs(beta[worst]) > cap:
            raise SeparationError(design.column_names[worst], float(beta[worst]))

        eta = X @ beta
        new_dev = _logistic_deviance(eta, y, w)
        rel_change = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        dev = new_dev
        if rel_change < tol and step < tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"IRLS did not converge after {max_iter} iterations", stacklevel=2
        )

    return GlmFit(
        coefficients=beta,
        family=Family.LOGISTIC,
        converged=converged,
        iterations=iterations,
        deviance=dev,
        column_names=design.column_names,
    )


def linear_predictor(fit: GlmFit, design: DesignMatrix) -> np.ndarray:
    if design.q != fit.coefficients.shape[0]:
        raise ValueError(
            f"design has {design.q} columns but the fit has "
            f"{fit.coefficients.shape[0]} coefficients"
        )
    return design.values @ fit.coefficients


def predict(fit: GlmFit, design: DesignMatrix) -> np.ndarray:
    eta = linear_predictor(fit, design)
    if fit.family == Family.LOGISTIC:
        return expit(eta)
    return eta


def _standardize(col: np.ndarray) -> Optional[np.ndarray]:
    sd = col.std(ddof=1) if col.shape[0] > 1 else 0.0
    if not sd > 0:
        return None
    return (col - col.mean()) / sd


def expand_basis(
    dataset: Dataset,
    degree: int = 1,
    include_treatment: bool = True,
    covariates: Optional[Sequence[str]] = None,
    interact: bool = False,
    treatment=None,
) -> DesignMatrix:
    """
    Build [intercept, treatment, covariate basis, treatment x basis].

    Each covariate contributes its raw column, then powers 2..degree of the
    covariate centered and scaled to unit sample variance. `treatment`
    overrides the observed treatment column (counterfactual designs); the
    basis always comes from the dataset's own covariates so factual and
    counterfactual designs share it.
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if covariates is None:
        covariates = dataset.covariate_names
    n = dataset.n

    cols = [np.ones(n)]
    names = [INTERCEPT]
    notes = []

    treatment_column = None
    if include_treatment:
        d = dataset.d if treatment is None else np.broadcast_to(
            np.asarray(treatment, dtype=np.float64), (n,)
        )
        treatment_column = len(cols)
        cols.append(d)
        names.append(dataset.treatment_name)

    basis, basis_names = [], []
    for c in covariates:
        raw = dataset.x[:, dataset.covariate_index(c)]
        basis.append(raw)
        basis_names.append(c)
        if degree == 1:
            continue
        z = _standardize(raw)
        if z is None:
            msg = f"covariate {c!r} is constant; its degree-{degree} terms are rank deficient"
            notes.append(msg)
            warnings.warn(msg, stacklevel=2)
            z = np.zeros(n)
        for power in range(2, degree + 1):
            basis.append(z**power)
            basis_names.append(f"{c}^{power}")

    cols.extend(basis)
    names.extend(basis_names)

    if interact and include_treatment:
        for b, name in zip(basis, basis_names):
            cols.append(cols[treatment_column] * b)
            names.append(f"{dataset.treatment_name}:{name}")

    return DesignMatrix(
        np.column_stack(cols), tuple(names), treatment_column, tuple(notes)
    )


def propensity_design(dataset: Dataset, degree: int = 1) -> DesignMatrix:
    return expand_basis(dataset, degree, include_treatment=False)


@dataclass(frozen=True)
class OutcomeModel:
    """
    The mean function m(d, x; xi) of the outcome regression, as a recipe for
    factual and counterfactual design matrices.
    """

    degree: int = 1
    covariates: Optional[tuple[str, ...]] = None  # None = every covariate
    interact: bool = False

    def design(self, dataset: Dataset, treatment=None) -> DesignMatrix:
        return expand_basis(
            dataset,
            self.degree,
            include_treatment=True,
            covariates=self.covariates,
            interact=self.interact,
            treatment=treatment,
        )

    def contrast_designs(self, dataset: Dataset) -> tuple[DesignMatrix, DesignMatrix]:
        # designs with every unit set to treated / control
        return self.design(dataset, treatment=1.0), self.design(dataset, treatment=0.0)


NAIVE_MODEL = OutcomeModel(covariates=())
