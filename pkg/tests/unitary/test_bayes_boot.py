import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdr.bayes_boot import (
    ATEDistribution,
    BootstrapWeights,
    PosteriorDraws,
    PosteriorLabel,
    PriorKind,
    PriorSpec,
    draw_dirichlet_weights,
    muliere_secchi_resample,
    posterior_predictive_ate,
    posterior_sample,
)
from bdr.core import Dataset, EstimatorConfig, EstimatorKind
from bdr.estimators import bayesian_ate, frequentist_bootstrap
from bdr.glm import OutcomeModel, fit_weighted_linear
from bdr.sim import DgpParams, generate_dgp
from bdr.test.strategies import dirichlet_problems
from bdr.util.exceptions import ReplicateError, SingularFitError
from bdr.util.rng import RandomStreams, Stage

CORRECT_OR = OutcomeModel()


@pytest.fixture(scope="module")
def dgp_data():
    return generate_dgp(DgpParams(n=1000), np.random.default_rng(2024))


def _ones(n, rng):
    return BootstrapWeights(np.ones(n))


def _synthetic_draws(L=1000, seed=0, model=CORRECT_OR):
    rng = np.random.default_rng(seed)
    draws = rng.normal([10.0, 5.0, 0.2], [0.3, 0.2, 0.05], size=(L, 3))
    return PosteriorDraws(draws, PosteriorLabel.PN, model, ("(intercept)", "d", "x"))


def test_single_unit_weight_is_one():
    for seed in range(10):
        w = draw_dirichlet_weights(1, np.random.default_rng(seed)).w
        assert w.tolist() == [1.0]


@given(problem=dirichlet_problems())
def test_weights_positive_and_sum_to_n(problem):
    n, seed = problem
    w = draw_dirichlet_weights(n, np.random.default_rng(seed)).w
    assert w.shape == (n,)
    assert np.all(w > 0)
    assert w.sum() == pytest.approx(n, rel=1e-9)


def test_weights_have_dirichlet_means():
    rng = np.random.default_rng(5)
    draws = np.stack([draw_dirichlet_weights(100, rng).w for _ in range(10000)])
    assert np.max(np.abs(draws.mean(axis=0) - 1.0)) < 0.05


def test_weights_reject_bad_n():
    with pytest.raises(ValueError):
        draw_dirichlet_weights(0, np.random.default_rng(0))


def test_degenerate_weights_reduce_to_one_fit(dgp_data):
    pn = posterior_sample(
        dgp_data, CORRECT_OR, L=1, streams=RandomStreams(1), weight_sampler=_ones
    )
    fit = fit_weighted_linear(CORRECT_OR.design(dgp_data), dgp_data.y, np.ones(dgp_data.n))
    assert pn.label == PosteriorLabel.PN
    np.testing.assert_array_equal(pn.draws[0], fit.coefficients)


def test_kappa_enters_as_weights(dgp_data):
    kappa = np.linspace(1.0, 3.0, dgp_data.n)
    pn = posterior_sample(
        dgp_data, CORRECT_OR, kappa, L=1, streams=RandomStreams(1), weight_sampler=_ones
    )
    fit = fit_weighted_linear(CORRECT_OR.design(dgp_data), dgp_data.y, kappa)
    np.testing.assert_allclose(pn.draws[0], fit.coefficients, rtol=0, atol=1e-12)

    with pytest.raises(ValueError):
        posterior_sample(dgp_data, CORRECT_OR, kappa[:-1], L=1)


def test_posterior_centres_on_ols(dgp_data):
    pn = posterior_sample(dgp_data, CORRECT_OR, L=1000, streams=RandomStreams(3))
    ols = fit_weighted_linear(CORRECT_OR.design(dgp_data), dgp_data.y, np.ones(dgp_data.n))
    draws = pn.treatment_draws
    assert abs(draws.mean() - ols.coefficients[1]) < 0.05
    assert abs(draws.mean() - 5.0) < 3 * draws.std()


def test_posterior_sd_matches_frequentist_bootstrap(dgp_data):
    config = EstimatorConfig(estimator_kind=EstimatorKind.OR, rng_seed=9)
    pn = posterior_sample(dgp_data, CORRECT_OR, L=1000, streams=RandomStreams(9))
    _, se = frequentist_bootstrap(dgp_data, config, EstimatorKind.OR, reps=1000)
    assert pn.treatment_draws.std(ddof=1) == pytest.approx(se, rel=0.2)


def test_replicates_independent_of_threads(dgp_data):
    a = posterior_sample(dgp_data, CORRECT_OR, L=40, streams=RandomStreams(7), threads=1)
    b = posterior_sample(dgp_data, CORRECT_OR, L=40, streams=RandomStreams(7), threads=4)
    np.testing.assert_array_equal(a.draws, b.draws)


def test_replicate_stream_is_addressed_by_index(dgp_data, streams):
    pn = posterior_sample(dgp_data, CORRECT_OR, L=5, streams=streams)
    w = draw_dirichlet_weights(dgp_data.n, streams.generator(Stage.WEIGHTS, 3)).w
    fit = fit_weighted_linear(CORRECT_OR.design(dgp_data), dgp_data.y, w)
    np.testing.assert_array_equal(pn.draws[3], fit.coefficients)


def test_failed_replicate_is_redrawn_once(dgp_data):
    calls = []

    def flaky_kappa(w):
        calls.append(1)
        if len(calls) == 1:
            raise SingularFitError(1, 3)
        return np.ones_like(w)

    pn = posterior_sample(dgp_data, CORRECT_OR, flaky_kappa, L=3, streams=RandomStreams(0))
    assert pn.L == 3
    assert len(calls) == 4


def test_persistent_failure_names_replicate():
    x = np.array([0.0, 1.0, 0.0, 1.0, 1.0])
    # the covariate duplicates the treatment column
    ds = Dataset([1.0, 2.0, 1.5, 2.5, 3.0], x, x.reshape(-1, 1), ["copy"])
    with pytest.raises(ReplicateError) as e:
        posterior_sample(ds, CORRECT_OR, L=3, streams=RandomStreams(0))
    assert e.value.index == 0


def test_point_mass_prior_dominates():
    pn = _synthetic_draws()
    prior = PriorSpec(PriorKind.POINT_MASS, mean=4.25, k=1e6 * pn.L)
    pm = muliere_secchi_resample(pn, prior, rng=np.random.default_rng(1))
    assert pm.label == PosteriorLabel.PM
    assert np.all(pm.treatment_draws == 4.25)
    # the other coordinates still come from p_n rows
    assert np.isin(pm.draws[:, 0], pn.draws[:, 0]).all()


def test_weak_prior_barely_moves_posterior():
    pn = _synthetic_draws(seed=4)
    prior = PriorSpec(mean=5.0, sd=1.0, k=1.0)
    pm = muliere_secchi_resample(pn, prior, rng=np.random.default_rng(4))
    assert pm.L == pn.L
    sd = pn.draws.std(axis=0)
    # two resampling stages; bound at ~3 standard errors of the combined noise
    assert np.all(np.abs(pm.draws.mean(axis=0) - pn.draws.mean(axis=0)) < 5 * sd / np.sqrt(pn.L))


def test_gamma_weights_mean(rng):
    pn = _synthetic_draws()
    k = 1.0
    pm = muliere_secchi_resample(pn, PriorSpec(mean=5.0, k=k), m=1000, rng=rng)
    assert pm.resample_weights.shape == (1000,)
    assert pm.resample_weights.mean() == pytest.approx((pn.L + k) / 1000, abs=0.15)


def test_prior_target_coefficient():
    pn = _synthetic_draws()
    prior = PriorSpec(PriorKind.POINT_MASS, mean=-1.0, k=1e9, target_coefficient=2)
    pm = muliere_secchi_resample(pn, prior, rng=np.random.default_rng(0))
    assert np.all(pm.draws[:, 2] == -1.0)
    assert np.isin(pm.treatment_draws, pn.treatment_draws).all()


def test_prior_spec_validation():
    with pytest.raises(ValueError):
        PriorSpec(k=0.5)
    with pytest.raises(ValueError):
        PriorSpec(sd=0.0)
    # sd is irrelevant for a point mass
    PriorSpec(PriorKind.POINT_MASS, sd=0.0)
    assert PriorSpec(mean=5.0).with_faith(10.0).k == 10.0
    assert PriorSpec(PriorKind.POINT_MASS, mean=2.0).to_dict()["sd"] is None


@settings(max_examples=20)
@given(V=st.integers(1, 500), seed=st.integers(0, 2**32 - 1))
def test_ate_equals_treatment_coefficient(dgp_data, V, seed):
    pm = _synthetic_draws(L=50, seed=seed % 1000)
    ate = posterior_predictive_ate(pm, dgp_data, V=V, M=200, rng=np.random.default_rng(seed))
    assert ate.M == 200
    assert np.isin(ate.samples, pm.treatment_draws).all()


def test_single_draw_ate_is_exact(dgp_data):
    pm = _synthetic_draws(L=1, model=OutcomeModel(degree=3))
    pm = PosteriorDraws(
        np.array([[10.0, 4.9, 0.2, 0.01, -0.03]]),
        PosteriorLabel.PM,
        pm.model,
        ("(intercept)", "d", "x", "x^2", "x^3"),
    )
    ate = posterior_predictive_ate(pm, dgp_data, V=17, M=30, rng=np.random.default_rng(0))
    assert np.all(ate.samples == 4.9)
    assert ate.mean == 4.9
    assert ate.sd == 0.0
    assert ate.credible_interval_95 == (4.9, 4.9)


def test_interaction_ate_averages_contrasts(dgp_data):
    model = OutcomeModel(interact=True)
    pm = PosteriorDraws(
        np.array([[10.0, 5.0, 0.2, 0.5]]),
        PosteriorLabel.PM,
        model,
        ("(intercept)", "d", "x", "d:x"),
    )
    ate = posterior_predictive_ate(pm, dgp_data, V=1000, M=50, rng=np.random.default_rng(0))
    # each sample is 5 + 0.5 * mean(x) over the resampled covariates
    x = dgp_data.x[:, 0]
    bound = 5 * 0.5 * x.std() / np.sqrt(1000)
    assert np.all(np.abs(ate.samples - (5.0 + 0.5 * x.mean())) < bound)


def test_ate_stable_across_seeds(dgp_data):
    pm = _synthetic_draws(L=500, model=OutcomeModel(interact=True))
    pm = PosteriorDraws(
        np.column_stack([pm.draws, np.full(pm.L, 0.1)]),
        PosteriorLabel.PM,
        pm.model,
        pm.column_names + ("d:x",),
    )
    M = 10000
    a = posterior_predictive_ate(pm, dgp_data, V=100, M=M, rng=np.random.default_rng(1))
    b = posterior_predictive_ate(pm, dgp_data, V=100, M=M, rng=np.random.default_rng(2))
    # the gap between two independent means
    assert abs(a.mean - b.mean) < 4 * np.hypot(a.sd, b.sd) / np.sqrt(M)
    assert a.sd == pytest.approx(b.sd, rel=0.05)


def test_ate_distribution_summaries():
    samples = np.arange(1.0, 101.0)
    ate = ATEDistribution.from_samples(samples)
    assert ate.mean == 50.5
    assert ate.sd == pytest.approx(np.std(samples, ddof=1))
    assert ate.credible_interval_95 == pytest.approx(tuple(np.percentile(samples, [2.5, 97.5])))
    d = ate.to_dict()
    assert "samples" not in d
    assert ate.to_dict(include_samples=True)["samples"] == samples.tolist()
    with pytest.raises(ValueError):
        ATEDistribution.from_samples([])


def test_constant_samples_summarise_exactly():
    ate = ATEDistribution.from_samples(np.full(30, 0.1) * 3)
    assert ate.mean == 0.1 * 3
    assert ate.sd == 0.0
    assert ate.credible_interval_95 == (ate.mean, ate.mean)


def test_prior_free_pipeline_matches_direct_path(dgp_data):
    config = EstimatorConfig(bootstrap_reps=50, covariate_resample_size=100, rng_seed=21)
    streams = RandomStreams(21)
    pn = posterior_sample(dgp_data, CORRECT_OR, L=50, streams=streams)
    direct = posterior_predictive_ate(
        pn, dgp_data, V=100, M=50, rng=streams.generator(Stage.PREDICTIVE)
    )
    via_config = bayesian_ate(dgp_data, CORRECT_OR, None, config)
    np.testing.assert_array_equal(direct.samples, via_config.samples)
    again = bayesian_ate(dgp_data, CORRECT_OR, None, config)
    assert via_config.samples.tobytes() == again.samples.tobytes()
