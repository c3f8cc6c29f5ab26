import math

import numpy as np
import pytest
from scipy.special import expit

from bdr.core import load_csv
from bdr.glm import OutcomeModel, fit_weighted_linear
from bdr.sim import (
    CONFIGURATIONS,
    DgpParams,
    PropensitySource,
    SimulationRow,
    generate_dgp,
    run_simulation_study,
    scale_calibration,
    simulation_config,
    write_dgp_csv,
)
from bdr.util.exceptions import SimulationRunError
from bdr.util.rng import RandomStreams

TINY = dict(L=20, V=20)


def test_params_validation():
    with pytest.raises(ValueError):
        DgpParams(n=1)
    with pytest.raises(ValueError):
        DgpParams(x_scale=0.0)
    with pytest.raises(ValueError):
        DgpParams(y_noise_scale=-1.0)
    params = DgpParams()
    assert params.true_ate == 5.0
    assert params.x_scale == pytest.approx(math.sqrt(10))
    assert params.to_dict()["n"] == 1000


def test_treated_fraction_without_confounding():
    data = generate_dgp(DgpParams(alpha1=0.0, n=100_000), np.random.default_rng(0))
    assert data.treated_fraction == pytest.approx(expit(2.0), abs=0.005)


def test_noiseless_outcome():
    params = DgpParams(beta2=0.0, y_noise_scale=1e-300, n=500)
    data = generate_dgp(params, np.random.default_rng(1))
    np.testing.assert_array_equal(data.y, 10.0 + 5.0 * data.d)


def test_large_sample_ols_recovers_coefficients():
    data = generate_dgp(DgpParams(n=1_000_000), np.random.default_rng(2))
    fit = fit_weighted_linear(OutcomeModel().design(data), data.y, np.ones(data.n))
    np.testing.assert_allclose(fit.coefficients, [10.0, 5.0, 0.2], atol=0.02)


def test_dgp_is_seeded():
    a = generate_dgp(DgpParams(n=50), np.random.default_rng(3))
    b = generate_dgp(DgpParams(n=50), np.random.default_rng(3))
    assert a == b
    assert a.covariate_names == ("x",)


def test_write_dgp_csv(tmp_path):
    path = tmp_path / "dgp.csv"
    data = write_dgp_csv(DgpParams(n=30), np.random.default_rng(4), path)
    assert load_csv(path, "y", "d", ["x"]) == data


def test_configurations():
    names = [c.name for c in CONFIGURATIONS]
    assert names == ["BOR1", "BOR2", "BDR1", "BDR2", "BDR3"]
    by_name = {c.name: c for c in CONFIGURATIONS}
    assert by_name["BOR2"].model.covariates == ()
    assert by_name["BDR1"].propensity == PropensitySource.FITTED
    assert by_name["BDR2"].model.covariates is None
    assert by_name["BDR3"].propensity == PropensitySource.RANDOM


def test_simulation_config_prior():
    config = simulation_config(seed=3)
    assert config.prior.mean == 5.0
    assert config.measure_of_faith == 1.0
    assert config.L == 200
    assert simulation_config(k=0).prior is None


def test_row_identity():
    estimates = np.array([4.9, 5.3, 5.05, 4.7, 5.6])
    row = SimulationRow.from_estimates("X", estimates, 5.0)
    bias = row.average_estimate - 5.0
    assert row.mse == pytest.approx(row.empirical_variance + bias**2, abs=1e-9)


def test_single_run():
    params = DgpParams(n=200)
    report = run_simulation_study(1, params, simulation_config(seed=5, **TINY))
    assert report.runs == 1
    for row in report.rows:
        assert row.empirical_variance == 0.0
        assert row.mse == pytest.approx(report.bias(row.name) ** 2, abs=1e-9)


def test_study_report():
    params = DgpParams(n=200)
    report = run_simulation_study(4, params, simulation_config(seed=6, **TINY))
    assert report.estimates.shape == (4, 5)
    assert report.true_ate == 5.0
    assert report.seed == 6
    for row in report.rows:
        assert row.mse == pytest.approx(
            row.empirical_variance + report.bias(row.name) ** 2, abs=1e-9
        )
    with pytest.raises(KeyError):
        report.row("BDR9")

    doc = report.to_dict(include_estimates=True)
    assert [r["name"] for r in doc["rows"]] == [c.name for c in CONFIGURATIONS]
    assert len(doc["estimates"]["BDR3"]) == 4
    assert "estimates" not in report.to_dict()


def test_study_independent_of_threads():
    params = DgpParams(n=150)
    a = run_simulation_study(4, params, simulation_config(seed=8, threads=1, **TINY))
    b = run_simulation_study(4, params, simulation_config(seed=8, threads=3, **TINY))
    np.testing.assert_array_equal(a.estimates, b.estimates)
    assert a.rows == b.rows


def test_runs_do_not_share_streams():
    params = DgpParams(n=150)
    config = simulation_config(seed=9, **TINY)
    report = run_simulation_study(3, params, config, streams=RandomStreams(9))
    assert len(set(report.estimates[:, 0].tolist())) == 3


def test_bad_run_count():
    with pytest.raises(ValueError):
        run_simulation_study(0, DgpParams(), simulation_config())


def test_failing_run_is_named():
    # everyone is treated
    params = DgpParams(alpha0=50.0, n=20)
    with pytest.raises(SimulationRunError) as e:
        run_simulation_study(2, params, simulation_config(**TINY))
    assert e.value.run == 0


def test_scale_calibration_prefers_variance():
    calibration = scale_calibration(n=200_000, streams=RandomStreams(10))
    assert calibration.adopted == "variance"
    assert calibration.variance_reading == pytest.approx(5.35, abs=0.05)
    assert calibration.sd_reading > calibration.variance_reading
    assert calibration.to_dict()["adopted"] == "variance"
