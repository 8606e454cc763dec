import numpy as np
import pytest

from efmsig.core.rates import Rates
from efmsig.core.signature import PiecewisePath, signature_of_path
from efmsig.core.tensor import storage_size
from efmsig.lab.simulation import SimConfig, simulate_bm
from efmsig.learning.regression import (HyperGrid, _features,
                                        elastic_net_path, fit_elastic_net,
                                        fit_signal_model, kkt_violation,
                                        run_regression_experiment)
from shared.errors import DomainError
from shared.flags import MODEL_EFM_SIG, MODEL_SIG_BM, MODEL_SIG_OU, MODELS


@pytest.fixture
def design(rng):
    features = np.column_stack([np.ones(200), rng.normal(size=(200, 5))])
    beta = np.array([0.5, 2.0, 0.0, -1.0, 0.0, 0.3])
    targets = features @ beta + 0.1 * rng.normal(size=200)
    return features, targets


@pytest.mark.parametrize("omega", [0.0, 0.5, 1.0])
def test_solutions_satisfy_the_optimality_conditions(design, omega):
    features, targets = design
    alphas = [0.1, 0.01, 0.001]
    for alpha, beta in zip(alphas, elastic_net_path(features, targets, alphas, omega)):
        assert kkt_violation(features, targets, beta, alpha, omega) < 1e-8


def test_zero_penalty_is_least_squares(design):
    features, targets = design
    beta = elastic_net_path(features, targets, [0.0], 1.0)[0]
    expected = np.linalg.lstsq(features, targets, rcond=None)[0]
    np.testing.assert_allclose(beta, expected, atol=1e-8)


def test_large_penalty_keeps_only_the_intercept(design):
    features, targets = design
    beta = elastic_net_path(features, targets, [1e3], 1.0)[0]
    assert np.all(beta[1:] == 0.0)
    assert beta[0] == pytest.approx(np.mean(targets), rel=1e-12)


def test_lasso_drops_irrelevant_columns(design):
    features, targets = design
    beta = elastic_net_path(features, targets, [0.05], 1.0)[0]
    assert beta[2] == 0.0 and beta[4] == 0.0
    assert beta[1] > 1.5


def test_results_follow_the_order_of_alphas(design):
    features, targets = design
    forward = elastic_net_path(features, targets, [0.001, 0.1], 0.5)
    backward = elastic_net_path(features, targets, [0.1, 0.001], 0.5)
    np.testing.assert_allclose(forward[0], backward[1], atol=1e-9)
    np.testing.assert_allclose(forward[1], backward[0], atol=1e-9)


def test_elastic_net_checks_its_inputs(design):
    features, targets = design
    with pytest.raises(DomainError):
        elastic_net_path(features, targets, [0.1], 1.5)
    with pytest.raises(DomainError):
        elastic_net_path(features, targets, [-0.1], 0.5)
    with pytest.raises(DomainError):
        elastic_net_path(features, targets[:-1], [0.1], 0.5)
    with pytest.raises(DomainError):
        elastic_net_path(np.full((3, 2), np.nan), np.zeros(3), [0.1], 0.5)


def test_fit_returns_a_functional(design):
    features, targets = design
    ell = fit_elastic_net(features[:, :3], targets, 0.0, 1.0, 2, 1)
    assert ell.width == 2 and ell.order == 1
    with pytest.raises(DomainError):
        fit_elastic_net(features, targets, 0.0, 1.0, 2, 1)


def test_hyper_grid_candidates():
    grid = HyperGrid()
    assert len(grid.candidates(MODEL_EFM_SIG)) == 9
    assert grid.candidates(MODEL_SIG_OU) == [(1.0,), (3.0,), (10.0,)]
    assert grid.candidates(MODEL_SIG_BM) == [()]


def test_plain_features_restart_at_zero(rng):
    times = np.linspace(-1.0, 1.0, 21)
    driver = np.cumsum(rng.normal(scale=0.1, size=21))
    features = _features(MODEL_SIG_BM, (), times, driver, 2, 10)

    assert features.shape == (11, storage_size(2, 2))
    np.testing.assert_array_equal(features[0], np.eye(1, storage_size(2, 2))[0])

    path = PiecewisePath(times[10:], driver[10:, None], time_augmented=True)
    last = signature_of_path(Rates.plain(2), path, 2).sig.to_flat()
    np.testing.assert_allclose(features[-1], last, atol=1e-12)


def test_efm_features_remember_the_burn_in(rng):
    times = np.linspace(-1.0, 1.0, 21)
    driver = np.cumsum(rng.normal(scale=0.1, size=21))
    features = _features(MODEL_EFM_SIG, (1.0, 2.0), times, driver, 2, 10)
    assert features.shape == (11, storage_size(2, 2))
    assert features[0, 2] != 0.0


def test_a_signal_equal_to_the_driver_is_learned():
    cfg = SimConfig(seed=17, dt=0.01, t0=0.0, t1=4.0, burn_in=1.0)
    driver = simulate_bm(cfg)
    start = np.searchsorted(driver.times, 0.0)
    signal = driver.values[:, 0] - driver.values[start, 0]

    grid = HyperGrid(alphas=(1e-8,), omegas=(1.0,))
    metrics = fit_signal_model(driver.times, signal, driver.values, MODEL_SIG_BM, grid, order=1)
    assert metrics.test_mse < 1e-10
    assert metrics.ell.coefficient((1,)) == pytest.approx(1.0, abs=1e-4)


def test_fit_checks_the_split():
    times = np.linspace(0.0, 1.0, 11)
    with pytest.raises(DomainError):
        fit_signal_model(times, times, times, MODEL_SIG_BM, split=(1.0, 0.5, 2.0))
    with pytest.raises(DomainError):
        fit_signal_model(times, times, times, MODEL_SIG_BM, split=(0.2, 0.4, 2.0))
    with pytest.raises(DomainError):
        fit_signal_model(times, times, times, "volterra")


def test_small_comparison_runs_every_model():
    grid = HyperGrid(alphas=(1e-4, 1e-2), omegas=(0.5,), rate_values=(1.0, 10.0))
    cfg = SimConfig(seed=19, dt=0.01)
    for model in MODELS:
        metrics = run_regression_experiment(cfg, model, grid, order=3, split=(0.5, 1.0, 2.0))
        assert metrics.model == model
        assert np.isfinite(metrics.test_mse)
        assert metrics.select_mse <= metrics.train_mse * 10 + 1.0


@pytest.mark.slow
def test_efm_signature_wins_the_comparison():
    cfg = SimConfig(seed=2024, dt=1 / 3650)
    results = {model: run_regression_experiment(cfg, model, order=6) for model in MODELS}
    assert results[MODEL_EFM_SIG].test_mse < results[MODEL_SIG_BM].test_mse
