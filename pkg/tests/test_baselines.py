import numpy as np
import pytest
from scipy import integrate, stats

from baselines import (
    GammaKernelParams,
    exp_hawkes_loglik,
    gamma_hawkes_compensator_residuals,
    gamma_hawkes_fit,
    gamma_hawkes_loglik,
    gamma_hawkes_simulate,
    gamma_kernel,
    gamma_kernel_integral,
    read_gamma_params_json,
    write_gamma_params_json,
)
from exceptions import InputError, InvalidParameterError, StabilityError
from models import EventSeries, ExcitationParams, StoppingRule
from univariate import hawkes_loglik

# оценки гамма-ядра на рыночных данных
MARKET = GammaKernelParams(mu=0.0915, alpha=0.0436, beta=0.0475, k=1.4367)


def test_kernel_values():
    """k = 1: alpha e^-beta t; k = 2, beta = 1: максимум alpha / e в t = 1"""
    assert gamma_kernel(1.0, GammaKernelParams(1.0, 1.0, 2.0, 1.0)) == pytest.approx(np.exp(-2.0))
    assert gamma_kernel(1.0, GammaKernelParams(1.0, 0.5, 1.0, 1.0)) == pytest.approx(0.5 / np.e)
    peaked = GammaKernelParams(mu=1.0, alpha=0.3, beta=1.0, k=2.0)
    assert peaked.mode == 1.0
    grid = np.linspace(0.5, 1.5, 101)
    assert grid[np.argmax(gamma_kernel(grid, peaked))] == pytest.approx(1.0)
    assert gamma_kernel(1.0, peaked) == pytest.approx(0.3 / np.e)


def test_kernel_integral():
    """Интеграл ядра alpha / beta: 0.0436 / 0.0475 = 0.918"""
    params = GammaKernelParams(mu=0.1, alpha=0.0436, beta=0.0475, k=2.0)
    quad, _ = integrate.quad(lambda t: float(gamma_kernel(t, params)), 0.0, np.inf)
    assert quad == pytest.approx(0.918, abs=1e-3)
    assert float(gamma_kernel_integral(np.inf, params)) == pytest.approx(params.branching_ratio)
    assert float(gamma_kernel_integral(30.0, params)) == pytest.approx(
        integrate.quad(lambda t: float(gamma_kernel(t, params)), 0.0, 30.0)[0], abs=1e-10
    )


def test_kernel_rejects_zero_lag_below_unit_shape():
    with pytest.raises(InputError):
        gamma_kernel(0.0, GammaKernelParams(1.0, 0.5, 1.0, 0.5))


def test_params_validation():
    with pytest.raises(StabilityError):
        GammaKernelParams(mu=1.0, alpha=1.0, beta=1.0, k=2.0)
    with pytest.raises(InvalidParameterError):
        GammaKernelParams(mu=1.0, alpha=0.5, beta=1.0, k=0.0)
    with pytest.raises(InputError):
        GammaKernelParams.from_dict({"mu": 1.0, "alpha": 0.5})


def test_window_bounds_truncated_mass():
    w = MARKET.window()
    assert MARKET.branching_ratio - float(gamma_kernel_integral(w, MARKET)) <= 1e-13


def test_unit_shape_matches_exponential_hawkes(hawkes_series, reference_params):
    """k = 1: совпадение с рекурсией экспоненциального процесса"""
    series = EventSeries(times=hawkes_series.times[:2000], horizon=hawkes_series.times[1999] + 1.0)
    gamma = GammaKernelParams(mu=reference_params.mu, alpha=reference_params.alpha, beta=reference_params.beta, k=1.0)
    assert gamma_hawkes_loglik(series, gamma) == pytest.approx(exp_hawkes_loglik(series, reference_params), abs=1e-9)


def test_empty_series_loglik():
    series = EventSeries(times=[], horizon=10.0)
    assert gamma_hawkes_loglik(series, MARKET) == pytest.approx(-MARKET.mu * 10.0)
    assert exp_hawkes_loglik(series, ExcitationParams(0.3, 0.1, 1.0)) == pytest.approx(-3.0)


def test_two_events_against_quadrature():
    """Два события: сумма логарифмов интенсивности минус квадратура интенсивности"""
    params = GammaKernelParams(mu=0.4, alpha=0.6, beta=1.0, k=2.0)
    times = np.array([0.5, 1.7])
    series = EventSeries(times=times, horizon=3.0)

    def intensity(s):
        lags = s - times[times < s]
        return params.mu + float(np.sum(gamma_kernel(lags, params)))

    compensator, _ = integrate.quad(intensity, 0.0, 3.0, points=list(times), epsabs=1e-12)
    expected = np.log(params.mu) + np.log(intensity(1.7)) - compensator
    assert gamma_hawkes_loglik(series, params) == pytest.approx(expected, abs=1e-6)


def test_exp_loglik_with_initial_excess(reference_params):
    """Начальное возбуждение lambda0 - mu + alpha: совпадение с гибкой моделью при exp-остатках"""
    series = EventSeries(times=[0.3, 1.1, 2.6])
    lam0 = 0.6
    flex = hawkes_loglik(series, reference_params, lambda0=lam0)
    classical = exp_hawkes_loglik(series, reference_params, initial_excess=lam0 - reference_params.mu + reference_params.alpha)
    assert flex == pytest.approx(classical, abs=1e-12)


def test_unit_shape_simulation_compensator_ks(rng):
    """Остатки компенсатора смоделированных данных согласуются с Exp(1)"""
    params = GammaKernelParams(mu=0.2, alpha=0.5, beta=0.8, k=1.0)
    series = gamma_hawkes_simulate(params, StoppingRule.events(10_000), rng)
    assert len(series) == 10_000
    residuals = gamma_hawkes_compensator_residuals(series, params)
    assert stats.kstest(residuals, "expon").pvalue > 0.01


def test_thinning_compensator_ks_heavy_shape(rng):
    params = GammaKernelParams(mu=0.5, alpha=0.4, beta=1.0, k=2.5)
    series = gamma_hawkes_simulate(params, StoppingRule.until(5000.0), rng)
    assert series.horizon == 5000.0
    assert stats.kstest(gamma_hawkes_compensator_residuals(series, params), "expon").pvalue > 0.01


def test_cluster_method_for_small_shape(rng):
    """k < 1: прореживание отклоняется, кластерный метод дает корректный процесс"""
    params = GammaKernelParams(mu=0.5, alpha=0.4, beta=1.0, k=0.6)
    with pytest.raises(InvalidParameterError):
        gamma_hawkes_simulate(params, StoppingRule.events(10), rng, method="thinning")
    series = gamma_hawkes_simulate(params, StoppingRule.events(5000), rng)
    assert len(series) == 5000
    assert np.all(np.diff(series.times) > 0)
    assert stats.kstest(gamma_hawkes_compensator_residuals(series, params), "expon").pvalue > 0.01


def test_poisson_limit(rng):
    params = GammaKernelParams(mu=2.0, alpha=1e-9, beta=1.0, k=1.5)
    series = gamma_hawkes_simulate(params, StoppingRule.events(5000), rng)
    assert stats.kstest(series.inter_arrivals(), "expon", args=(0, 0.5)).pvalue > 0.01


def test_simulation_is_deterministic():
    a = gamma_hawkes_simulate(MARKET, StoppingRule.events(500), np.random.default_rng(4))
    b = gamma_hawkes_simulate(MARKET, StoppingRule.events(500), np.random.default_rng(4))
    assert np.array_equal(a.times, b.times)


def test_unknown_method(rng):
    with pytest.raises(InvalidParameterError):
        gamma_hawkes_simulate(MARKET, StoppingRule.events(10), rng, method="ogata")


@pytest.mark.slow
def test_fit_recovers_shape(rng):
    params = GammaKernelParams(mu=0.5, alpha=0.4, beta=1.0, k=2.0)
    series = gamma_hawkes_simulate(params, StoppingRule.events(5000), rng)
    report = gamma_hawkes_fit(series)
    assert report.model == "gamma_hawkes"
    assert report.estimates["k"] == pytest.approx(2.0, rel=0.3)
    assert report.estimates["alpha"] / report.estimates["beta"] == pytest.approx(0.4, abs=0.1)
    assert report.residuals.shape == (5000,)


def test_params_json(tmp_path):
    path = write_gamma_params_json(MARKET, tmp_path / "gamma.json")
    assert read_gamma_params_json(path) == MARKET
