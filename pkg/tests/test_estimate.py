import numpy as np
import pytest

from estimate import (
    gmm_criterion,
    gmm_fit,
    gmm_moments,
    gmm_weight_matrix,
    hessian_std_errors,
    mle_fit,
    nelder_mead,
    numerical_gradient,
    qmle_exp_fit,
    std_errors,
)
from exceptions import InputError, InvalidParameterError
from models import EventSeries, ExcitationParams, GmmSpec, MvExcitationParams, StoppingRule
from multivariate import loglik_mv
from residuals import Gamma, UnitExponential
from univariate import hawkes_loglik, simulate

TRUE = ExcitationParams(mu=0.2, alpha=0.5, beta=0.8)


def _reference_series(shape: float, n: int = 50_000, seed: int = 0) -> EventSeries:
    dist = UnitExponential() if shape == 1.0 else Gamma.unit_mean(shape)
    series, _ = simulate(TRUE, dist, None, StoppingRule.events(n), np.random.default_rng(seed))
    return series


def test_nelder_mead_quadratic():
    """Минимум квадратичной функции находится с точностью xatol"""
    result = nelder_mead(lambda z: float(np.sum((z - np.array([1.0, -2.0])) ** 2)), [0.0, 0.0])
    assert result.converged
    assert np.allclose(result.x, [1.0, -2.0], atol=1e-6)
    assert np.all(np.diff(result.history) <= 0)


def test_hessian_std_errors_quadratic_oracle():
    """Квадратичное правдоподобие с известной кривизной: ошибки = sqrt(diag(A^-1))"""
    a = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]])
    center = np.array([0.5, 1.5, 2.5])

    def loglik(theta):
        d = theta - center
        return -0.5 * float(d @ a @ d)

    se, warnings = hessian_std_errors(loglik, center)
    assert not warnings
    assert np.allclose(se, np.sqrt(np.diag(np.linalg.inv(a))), atol=1e-4)


def test_hessian_std_errors_not_positive_definite():
    se, warnings = hessian_std_errors(lambda theta: float(np.sum(theta**2)), np.array([1.0, 2.0]))
    assert np.all(np.isnan(se))
    assert warnings


def test_numerical_gradient_of_loglik_mv(bivariate_series, symmetric_params):
    """Центральные разности с разными шагами согласованы в пределах 1e-5"""
    series = bivariate_series.select_until(300.0)
    dist = UnitExponential()

    def f(theta):
        mu, a_self, a_cross, beta = theta
        params = MvExcitationParams.symmetric_pair(mu, beta, a_self, a_cross)
        return loglik_mv(series, params, dist)

    theta = np.array([1.0, 0.2, 0.1, 1.0])
    coarse = numerical_gradient(f, theta, rel_step=1e-4)
    fine = numerical_gradient(f, theta, rel_step=1e-5)
    assert np.allclose(coarse, fine, rtol=1e-5, atol=1e-5 * np.max(np.abs(fine)))


def test_mle_requires_minimum_events(tiny_series):
    with pytest.raises(InputError):
        mle_fit(tiny_series)


def test_mle_unknown_init_rejected(hawkes_series):
    with pytest.raises(InvalidParameterError):
        mle_fit(hawkes_series, init={"gamma": 1.0})


def test_mle_exponential_equals_qmle(hawkes_series):
    """Семейство exp в ММП и квази-ММП: одна и та же целевая функция"""
    series = EventSeries(times=hawkes_series.times[:3000])
    mle = mle_fit(series, dist_family="exp", compute_std_errors=False)
    qmle = qmle_exp_fit(series, compute_std_errors=False)
    assert qmle.method == "qmle"
    assert mle.loglik == pytest.approx(qmle.loglik, abs=1e-9)
    for name in ("mu", "alpha", "beta"):
        assert mle.estimates[name] == pytest.approx(qmle.estimates[name], abs=1e-6)


def test_qmle_report(hawkes_series, reference_params):
    """Квази-ММП на данных Хоукса: история не убывает, ошибки конечны, loglik согласован"""
    report = qmle_exp_fit(hawkes_series)
    assert report.converged
    assert np.all(np.diff(report.history) >= 0)
    assert report.loglik == pytest.approx(hawkes_loglik(hawkes_series, report.params), abs=1e-9)
    for name, truth in reference_params.to_dict().items():
        assert report.estimates[name] == pytest.approx(truth, rel=0.25)
        assert 0 < report.std_errors[name] < truth
    assert report.residuals.shape == (len(hawkes_series),)


def test_std_errors_on_existing_report(hawkes_series):
    series = EventSeries(times=hawkes_series.times[:3000])
    report = qmle_exp_fit(series, compute_std_errors=False)
    assert all(np.isnan(v) for v in report.std_errors.values())
    filled = std_errors(report, series, "hessian")
    assert all(v > 0 for v in filled.std_errors.values())


def test_multistart_is_deterministic(hawkes_series):
    series = EventSeries(times=hawkes_series.times[:2000])
    a = qmle_exp_fit(series, n_starts=3, rng=np.random.default_rng(5), threads=2, compute_std_errors=False)
    b = qmle_exp_fit(series, n_starts=3, rng=np.random.default_rng(5), threads=1, compute_std_errors=False)
    assert a.estimates == b.estimates


def test_gmm_moments_vanish_at_true_params(hawkes_series, reference_params):
    """В истинной точке средние моментов в пределах 3 стандартных ошибок от нуля"""
    g = gmm_moments(hawkes_series, reference_params)
    assert g.shape == (len(hawkes_series) - 1, 3)
    se = g.std(axis=0, ddof=1) / np.sqrt(g.shape[0])
    assert np.all(np.abs(g.mean(axis=0)) < 3 * se)
    assert gmm_criterion(hawkes_series, reference_params) >= 0.0


def test_gmm_weight_matrix_ridge():
    """Коллинеарные моменты: гребневая регуляризация"""
    x = np.random.default_rng(0).standard_normal(500)
    weight, ridged = gmm_weight_matrix(np.column_stack([x, 2 * x, x + 1e-3]))
    assert ridged
    assert np.all(np.isfinite(weight))
    _, plain = gmm_weight_matrix(np.random.default_rng(1).standard_normal((500, 3)))
    assert not plain


def test_gmm_two_step(hawkes_series):
    """Критерий шага 2 не хуже оценки шага 1 при весах W2"""
    report = gmm_fit(hawkes_series)
    assert report.method == "gmm"
    assert report.loglik is None
    assert report.objective <= report.extras["stage1_criterion_w2"] + 1e-9
    assert all(np.isfinite(v) for v in report.std_errors.values())


def test_gmm_scale_invariance(hawkes_series):
    """Общий множитель моментов поглощается матрицей весов"""
    series = EventSeries(times=hawkes_series.times[:5000])
    base = gmm_fit(series, compute_std_errors=False)
    scaled = gmm_fit(series, GmmSpec(scale=10.0), compute_std_errors=False)
    for name in ("mu", "alpha", "beta"):
        assert scaled.estimates[name] == pytest.approx(base.estimates[name], rel=1e-5)


def test_gmm_rejects_multitype(bivariate_series):
    with pytest.raises(InputError):
        gmm_fit(bivariate_series)


@pytest.mark.slow
def test_multivariate_mle_recovers_symmetric_params(bivariate_series):
    """Симметричная двумерная модель: mu и beta в пределах 15%, alpha в пределах 0.05"""
    report = mle_fit(bivariate_series, model="multivariate", symmetric=True, compute_std_errors=False)
    for name in ("mu_0", "mu_1", "beta_0", "beta_1"):
        assert report.estimates[name] == pytest.approx(1.0, rel=0.15), name
    assert report.estimates["alpha_self"] == pytest.approx(0.2, abs=0.05)
    assert report.estimates["alpha_cross"] == pytest.approx(0.1, abs=0.05)
    assert len(report.residuals) == 2


@pytest.mark.slow
@pytest.mark.parametrize("shape", [1.2, 1.5, 2.0, 2.5, 3.0])
def test_flex_mle_recovers_gamma_params(shape):
    """50 000 событий с гамма-остатками: mu, alpha, beta и форма в пределах 10%"""
    series = _reference_series(shape)
    report = mle_fit(series, dist_family="gamma", init={"shape": 1.5}, compute_std_errors=False)
    assert report.estimates["shape"] == pytest.approx(shape, rel=0.10)
    for name, truth in TRUE.to_dict().items():
        assert report.estimates[name] == pytest.approx(truth, rel=0.10), name


@pytest.mark.slow
def test_qmle_bias_grows_with_shape():
    """Квази-ММП на гамма-данных: mu завышено, alpha и beta занижены, смещение alpha растет с формой"""
    alphas = []
    for shape in (1.2, 1.5, 2.0, 2.5, 3.0):
        report = qmle_exp_fit(_reference_series(shape))
        est, se = report.estimates, report.std_errors
        assert est["mu"] > TRUE.mu
        assert est["alpha"] < TRUE.alpha
        assert est["beta"] < TRUE.beta
        if shape == 1.2:
            assert est["mu"] - TRUE.mu > 3 * se["mu"]
            assert TRUE.alpha - est["alpha"] > 3 * se["alpha"]
        alphas.append(est["alpha"])
    assert np.all(np.diff(alphas) < 0)
    assert alphas[-1] < 0.25


@pytest.mark.slow
def test_qmle_unbiased_on_exponential_data():
    report = qmle_exp_fit(_reference_series(1.0))
    for name, truth in TRUE.to_dict().items():
        assert report.estimates[name] == pytest.approx(truth, rel=0.10)


@pytest.mark.slow
def test_std_errors_shrink_with_sample_size():
    """Учетверение N уменьшает ошибки примерно вдвое"""
    small = qmle_exp_fit(_reference_series(1.0, n=12_500, seed=1))
    large = qmle_exp_fit(_reference_series(1.0, n=50_000, seed=1))
    for name in ("mu", "alpha", "beta"):
        assert large.std_errors[name] / small.std_errors[name] == pytest.approx(0.5, abs=0.1)


@pytest.mark.slow
def test_std_errors_cover_true_params():
    """50 повторов на экспоненциальных данных: истинное значение в пределах 3 SE не реже чем в 90% случаев"""
    truth = TRUE.to_dict()
    hits = {name: 0 for name in truth}
    n_reps = 50
    for seed in range(n_reps):
        report = qmle_exp_fit(_reference_series(1.0, n=5_000, seed=100 + seed))
        for name, value in truth.items():
            hits[name] += abs(report.estimates[name] - value) <= 3 * report.std_errors[name]
    for name, count in hits.items():
        assert count / n_reps >= 0.9, name


@pytest.mark.slow
def test_gmm_recovers_hawkes_params():
    report = gmm_fit(_reference_series(1.0, seed=2))
    for name, truth in TRUE.to_dict().items():
        assert report.estimates[name] == pytest.approx(truth, rel=0.15)


@pytest.mark.slow
def test_log_and_raw_space_agree(hawkes_series):
    """Оптимум в логарифмических и исходных координатах совпадает"""
    series = EventSeries(times=hawkes_series.times[:5000])
    log_fit = qmle_exp_fit(series, space="log", compute_std_errors=False)
    raw_fit = qmle_exp_fit(series, space="raw", compute_std_errors=False)
    assert raw_fit.loglik == pytest.approx(log_fit.loglik, abs=1e-4)
