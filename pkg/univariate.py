"""
Одномерная модель с гибкими остатками

Между событиями состояние задается сегментом
    psi(t) = mu + (lambda_prev - mu + alpha) * exp(-beta t),
его интегралом
    phi(t) = mu t + (lambda_prev - mu + alpha) * (1 - exp(-beta t)) / beta,
интервал до следующего события tau_n = phi^{-1}(eps_n), а состояние обновляется как lambda_n = psi(tau_n).
lambda_n - дискретное состояние модели, а не условная интенсивность.
"""

import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from numba import njit
from tqdm import tqdm

import config
from exceptions import ConvergenceError, InputError, SurvivalUnderflowError
from models import EventSeries, ExcitationParams, LambdaPath, StoppingRule
from residuals import Empirical, ResidualDistribution, UnitExponential, require_density, validate_for_model

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Ядра рекурсии (numba)
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _psi_scalar(t, lam, mu, alpha, beta):
    return mu + (lam - mu + alpha) * math.exp(-beta * t)


@njit(cache=True, nogil=True)
def _phi_scalar(t, lam, mu, alpha, beta):
    return mu * t - (lam - mu + alpha) * math.expm1(-beta * t) / beta


@njit(cache=True, nogil=True)
def _phi_inv_scalar(eps, lam, mu, alpha, beta, tol, max_iter):
    """Ньютон от нижней границы: phi вогнута, итерации монотонно подходят к корню слева"""
    if eps <= 0.0:
        return 0.0
    k = lam - mu + alpha
    lo = eps / (mu + k)
    hi = eps / mu
    target = tol * max(1.0, eps)
    t = lo
    for _ in range(max_iter):
        f = _phi_scalar(t, lam, mu, alpha, beta) - eps
        if abs(f) <= target:
            return t
        t_new = t - f / _psi_scalar(t, lam, mu, alpha, beta)
        if t_new == t:
            return t
        t = min(max(t_new, lo), hi)

    # бисекция как запасной вариант
    a, b = lo, hi
    for _ in range(4 * max_iter):
        t = 0.5 * (a + b)
        f = _phi_scalar(t, lam, mu, alpha, beta) - eps
        if abs(f) <= target:
            return t
        if f < 0.0:
            a = t
        else:
            b = t
        if b - a <= 8.9e-16 * b:
            return t
    return np.nan


@njit(cache=True, nogil=True)
def _phi_inv_array(eps, lam, mu, alpha, beta, tol, max_iter):
    out = np.empty(eps.shape[0])
    for i in range(eps.shape[0]):
        out[i] = _phi_inv_scalar(eps[i], lam[i], mu, alpha, beta, tol, max_iter)
    return out


@njit(cache=True, nogil=True)
def _simulate_kernel(eps, t0, lam0, mu, alpha, beta, t_stop, tol, max_iter):
    """
    Прогон рекурсии по заранее сгенерированным остаткам

    Returns:
        (times, lambdas, n) - n заполненных элементов; останавливается на первом событии позже t_stop
    """
    n = eps.shape[0]
    times = np.empty(n)
    lam = np.empty(n)
    t = t0
    state = lam0
    for i in range(n):
        tau = _phi_inv_scalar(eps[i], state, mu, alpha, beta, tol, max_iter)
        if math.isnan(tau):
            return times, lam, -1
        t += tau
        if t > t_stop:
            return times, lam, i
        state = _psi_scalar(tau, state, mu, alpha, beta)
        times[i] = t
        lam[i] = state
    return times, lam, n


@njit(cache=True, nogil=True)
def _filter_kernel(tau, lam0, mu, alpha, beta):
    n = tau.shape[0]
    eps = np.empty(n)
    lam = np.empty(n)
    state = lam0
    for i in range(n):
        eps[i] = _phi_scalar(tau[i], state, mu, alpha, beta)
        state = _psi_scalar(tau[i], state, mu, alpha, beta)
        lam[i] = state
    return eps, lam


# ---------------------------------------------------------------------------
# Публичные функции
# ---------------------------------------------------------------------------

def resolve_lambda0(mu, lambda0=None):
    """
    Начальное состояние: явное значение, затем DEFAULT_LAMBDA0 из конфигурации, затем mu

    Модель требует lambda0 > mu. Граничное значение lambda0 = mu (в том числе умолчание)
    допускается как удобный старт: при alpha > 0 уже lambda_1 > mu, а оценщик
    подставляет max(lambda0, mu). Значения ниже mu отклоняются с InputError.
    """
    if lambda0 is not None:
        return lambda0
    if config.DEFAULT_LAMBDA0 is not None:
        return config.DEFAULT_LAMBDA0
    return mu


def psi(t, lambda_prev: float, params: ExcitationParams):
    """Сегмент состояния между событиями; psi(0) = lambda_prev + alpha, psi(inf) = mu"""
    t = np.asarray(t, dtype=np.float64)
    return params.mu + (lambda_prev - params.mu + params.alpha) * np.exp(-params.beta * t)


def phi(t, lambda_prev: float, params: ExcitationParams):
    """Интеграл psi от 0 до t"""
    t = np.asarray(t, dtype=np.float64)
    k = lambda_prev - params.mu + params.alpha
    return params.mu * t - k * np.expm1(-params.beta * t) / params.beta


def phi_inv(eps, lambda_prev, params: ExcitationParams):
    """
    Обратная к phi функция: интервал, соответствующий остатку eps

    Args:
        eps: остаток (скаляр или массив), eps >= 0
        lambda_prev: состояние перед интервалом (скаляр или массив той же формы)
        params: параметры возбуждения

    Returns:
        t с |phi(t) - eps| <= PHI_INV_TOL * max(1, eps)
    """
    eps_arr = np.atleast_1d(np.asarray(eps, dtype=np.float64))
    if np.any(eps_arr < 0):
        raise InputError("eps должен быть неотрицательным")
    lam_arr = np.broadcast_to(np.asarray(lambda_prev, dtype=np.float64), eps_arr.shape).astype(np.float64)
    out = _phi_inv_array(
        eps_arr.ravel(), lam_arr.ravel(), params.mu, params.alpha, params.beta,
        config.PHI_INV_TOL, config.PHI_INV_MAX_ITER,
    ).reshape(eps_arr.shape)
    if np.any(np.isnan(out)):
        raise ConvergenceError(f"phi_inv не сошелся за {config.PHI_INV_MAX_ITER} итераций")
    return float(out[0]) if np.ndim(eps) == 0 else out


def lambda_update(tau, lambda_prev: float, params: ExcitationParams):
    """lambda_n = psi(tau_n; lambda_{n-1})"""
    return psi(tau, lambda_prev, params)


def conditional_intensity(t, lambda_prev: float, params: ExcitationParams, dist: ResidualDistribution):
    """
    Условная интенсивность f(phi(t)) / (1 - F(phi(t))) * psi(t), t отсчитывается от последнего события

    Для экспоненциальных остатков совпадает с psi(t).
    """
    require_density(dist)
    t_arr = np.asarray(t, dtype=np.float64)
    seg = psi(t_arr, lambda_prev, params)
    if isinstance(dist, UnitExponential):
        return seg
    x = phi(t_arr, lambda_prev, params)
    log_sf = np.asarray(dist.logsf(x))
    if np.any(~np.isfinite(log_sf)):
        bad = float(np.atleast_1d(t_arr)[np.flatnonzero(~np.isfinite(np.atleast_1d(log_sf)))[0]])
        t_max = _largest_finite_survival_time(bad, lambda_prev, params, dist)
        logger.error(f"Обнуление функции выживания при t={bad:.6g}")
        raise SurvivalUnderflowError(bad, t_max)
    with np.errstate(under="ignore"):
        return np.exp(np.asarray(dist.logpdf(x)) - log_sf) * seg


def _largest_finite_survival_time(t_bad: float, lambda_prev: float, params: ExcitationParams, dist) -> float:
    lo, hi = 0.0, t_bad
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.isfinite(dist.logsf(phi(mid, lambda_prev, params))):
            lo = mid
        else:
            hi = mid
    return lo


def _draw(dist: ResidualDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    return np.asarray(dist.sample(rng, size), dtype=np.float64)


def simulate(
    params: ExcitationParams,
    dist: ResidualDistribution,
    lambda0: Optional[float],
    stop: StoppingRule,
    rng: np.random.Generator,
    origin: float = 0.0,
) -> Tuple[EventSeries, LambdaPath]:
    """
    Симуляция через обращение остатков: tau_n = phi^{-1}(eps_n), lambda_n = psi(tau_n)

    Args:
        params: параметры возбуждения
        dist: распределение остатков (Empirical - выборка с возвращением)
        lambda0: начальное состояние (None -> mu, граничное значение см. resolve_lambda0)
        stop: число событий или горизонт
        rng: генератор случайных чисел
        origin: время опорного события

    Returns:
        Tuple[EventSeries, LambdaPath]
    """
    validate_for_model(dist)
    lambda0 = float(resolve_lambda0(params.mu, lambda0))
    if lambda0 < params.mu:
        raise InputError(f"lambda0 = {lambda0} должен быть не меньше mu = {params.mu}")

    t_stop = np.inf if stop.horizon is None else origin + stop.horizon
    limit = stop.max_events
    times_parts, lam_parts = [], []
    t_last, state, total = origin, lambda0, 0

    while limit is None or total < limit:
        size = config.SIM_CHUNK if limit is None else min(config.SIM_CHUNK, limit - total)
        eps = _draw(dist, rng, size)
        times, lam, n = _simulate_kernel(
            eps, t_last, state, params.mu, params.alpha, params.beta, t_stop,
            config.PHI_INV_TOL, config.PHI_INV_MAX_ITER,
        )
        if n < 0:
            raise ConvergenceError("phi_inv не сошелся при симуляции")
        times_parts.append(times[:n])
        lam_parts.append(lam[:n])
        total += n
        if n < size:
            break
        t_last, state = times[n - 1], lam[n - 1]

    times = np.concatenate(times_parts) if times_parts else np.empty(0)
    values = np.concatenate(lam_parts) if lam_parts else np.empty(0)
    horizon = t_stop if stop.horizon is not None else None
    series = EventSeries(times=times, origin=origin, horizon=horizon)
    path = LambdaPath(lambda0=lambda0, values=values)
    assert path.above(params.mu), "lambda_n <= mu"
    logger.debug(f"Сгенерировано {len(series)} событий")
    return series, path


def _check_univariate(series: EventSeries) -> None:
    if len(series) and np.any(series.types != 0):
        raise InputError("одномерная модель ожидает события только типа 0")


def infer_residuals(
    series: EventSeries, params: ExcitationParams, lambda0: Optional[float] = None
) -> Tuple[np.ndarray, LambdaPath]:
    """
    Восстановление остатков eps_n = phi(tau_n; lambda_{n-1}) вдоль наблюдаемых интервалов

    Returns:
        Tuple[np.ndarray, LambdaPath]: остатки и траектория состояния
    """
    _check_univariate(series)
    lambda0 = float(resolve_lambda0(params.mu, lambda0))
    if lambda0 < params.mu:
        raise InputError(f"lambda0 = {lambda0} должен быть не меньше mu = {params.mu}")
    tau = series.inter_arrivals()
    if tau.size and np.any(tau <= 0):
        raise InputError("времена событий должны строго возрастать")
    eps, lam = _filter_kernel(tau, lambda0, params.mu, params.alpha, params.beta)
    return eps, LambdaPath(lambda0=lambda0, values=lam)


def lambda_path(series: EventSeries, params: ExcitationParams, lambda0: Optional[float] = None) -> LambdaPath:
    return infer_residuals(series, params, lambda0)[1]


def loglik_terms(
    series: EventSeries, params: ExcitationParams, dist: ResidualDistribution, lambda0: Optional[float] = None
) -> np.ndarray:
    """Вклады log f(phi_n(tau_n)) + log psi_n(tau_n) по событиям"""
    require_density(validate_for_model(dist))
    eps, path = infer_residuals(series, params, lambda0)
    with np.errstate(divide="ignore"):
        return np.asarray(dist.logpdf(eps)) + np.log(path.values)


def loglik(
    series: EventSeries,
    params: ExcitationParams,
    dist: ResidualDistribution,
    lambda0: Optional[float] = None,
    censor: bool = False,
) -> float:
    """
    Логарифм правдоподобия гибкой модели

    Args:
        censor: добавить log(1 - F(phi(T - t_N))) за интервал без событий до конца окна
    """
    require_density(validate_for_model(dist))
    eps, path = infer_residuals(series, params, lambda0)
    with np.errstate(divide="ignore"):
        total = float(np.sum(np.asarray(dist.logpdf(eps)) + np.log(path.values)))
    if censor:
        state = path.values[-1] if len(path) else path.lambda0
        last = series.times[-1] if len(series) else series.origin
        total += float(dist.logsf(phi(series.horizon - last, state, params)))
    return total


def hawkes_loglik(series: EventSeries, params: ExcitationParams, lambda0: Optional[float] = None) -> float:
    """Логарифм правдоподобия экспоненциального процесса Хоукса: сумма log lambda_n - phi_n(tau_n)"""
    eps, path = infer_residuals(series, params, lambda0)
    return float(np.sum(np.log(path.values) - eps))


def map_paths(
    func: Callable[[np.random.Generator], object],
    rng: np.random.Generator,
    n_paths: int,
    threads: Optional[int] = None,
    desc: Optional[str] = None,
) -> List:
    """
    Запускает func на n_paths независимых дочерних генераторах

    Дочерние потоки порождаются rng.spawn, поэтому результат не зависит от числа потоков.
    """
    children = rng.spawn(n_paths)
    n_jobs = threads or config.THREADS
    iterator = tqdm(children, desc=desc, disable=desc is None or n_paths < 2, leave=False)
    if n_jobs == 1 or n_paths < 2:
        return [func(child) for child in iterator]
    return Parallel(n_jobs=n_jobs, prefer="threads")(delayed(func)(child) for child in iterator)


def fhs(
    series: EventSeries,
    params: ExcitationParams,
    lambda0: Optional[float],
    n_paths: int,
    rng: np.random.Generator,
    threads: Optional[int] = None,
    residuals: Optional[np.ndarray] = None,
) -> List[EventSeries]:
    """
    Фильтрованная историческая симуляция

    1. Восстановить остатки по оцененным параметрам
    2. Для каждой траектории выбрать остатки с возвращением
    3. Прогнать рекурсию tau = phi^{-1}(eps), длина траектории равна длине исходного ряда

    Args:
        series: исходные события
        params: оцененные параметры
        lambda0: начальное состояние (None -> mu)
        n_paths: число траекторий
        rng: генератор случайных чисел
        threads: ограничение числа потоков
        residuals: готовые остатки (иначе восстанавливаются по series)

    Returns:
        List[EventSeries]
    """
    if len(series) < 1:
        raise InputError("FHS требует непустой ряд событий")
    if residuals is None:
        residuals, _ = infer_residuals(series, params, lambda0)
    pool = validate_for_model(Empirical(residuals))
    stop = StoppingRule.events(len(series))
    logger.info(f"FHS: {n_paths} траекторий по {len(series)} событий")

    def one_path(child: np.random.Generator) -> EventSeries:
        return simulate(params, pool, lambda0, stop, child, origin=series.origin)[0]

    return map_paths(one_path, rng, n_paths, threads, desc="fhs")
