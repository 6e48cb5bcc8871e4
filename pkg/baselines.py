"""
Процесс Хоукса с гамма-ядром h(t) = alpha (t beta)^(k-1) exp(-beta t) / Gamma(k) - модель сравнения

При k = 1 ядро экспоненциальное. Интеграл ядра равен alpha / beta при любом k.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from numba import njit
from scipy import special

import config
from estimate import hessian_std_errors, nelder_mead
from exceptions import InputError, InvalidParameterError, StabilityError
from models import EventSeries, ExcitationParams, FitReport, StoppingRule, read_json, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GammaKernelParams:
    mu: float
    alpha: float
    beta: float
    k: float

    def __post_init__(self):
        for name in ("mu", "alpha", "beta", "k"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterError(f"{name} должен быть положительным, получено {value}")
        if self.branching_ratio >= 1.0:
            raise StabilityError(f"интеграл ядра alpha/beta = {self.branching_ratio:.6g} >= 1")

    @property
    def branching_ratio(self) -> float:
        return self.alpha / self.beta

    @property
    def mode(self) -> float:
        return max(self.k - 1.0, 0.0) / self.beta

    def window(self, tail: Optional[float] = None) -> float:
        """Лаг, за которым отброшенная масса ядра меньше tail"""
        tail = config.GAMMA_KERNEL_TAIL if tail is None else tail
        q = tail / self.branching_ratio
        if q >= 1.0:
            return 0.0
        return float(special.gammainccinv(self.k, q) / self.beta)

    def to_dict(self) -> Dict[str, float]:
        return {"mu": self.mu, "alpha": self.alpha, "beta": self.beta, "k": self.k}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "GammaKernelParams":
        try:
            return cls(float(data["mu"]), float(data["alpha"]), float(data["beta"]), float(data["k"]))
        except KeyError as e:
            raise InputError(f"в параметрах гамма-ядра нет поля {e}") from e


def write_gamma_params_json(params: GammaKernelParams, path: Union[str, Path]) -> Path:
    return write_json(params.to_dict(), path)


def read_gamma_params_json(path: Union[str, Path]) -> GammaKernelParams:
    """Параметры гамма-ядра из JSON; принимается и отчет оценки с полем params"""
    data = read_json(path)
    return GammaKernelParams.from_dict(data.get("params", data))


def gamma_kernel(t, params: GammaKernelParams):
    """Значение ядра; при t = 0 и k < 1 ядро бесконечно - такой вход отклоняется"""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise InputError("лаг ядра должен быть неотрицательным")
    if params.k < 1.0 and np.any(t == 0):
        raise InputError("h(0) = +inf при k < 1")
    with np.errstate(divide="ignore"):
        log_h = (
            np.log(params.alpha)
            + special.xlogy(params.k - 1.0, t * params.beta)
            - params.beta * t
            - special.gammaln(params.k)
        )
    return np.exp(log_h)


def gamma_kernel_integral(t, params: GammaKernelParams):
    """Интеграл ядра от 0 до t: (alpha/beta) P(k, beta t)"""
    t = np.asarray(t, dtype=np.float64)
    return params.branching_ratio * special.gammainc(params.k, params.beta * np.maximum(t, 0.0))


def _excitation_at_events(times: np.ndarray, params: GammaKernelParams) -> np.ndarray:
    """sum_{i<n} h(t_n - t_i) сдвигами по лагу; пары с разницей больше окна отбрасываются"""
    n = times.shape[0]
    total = np.zeros(n)
    window = params.window()
    for d in range(1, n):
        lags = times[d:] - times[:-d]
        keep = lags <= window
        if not np.any(keep):
            break
        total[d:][keep] += gamma_kernel(lags[keep], params)
    return total


def gamma_hawkes_loglik(series: EventSeries, params: GammaKernelParams) -> float:
    """
    Логарифм правдоподобия sum log lambda(t_n) - int lambda на [origin, horizon]

    Компенсатор считается точно через регуляризованную неполную гамма-функцию.
    """
    if len(series) and np.any(series.types != 0):
        raise InputError("гамма-ядро определено только для одномерных рядов")
    times = series.times
    T = series.horizon
    compensator = params.mu * (T - series.origin) + float(np.sum(gamma_kernel_integral(T - times, params)))
    if not len(series):
        return -compensator
    intensity = params.mu + _excitation_at_events(times, params)
    return float(np.sum(np.log(intensity)) - compensator)


def gamma_hawkes_compensator_residuals(series: EventSeries, params: GammaKernelParams) -> np.ndarray:
    """Приращения компенсатора между событиями (по теореме о замене времени - Exp(1))"""
    times = series.times
    n = times.shape[0]
    if not n:
        return np.empty(0)
    out = params.mu * series.inter_arrivals()
    window = params.window()
    for d in range(1, n):
        # событие i = n - d, интервал (t_{n-1}, t_n]
        src = times[:-d]
        upper = times[d:] - src
        lower = times[d - 1:-1] - src
        if lower.min() > window:
            break
        out[d:] += gamma_kernel_integral(upper, params) - gamma_kernel_integral(lower, params)
    return out


def exp_hawkes_loglik(series: EventSeries, params: ExcitationParams, initial_excess: float = 0.0) -> float:
    """
    Логарифм правдоподобия экспоненциального процесса Хоукса (рекурсия Озаки)

    Args:
        series: события на [origin, horizon]
        params: mu, alpha, beta
        initial_excess: возбуждение в момент origin, затухающее как exp(-beta t)
    """
    times = series.times
    mu, alpha, beta = params.mu, params.alpha, params.beta
    T, t0 = series.horizon, series.origin
    compensator = mu * (T - t0) + initial_excess * (-np.expm1(-beta * (T - t0))) / beta
    if not len(series):
        return float(-compensator)
    decay = np.exp(-beta * series.inter_arrivals())
    a = np.empty(len(series))
    state = 0.0
    for i in range(len(series)):
        state = decay[i] * (state + (1.0 if i else 0.0))
        a[i] = state
    intensity = mu + alpha * a + initial_excess * np.exp(-beta * (times - t0))
    compensator += alpha / beta * float(np.sum(-np.expm1(-beta * (T - times))))
    return float(np.sum(np.log(intensity)) - compensator)


# ---------------------------------------------------------------------------
# Симуляция
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _h(lag, alpha, beta, k, lgk):
    if k == 1.0:
        return alpha * math.exp(-beta * lag)
    if lag <= 0.0:
        return 0.0 if k > 1.0 else np.inf
    return alpha * math.exp((k - 1.0) * math.log(lag * beta) - beta * lag - lgk)


@njit(cache=True, nogil=True)
def _thinning_kernel(buf, n, s, expo, unif, mu, alpha, beta, k, mode, window, t_stop, max_events):
    """
    Прореживание Огаты с кусочной верхней границей: вклад каждого события ограничен значением
    ядра в max(текущий лаг, мода)

    Returns:
        (n, s, used, done, violations)
    """
    lgk = math.lgamma(k)
    violations = 0
    for j in range(expo.shape[0]):
        bound = mu
        i = n - 1
        while i >= 0 and s - buf[i] <= window:
            bound += _h(max(s - buf[i], mode), alpha, beta, k, lgk)
            i -= 1
        s += expo[j] / bound
        if s > t_stop:
            return n, s, j + 1, True, violations
        lam = mu
        i = n - 1
        while i >= 0 and s - buf[i] <= window:
            lam += _h(s - buf[i], alpha, beta, k, lgk)
            i -= 1
        if lam > bound * (1.0 + 1e-12):
            violations += 1
        if unif[j] * bound <= lam:
            buf[n] = s
            n += 1
            if n >= max_events:
                return n, s, j + 1, True, violations
    return n, s, expo.shape[0], False, violations


def _simulate_thinning(params: GammaKernelParams, stop: StoppingRule, rng: np.random.Generator) -> np.ndarray:
    if params.k < 1.0:
        raise InvalidParameterError("прореживание требует k >= 1 (ядро ограничено); используйте method='cluster'")
    t_stop = np.inf if stop.horizon is None else stop.horizon
    max_events = np.iinfo(np.int64).max if stop.max_events is None else stop.max_events
    if max_events == 0:
        return np.empty(0)
    window = params.window()
    chunk = config.SIM_CHUNK
    buf = np.empty(chunk)
    n, s = 0, 0.0
    while True:
        if buf.shape[0] - n < chunk:
            buf = np.concatenate([buf, np.empty(max(chunk, buf.shape[0]))])
        expo = rng.standard_exponential(chunk)
        unif = rng.random(chunk)
        n, s, _, done, violations = _thinning_kernel(
            buf, n, s, expo, unif, params.mu, params.alpha, params.beta, params.k,
            params.mode, window, t_stop, max_events,
        )
        assert violations == 0, "интенсивность превысила верхнюю границу прореживания"
        if done:
            return buf[:n].copy()


def _simulate_cluster(params: GammaKernelParams, stop: StoppingRule, rng: np.random.Generator) -> np.ndarray:
    """Ветвящееся представление: иммигранты Poisson(mu), у каждого события Poisson(alpha/beta) потомков"""
    if stop.horizon is not None:
        return _cluster_on(params, stop.horizon, rng)
    target = stop.max_events
    if target == 0:
        return np.empty(0)
    rate = params.mu / (1.0 - params.branching_ratio)
    horizon = 1.5 * target / rate
    while True:
        times = _cluster_on(params, horizon, rng)
        if times.shape[0] >= target:
            return times[:target]
        horizon *= 2.0


def _cluster_on(params: GammaKernelParams, horizon: float, rng: np.random.Generator) -> np.ndarray:
    n0 = rng.poisson(params.mu * horizon)
    generation = np.sort(rng.uniform(0.0, horizon, n0))
    parts = [generation]
    while generation.size:
        n_children = rng.poisson(params.branching_ratio, generation.size)
        parents = np.repeat(generation, n_children)
        children = parents + rng.gamma(params.k, 1.0 / params.beta, parents.size)
        generation = children[children <= horizon]
        parts.append(generation)
    times = np.sort(np.concatenate(parts))
    # совпадения времен имеют нулевую вероятность
    return times[np.concatenate([[True], np.diff(times) > 0])] if times.size else times


def gamma_hawkes_simulate(
    params: GammaKernelParams, stop: StoppingRule, rng: np.random.Generator, method: str = "auto"
) -> EventSeries:
    """
    Симуляция процесса с гамма-ядром

    Args:
        params: параметры ядра
        stop: правило остановки
        rng: генератор
        method: thinning (k >= 1), cluster (любое k) или auto
    """
    if method == "auto":
        method = "thinning" if params.k >= 1.0 else "cluster"
    if method == "thinning":
        times = _simulate_thinning(params, stop, rng)
    elif method == "cluster":
        times = _simulate_cluster(params, stop, rng)
    else:
        raise InvalidParameterError(f"неизвестный метод симуляции: {method}")
    logger.debug(f"Гамма-Хоукс ({method}): {times.shape[0]} событий")
    return EventSeries(times=times, horizon=stop.horizon)


# ---------------------------------------------------------------------------
# Оценивание
# ---------------------------------------------------------------------------

GAMMA_NAMES = ["mu", "alpha", "beta", "k"]


def _from_z(z) -> np.ndarray:
    mu, alpha = np.exp(z[0]), np.exp(z[1])
    return np.array([mu, alpha, alpha + np.exp(z[2]), np.exp(z[3])])


def _safe_loglik(series: EventSeries, theta) -> float:
    try:
        params = GammaKernelParams(*map(float, theta))
    except InvalidParameterError:
        return -np.inf
    value = gamma_hawkes_loglik(series, params)
    return value if np.isfinite(value) else -np.inf


def gamma_hawkes_fit(series: EventSeries, init: Optional[Dict[str, float]] = None, compute_std_errors: bool = True) -> FitReport:
    """ММП для процесса с гамма-ядром (Нелдер-Мид по log mu, log alpha, log(beta - alpha), log k)"""
    if len(series) < config.MLE_MIN_EVENTS:
        raise InputError(f"для ММП нужно не меньше {config.MLE_MIN_EVENTS} событий, получено {len(series)}")
    rate = len(series) / series.duration
    theta0 = np.array([rate, rate, 2.0 * rate, 1.0])
    for j, name in enumerate(GAMMA_NAMES):
        if init and name in init:
            theta0[j] = float(init[name])
    n = len(series)

    def objective(z):
        ll = _safe_loglik(series, _from_z(z))
        return -ll / n if np.isfinite(ll) else 2.0 * config.OPT_PENALTY

    z0 = np.array([np.log(theta0[0]), np.log(theta0[1]), np.log(theta0[2] - theta0[1]), np.log(theta0[3])])
    logger.info(f"Оценивание гамма-Хоукса: {n} событий")
    result = nelder_mead(objective, z0, label="mle/gamma_hawkes")
    theta = _from_z(result.x)
    params = GammaKernelParams(*map(float, theta))
    loglik = gamma_hawkes_loglik(series, params)
    warnings: List[str] = [] if result.converged else ["оптимизатор не сошелся"]
    se = np.full(4, np.nan)
    if compute_std_errors:
        se, se_warnings = hessian_std_errors(lambda th: _safe_loglik(series, th), theta)
        warnings.extend(se_warnings)
    return FitReport(
        model="gamma_hawkes",
        method="mle",
        family="none",
        estimates=dict(zip(GAMMA_NAMES, map(float, theta))),
        std_errors=dict(zip(GAMMA_NAMES, map(float, se))),
        objective=loglik,
        loglik=loglik,
        residuals=gamma_hawkes_compensator_residuals(series, params),
        converged=result.converged,
        iterations=result.iterations,
        n_events=n,
        history=-result.history * n,
        warnings=warnings,
        params=params,
    )
