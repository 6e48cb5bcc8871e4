"""
Многомерная модель с конкурирующим обращением остатков

На шаге n для каждого типа i разыгрывается eps_{i,n} и считается
tau_{i,n} = phi^{-1}(eps_{i,n}; lambda_{i,n-1}, theta_{i,z_{n-1}}); событие происходит в момент
минимального tau, его тип z_n = argmin (при равенстве - меньший индекс). Состояния всех типов
обновляются одним и тем же tau_n.

Перед первым событием предыдущего типа нет: если first_type не задан, член alpha на первом шаге
отключается, psi(t) = mu_i + (lambda_{i,0} - mu_i) exp(-beta_i t).
"""

import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

import config
from exceptions import ConvergenceError, InputError
from models import EventSeries, LambdaPath, MvExcitationParams, StoppingRule
from residuals import ResidualDistribution, require_density, validate_for_model
from univariate import _phi_inv_scalar, _phi_scalar, _psi_scalar

logger = logging.getLogger(__name__)

Dists = Union[ResidualDistribution, Sequence[ResidualDistribution]]
Rngs = Union[np.random.Generator, Sequence[np.random.Generator]]


@njit(cache=True, nogil=True)
def _mv_simulate_kernel(eps, t0, lam0, z0, mu, alpha, beta, t_stop, tol, max_iter):
    n, m = eps.shape
    times = np.empty(n)
    types = np.empty(n, dtype=np.int64)
    lam = np.empty((n, m))
    state = lam0.copy()
    z = z0
    t = t0
    for k in range(n):
        best = np.inf
        winner = -1
        for i in range(m):
            a = alpha[i, z] if z >= 0 else 0.0
            tau_i = _phi_inv_scalar(eps[k, i], state[i], mu[i], a, beta[i], tol, max_iter)
            if tau_i != tau_i:
                return times, types, lam, -1
            # строгое сравнение: при равенстве побеждает меньший индекс
            if tau_i < best:
                best = tau_i
                winner = i
        t += best
        if t > t_stop:
            return times, types, lam, k
        for i in range(m):
            a = alpha[i, z] if z >= 0 else 0.0
            state[i] = _psi_scalar(best, state[i], mu[i], a, beta[i])
            lam[k, i] = state[i]
        times[k] = t
        types[k] = winner
        z = winner
    return times, types, lam, n


@njit(cache=True, nogil=True)
def _mv_filter_kernel(tau, types, lam0, z0, mu, alpha, beta):
    """
    Прогон фильтра по наблюдаемым интервалам

    Returns:
        phis: (n, m) значения phi_i(tau_n; lambda_{i,n-1})
        lam: (n, m) состояния после каждого события
        acc: (n,) накопленная сумма phi типа z_n от его предыдущего события
        anchored: (n,) было ли у типа z_n предыдущее событие (или опорное начало)
    """
    n = tau.shape[0]
    m = mu.shape[0]
    phis = np.empty((n, m))
    lam = np.empty((n, m))
    acc = np.empty(n)
    anchored = np.zeros(n, dtype=np.bool_)
    state = lam0.copy()
    running = np.zeros(m)
    seen = np.zeros(m, dtype=np.bool_)
    if z0 >= 0:
        seen[z0] = True
    z = z0
    for k in range(n):
        for i in range(m):
            a = alpha[i, z] if z >= 0 else 0.0
            p = _phi_scalar(tau[k], state[i], mu[i], a, beta[i])
            phis[k, i] = p
            running[i] += p
            state[i] = _psi_scalar(tau[k], state[i], mu[i], a, beta[i])
            lam[k, i] = state[i]
        z = types[k]
        acc[k] = running[z]
        anchored[k] = seen[z]
        running[z] = 0.0
        seen[z] = True
    return phis, lam, acc, anchored


def _per_type(dists: Dists, m: int) -> List[ResidualDistribution]:
    """Распределения остатков по типам; каждое проверяется на E[eps] = 1"""
    if isinstance(dists, ResidualDistribution):
        return [validate_for_model(dists)] * m
    dists = list(dists)
    if len(dists) != m:
        raise InputError(f"ожидалось {m} распределений остатков, получено {len(dists)}")
    return [validate_for_model(dist) for dist in dists]


def _resolve_lambda0(params: MvExcitationParams, lambda0) -> np.ndarray:
    """None -> mu (граничный старт, как в univariate.resolve_lambda0); значения ниже mu отклоняются"""
    if lambda0 is None:
        return params.mu.copy()
    lam0 = np.broadcast_to(np.asarray(lambda0, dtype=np.float64), (params.m,)).copy()
    if np.any(lam0 < params.mu):
        raise InputError(f"lambda0 = {lam0.tolist()} должен быть не меньше mu = {params.mu.tolist()}")
    return lam0


def _first_type_code(first_type: Optional[int], m: int) -> int:
    if first_type is None:
        return -1
    if not 0 <= first_type < m:
        raise InputError(f"first_type = {first_type} вне диапазона [0, {m})")
    return int(first_type)


def _check_series(series: EventSeries, m: int) -> None:
    if series.m > m:
        raise InputError(f"в ряду {series.m} типов, у модели {m}")


def simulate_mv(
    params: MvExcitationParams,
    dists: Dists,
    lambda0,
    stop: StoppingRule,
    rng: Rngs,
    first_type: Optional[int] = None,
    origin: float = 0.0,
) -> Tuple[EventSeries, LambdaPath]:
    """
    Симуляция многомерной модели

    Args:
        params: параметры возбуждения
        dists: общее распределение остатков или по одному на тип
        lambda0: начальные состояния (None -> mu)
        stop: правило остановки
        rng: один генератор (остатки разыгрываются по типам блоками) или генератор на каждый тип
        first_type: тип опорного события в момент origin; None - член alpha на первом шаге отключен
        origin: время опорного события

    Returns:
        Tuple[EventSeries, LambdaPath]: события с типами и траектория состояний (N, m)
    """
    m = params.m
    dists = _per_type(dists, m)
    lam0 = _resolve_lambda0(params, lambda0)
    z = _first_type_code(first_type, m)
    rngs = [rng] * m if isinstance(rng, np.random.Generator) else list(rng)
    if len(rngs) != m:
        raise InputError(f"ожидалось {m} генераторов, получено {len(rngs)}")

    t_stop = np.inf if stop.horizon is None else origin + stop.horizon
    limit = stop.max_events
    times_parts, types_parts, lam_parts = [], [], []
    t_last, state, total = origin, lam0, 0

    while limit is None or total < limit:
        size = config.SIM_CHUNK if limit is None else min(config.SIM_CHUNK, limit - total)
        eps = np.empty((size, m))
        for i in range(m):
            eps[:, i] = dists[i].sample(rngs[i], size)
        times, types, lam, n = _mv_simulate_kernel(
            eps, t_last, state, z, params.mu, params.alpha, params.beta, t_stop,
            config.PHI_INV_TOL, config.PHI_INV_MAX_ITER,
        )
        if n < 0:
            raise ConvergenceError("phi_inv не сошелся при симуляции")
        times_parts.append(times[:n])
        types_parts.append(types[:n])
        lam_parts.append(lam[:n])
        total += n
        if n < size:
            break
        t_last, state, z = times[n - 1], lam[n - 1].copy(), int(types[n - 1])

    times = np.concatenate(times_parts) if times_parts else np.empty(0)
    types = np.concatenate(types_parts) if types_parts else np.empty(0, dtype=np.int64)
    values = np.concatenate(lam_parts) if lam_parts else np.empty((0, m))
    series = EventSeries(
        times=times, types=types, origin=origin,
        horizon=t_stop if stop.horizon is not None else None, n_types=m,
    )
    path = LambdaPath(lambda0=lam0, values=values)
    assert path.above(params.mu), "lambda_{i,n} <= mu_i"
    return series, path


def _filter(series: EventSeries, params: MvExcitationParams, lambda0, first_type: Optional[int]):
    _check_series(series, params.m)
    tau = series.inter_arrivals()
    if tau.size and np.any(tau <= 0):
        raise InputError("времена событий должны строго возрастать")
    lam0 = _resolve_lambda0(params, lambda0)
    z0 = _first_type_code(first_type, params.m)
    phis, lam, acc, anchored = _mv_filter_kernel(
        tau, series.types, lam0, z0, params.mu, params.alpha, params.beta
    )
    return lam0, phis, lam, acc, anchored


def loglik_mv_contributions(
    series: EventSeries,
    params: MvExcitationParams,
    dists: Dists,
    lambda0=None,
    first_type: Optional[int] = None,
) -> np.ndarray:
    """
    Вклады событий в логарифм правдоподобия

    l_n = log psi_{z_n}(tau_n) + log f(phi_{z_n,n}) + sum_{i != z_n} log(1 - F(phi_{i,n}))
    """
    m = params.m
    dists = _per_type(dists, m)
    for dist in dists:
        require_density(dist)
    _, phis, lam, _, _ = _filter(series, params, lambda0, first_type)
    n = len(series)
    rows = np.arange(n)
    z = series.types
    with np.errstate(divide="ignore"):
        terms = np.log(lam[rows, z])
    for i in range(m):
        own = z == i
        if np.any(own):
            terms[own] += dists[i].logpdf(phis[own, i])
        if np.any(~own):
            terms[~own] += dists[i].logsf(phis[~own, i])
    return terms


def loglik_mv(
    series: EventSeries,
    params: MvExcitationParams,
    dists: Dists,
    lambda0=None,
    first_type: Optional[int] = None,
) -> float:
    """Логарифм правдоподобия многомерной модели; -inf с диагностикой индекса события"""
    terms = loglik_mv_contributions(series, params, dists, lambda0, first_type)
    bad = np.flatnonzero(~np.isfinite(terms))
    if bad.size:
        logger.warning(f"Бесконечный вклад в правдоподобие у события {int(bad[0])} (всего {bad.size})")
        return -np.inf
    return float(np.sum(terms))


def lambda_paths_mv(series: EventSeries, params: MvExcitationParams, lambda0=None, first_type: Optional[int] = None) -> LambdaPath:
    lam0, _, lam, _, _ = _filter(series, params, lambda0, first_type)
    return LambdaPath(lambda0=lam0, values=lam)


def infer_residuals_mv(
    series: EventSeries,
    params: MvExcitationParams,
    lambda0=None,
    first_type: Optional[int] = None,
) -> List[np.ndarray]:
    """
    Остатки по типам: сумма phi_i по шагам между соседними событиями типа i

    Вклады промежуточных событий других типов накапливаются. Если задан first_type, опорное начало
    считается событием этого типа, иначе типы с менее чем двумя событиями дают пустую последовательность.

    Returns:
        List[np.ndarray]: остатки для каждого типа
    """
    _, _, _, acc, anchored = _filter(series, params, lambda0, first_type)
    return [acc[(series.types == i) & anchored] for i in range(params.m)]
