"""
Оценивание параметров: ММП с гибкими остатками, квази-ММП (экспоненциальные остатки), двухшаговый GMM,
численные стандартные ошибки.

Оптимизация - Нелдер-Мид (scipy) в неограниченных координатах log mu, log alpha, log(beta - alpha)
с перезапусками от лучшей точки.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import minimize

import config
from exceptions import InputError, InvalidParameterError
from models import EventSeries, ExcitationParams, FitReport, GmmSpec, MvExcitationParams
from multivariate import infer_residuals_mv, loglik_mv_contributions
from residuals import ResidualFamily, get_family
from univariate import _filter_kernel, infer_residuals, resolve_lambda0

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Нелдер-Мид с перезапусками
# ---------------------------------------------------------------------------

@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    history: np.ndarray = field(default_factory=lambda: np.empty(0))


def _initial_simplex(z0: np.ndarray, scales: np.ndarray) -> np.ndarray:
    d = z0.shape[0]
    simplex = np.tile(z0, (d + 1, 1))
    for j in range(d):
        simplex[j + 1, j] += config.OPT_SIMPLEX_STEP * scales[j]
    return simplex


def nelder_mead(fun: Callable[[np.ndarray], float], z0, scales=None, label: str = "") -> OptimResult:
    """
    Минимизация fun симплексом Нелдера-Мида с перезапусками

    Перезапуск строит новый симплекс вокруг лучшей точки; сходимость засчитывается, когда
    перезапуск не улучшает значение больше чем на OPT_FATOL.

    Args:
        fun: минимизируемая функция
        z0: начальная точка
        scales: масштаб шага начального симплекса по координатам
        label: метка для логов

    Returns:
        OptimResult: лучшая точка, значение, число итераций, флаг сходимости и история лучшего значения
    """
    z0 = np.asarray(z0, dtype=np.float64)
    scales = np.ones_like(z0) if scales is None else np.asarray(scales, dtype=np.float64)
    best = {"f": np.inf, "x": z0.copy()}
    history: List[float] = []

    def tracked(z):
        f = float(fun(z))
        if not np.isfinite(f):
            f = 2.0 * config.OPT_PENALTY
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(z, dtype=np.float64)
        history.append(best["f"])
        return f

    iterations = 0
    converged = False
    z = z0
    for attempt in range(config.OPT_MAX_RESTARTS + 1):
        before = best["f"]
        res = minimize(
            tracked,
            z,
            method="Nelder-Mead",
            options={
                "initial_simplex": _initial_simplex(z, scales),
                "xatol": config.OPT_XATOL,
                "fatol": config.OPT_FATOL,
                "maxiter": config.OPT_MAXITER,
                "maxfev": 2 * config.OPT_MAXITER,
            },
        )
        iterations += int(res.nit)
        z = best["x"]
        if iterations >= config.OPT_MAXITER:
            logger.warning(f"{label}: исчерпан лимит итераций ({iterations})")
            break
        if attempt > 0 and res.success and before - best["f"] <= config.OPT_FATOL * max(1.0, abs(best["f"])):
            converged = True
            break
        logger.debug(f"{label}: перезапуск {attempt + 1}, значение {best['f']:.10g}")

    if not converged:
        logger.warning(f"{label}: оптимизатор не сошелся, возвращается лучшая найденная точка")
    return OptimResult(x=best["x"], fun=best["f"], iterations=iterations, converged=converged, history=np.asarray(history))


# ---------------------------------------------------------------------------
# Численные производные
# ---------------------------------------------------------------------------

def _steps(x: np.ndarray, rel_step: float) -> np.ndarray:
    return rel_step * np.maximum(1.0, np.abs(x))


def numerical_gradient(f: Callable[[np.ndarray], float], x, rel_step: Optional[float] = None) -> np.ndarray:
    """Центральные разности с шагом rel_step * max(1, |x|)"""
    x = np.asarray(x, dtype=np.float64)
    h = _steps(x, config.JACOBIAN_REL_STEP if rel_step is None else rel_step)
    grad = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h[j]
        grad[j] = (f(x + e) - f(x - e)) / (2.0 * h[j])
    return grad


def numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], x, rel_step: Optional[float] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h = _steps(x, config.JACOBIAN_REL_STEP if rel_step is None else rel_step)
    columns = []
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h[j]
        columns.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h[j]))
    return np.column_stack(columns)


def numerical_hessian(f: Callable[[np.ndarray], float], x, rel_step: Optional[float] = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    h = _steps(x, config.HESSIAN_REL_STEP if rel_step is None else rel_step)
    d = x.shape[0]
    hess = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h[i] * h[i])
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = h[j]
            value = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = value
    return hess


def hessian_std_errors(loglik: Callable[[np.ndarray], float], theta) -> Tuple[np.ndarray, List[str]]:
    """
    Стандартные ошибки из обратной отрицательной численной матрицы Гессе

    Returns:
        Tuple[np.ndarray, List[str]]: ошибки (NaN, если матрица не положительно определена) и предупреждения
    """
    theta = np.asarray(theta, dtype=np.float64)
    info = -numerical_hessian(loglik, theta)
    warnings: List[str] = []
    if not np.all(np.isfinite(info)):
        warnings.append("hessian: нечисловые значения в матрице Гессе")
        return np.full(theta.shape[0], np.nan), warnings
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        warnings.append("hessian: отрицательная матрица Гессе не положительно определена")
        logger.warning("Матрица информации не положительно определена, стандартные ошибки не определены")
        return np.full(theta.shape[0], np.nan), warnings
    diag = np.diag(cov)
    se = np.where(diag >= 0, np.sqrt(np.abs(diag)), np.nan)
    return se, warnings


# ---------------------------------------------------------------------------
# Задачи правдоподобия
# ---------------------------------------------------------------------------

class _UnivariateProblem:
    """Вектор параметров theta = (mu, alpha, beta, параметры остатков)"""

    model = "univariate"

    def __init__(self, series: EventSeries, family: ResidualFamily, lambda0: Optional[float] = None):
        if len(series) and np.any(series.types != 0):
            raise InputError("одномерная модель ожидает события только типа 0")
        self.series = series
        self.family = family
        self.lambda0 = lambda0
        self.tau = series.inter_arrivals()
        self.n = len(series)
        self.names = ["mu", "alpha", "beta", *family.param_names]

    def default_init(self) -> np.ndarray:
        rate = self.n / max(self.series.duration, np.finfo(float).tiny)
        beta = 2.0 * rate
        return np.array([rate, 0.5 * beta, beta, *self.family.initial], dtype=np.float64)

    def to_z(self, theta):
        mu, alpha, beta = theta[:3]
        return np.concatenate([[np.log(mu), np.log(alpha), np.log(beta - alpha)], self.family.to_unconstrained(theta[3:])])

    def from_z(self, z):
        mu, alpha = np.exp(z[0]), np.exp(z[1])
        return np.concatenate([[mu, alpha, alpha + np.exp(z[2])], self.family.from_unconstrained(z[3:])])

    def penalty(self, theta) -> float:
        mu, alpha, beta = theta[:3]
        if not (np.all(np.isfinite(theta[:3])) and mu > 0 and alpha > 0 and beta > alpha):
            return config.OPT_PENALTY
        return self.family.penalty(theta[3:])

    def _state0(self, mu: float) -> float:
        lam0 = resolve_lambda0(mu, self.lambda0)
        return max(float(lam0), mu)

    def loglik(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if self.penalty(theta):
            return -np.inf
        mu, alpha, beta = theta[:3]
        dist = self.family.build(theta[3:])
        eps, lam = _filter_kernel(self.tau, self._state0(mu), mu, alpha, beta)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = float(np.sum(dist.logpdf(eps)) + np.sum(np.log(lam)))
        return value if np.isfinite(value) else -np.inf

    def build(self, theta):
        return ExcitationParams(*map(float, theta[:3])), self.family.build(theta[3:])

    def residuals(self, theta):
        params, _ = self.build(theta)
        return infer_residuals(self.series, params, self._state0(params.mu))[0]


class _MultivariateProblem:
    """theta = (mu_i, свободные alpha, beta_i, параметры остатков по типам)"""

    model = "multivariate"

    def __init__(
        self,
        series: EventSeries,
        family: ResidualFamily,
        lambda0=None,
        symmetric: bool = False,
        first_type: Optional[int] = None,
        m: Optional[int] = None,
    ):
        self.series = series
        self.family = family
        self.lambda0 = lambda0
        self.first_type = first_type
        self.m = int(m or series.m)
        if symmetric and self.m != 2:
            raise InvalidParameterError("симметричное ограничение определено только для m = 2")
        self.symmetric = symmetric
        self.n = len(series)
        m = self.m
        alpha_names = ["alpha_self", "alpha_cross"] if symmetric else [f"alpha_{i}{j}" for i in range(m) for j in range(m)]
        self.n_alpha = len(alpha_names)
        self.names = (
            [f"mu_{i}" for i in range(m)]
            + alpha_names
            + [f"beta_{i}" for i in range(m)]
            + [f"{p}_{i}" for i in range(m) for p in family.param_names]
        )

    def _split(self, theta):
        m, k = self.m, self.n_alpha
        mu = theta[:m]
        a = theta[m:m + k]
        beta = theta[m + k:2 * m + k]
        res = theta[2 * m + k:].reshape(m, self.family.n_params)
        alpha = np.array([[a[0], a[1]], [a[1], a[0]]]) if self.symmetric else a.reshape(m, m)
        return mu, alpha, beta, res

    def default_init(self) -> np.ndarray:
        duration = max(self.series.duration, np.finfo(float).tiny)
        counts = np.bincount(self.series.types, minlength=self.m).astype(np.float64)
        mu = np.maximum(counts, 1.0) / duration
        beta = np.full(self.m, 2.0 * max(self.n, 1) / duration)
        alpha = np.full(self.n_alpha, 0.5 * beta[0] / self.m)
        res = np.tile(np.asarray(self.family.initial, dtype=np.float64), self.m)
        return np.concatenate([mu, alpha, beta, res])

    def to_z(self, theta):
        return np.log(np.asarray(theta, dtype=np.float64))

    def from_z(self, z):
        return np.exp(np.asarray(z, dtype=np.float64))

    def penalty(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if not (np.all(np.isfinite(theta)) and np.all(theta > 0)):
            return config.OPT_PENALTY
        mu, alpha, beta, res = self._split(theta)
        rho = float(np.max(np.abs(np.linalg.eigvals(alpha / beta[:, None]))))
        if rho >= 1.0:
            return config.OPT_PENALTY * rho
        return sum(self.family.penalty(r) for r in res)

    def build(self, theta):
        mu, alpha, beta, res = self._split(np.asarray(theta, dtype=np.float64))
        params = MvExcitationParams(mu=mu, alpha=alpha, beta=beta, symmetric=self.symmetric)
        return params, [self.family.build(r) for r in res]

    def _state0(self, params: MvExcitationParams):
        if self.lambda0 is None:
            return None
        return np.maximum(np.broadcast_to(np.asarray(self.lambda0, dtype=np.float64), (self.m,)), params.mu)

    def loglik(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if self.penalty(theta):
            return -np.inf
        params, dists = self.build(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = loglik_mv_contributions(self.series, params, dists, self._state0(params), self.first_type)
        value = float(np.sum(terms))
        return value if np.isfinite(value) else -np.inf

    def residuals(self, theta):
        params, _ = self.build(theta)
        return infer_residuals_mv(self.series, params, self._state0(params), self.first_type)


class _RawSpace:
    """Обертка задачи для оптимизации в исходных координатах (с ограничениями через штраф)"""

    def __init__(self, problem):
        self.problem = problem

    def to_z(self, theta):
        return np.asarray(theta, dtype=np.float64)

    def from_z(self, z):
        return np.asarray(z, dtype=np.float64)


def _make_problem(series, model, family, lambda0, symmetric, first_type, m=None):
    if model == "univariate":
        return _UnivariateProblem(series, family, lambda0)
    if model == "multivariate":
        return _MultivariateProblem(series, family, lambda0, symmetric, first_type, m)
    raise InvalidParameterError(f"неизвестная модель: {model}")


def _init_vector(problem, init: Optional[Dict[str, float]]) -> np.ndarray:
    theta = problem.default_init()
    if init:
        unknown = set(init) - set(problem.names)
        if unknown:
            raise InvalidParameterError(f"неизвестные параметры в init: {sorted(unknown)}")
        for j, name in enumerate(problem.names):
            if name in init:
                theta[j] = float(init[name])
    return theta


def _run_mle(problem, theta0: np.ndarray, space: str, label: str) -> OptimResult:
    n = max(problem.n, 1)
    mapper = problem if space == "log" else _RawSpace(problem)

    def objective(z):
        theta = mapper.from_z(z)
        pen = problem.penalty(theta)
        if pen:
            return pen
        ll = problem.loglik(theta)
        return -ll / n if np.isfinite(ll) else 2.0 * config.OPT_PENALTY

    scales = np.ones_like(theta0) if space == "log" else np.maximum(np.abs(theta0), 1e-3)
    result = nelder_mead(objective, mapper.to_z(theta0), scales, label=label)
    result.x = mapper.from_z(result.x)
    return result


def mle_fit(
    series: EventSeries,
    model: str = "univariate",
    dist_family: str = "exp",
    init: Optional[Dict[str, float]] = None,
    lambda0=None,
    symmetric: bool = False,
    first_type: Optional[int] = None,
    n_starts: int = 1,
    rng: Optional[np.random.Generator] = None,
    threads: Optional[int] = None,
    compute_std_errors: bool = True,
    space: str = "log",
    method: str = "mle",
) -> FitReport:
    """
    Оценка максимального правдоподобия по параметрам модели и остатков совместно

    Args:
        series: наблюдаемые события
        model: univariate | multivariate
        dist_family: семейство остатков (exp, gamma, trapezoid)
        init: начальные значения по именам параметров (недостающие - по умолчанию)
        lambda0: начальное состояние (None -> mu текущей итерации)
        symmetric: ограничение alpha11 = alpha22, alpha12 = alpha21 (m = 2)
        first_type: тип опорного события многомерной модели
        n_starts: число стартов (дополнительные - случайные возмущения init), выполняются параллельно
        rng: генератор для возмущений стартов
        threads: ограничение числа потоков
        compute_std_errors: считать ошибки по матрице Гессе
        space: log - преобразованные координаты, raw - исходные со штрафом
        method: метка метода в отчете

    Returns:
        FitReport
    """
    family = get_family(dist_family)
    if len(series) < config.MLE_MIN_EVENTS:
        raise InputError(f"для ММП нужно не меньше {config.MLE_MIN_EVENTS} событий, получено {len(series)}")
    if space not in ("log", "raw"):
        raise InvalidParameterError(f"неизвестное пространство параметров: {space}")
    problem = _make_problem(series, model, family, lambda0, symmetric, first_type)
    theta0 = _init_vector(problem, init)
    if problem.penalty(theta0):
        raise InvalidParameterError(f"начальная точка вне допустимой области: {dict(zip(problem.names, theta0))}")

    starts = [theta0]
    if n_starts > 1:
        rng = rng if rng is not None else np.random.default_rng()
        for _ in range(n_starts - 1):
            candidate = theta0 * np.exp(0.3 * rng.standard_normal(theta0.shape[0]))
            if problem.penalty(candidate):
                candidate = theta0
            starts.append(candidate)

    label = f"{method}/{model}/{dist_family}"
    logger.info(f"Запуск оценивания {label}: {len(series)} событий, стартов {len(starts)}")
    try:
        if len(starts) == 1:
            results = [_run_mle(problem, theta0, space, label)]
        else:
            results = Parallel(n_jobs=threads or config.THREADS, prefer="threads")(
                delayed(_run_mle)(problem, s, space, label) for s in starts
            )
    except Exception as e:
        logger.error(f"Ошибка при оценивании {label}: {e}")
        raise
    best = min(results, key=lambda r: r.fun)

    theta = best.x
    loglik = problem.loglik(theta)
    params, dists = problem.build(theta)
    warnings: List[str] = []
    if not best.converged:
        warnings.append("оптимизатор не сошелся")
    se = np.full(theta.shape[0], np.nan)
    if compute_std_errors:
        se, se_warnings = hessian_std_errors(problem.loglik, theta)
        warnings.extend(se_warnings)

    history = -best.history * problem.n
    logger.info(f"Оценивание {label} завершено: loglik={loglik:.6f}, сошлось={best.converged}")
    return FitReport(
        model=model,
        method=method,
        family=dist_family,
        estimates=dict(zip(problem.names, map(float, theta))),
        std_errors=dict(zip(problem.names, map(float, se))),
        objective=loglik,
        loglik=loglik,
        residuals=problem.residuals(theta),
        converged=best.converged,
        iterations=best.iterations,
        n_events=len(series),
        history=history,
        warnings=warnings,
        params=params,
        dists=dists,
        extras={"lambda0": lambda0, "symmetric": symmetric, "first_type": first_type, "space": space},
    )


def qmle_exp_fit(series: EventSeries, model: str = "univariate", **kwargs) -> FitReport:
    """Квази-ММП: правдоподобие с экспоненциальными остатками (стандартный процесс Хоукса)"""
    return mle_fit(series, model, "exp", method="qmle", **kwargs)


# ---------------------------------------------------------------------------
# GMM
# ---------------------------------------------------------------------------

GMM_NAMES = ["mu", "alpha", "beta"]


def _moment_matrix(eps: np.ndarray, lam: np.ndarray, tau: np.ndarray, spec: GmmSpec) -> np.ndarray:
    u = eps[1:] - 1.0
    columns = [eps[:-1] * u, lam[:-1] * u, tau[:-1] * u]
    if spec.moments == "lagged_mean":
        columns.append(u)
    return spec.scale * np.column_stack(columns)


def gmm_moments(series: EventSeries, params: ExcitationParams, spec: GmmSpec = GmmSpec(), lambda0=None) -> np.ndarray:
    """
    Матрица моментных условий g_n, n = 2..N

    eps, path = infer_residuals(series, params, max(float(resolve_lambda0(params.mu, lambda0)), params.mu))
    """
    eps, path = infer_residuals(series, params, lambda0)
    return _moment_matrix(eps, path.values, series.inter_arrivals(), spec)


def gmm_criterion(
    series: EventSeries, params: ExcitationParams, spec: GmmSpec = GmmSpec(), weight: Optional[np.ndarray] = None, lambda0=None
) -> float:
    """Квадратичная форма g_bar' W g_bar (W = I по умолчанию)"""
    gbar = gmm_moments(series, params, spec, lambda0).mean(axis=0)
    weight = np.eye(gbar.shape[0]) if weight is None else weight
    return float(gbar @ weight @ gbar)


def gmm_weight_matrix(g: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Обратная выборочная ковариация моментов; при вырожденности - гребневая регуляризация

    Returns:
        Tuple[np.ndarray, bool]: матрица весов и флаг регуляризации
    """
    cov = np.atleast_2d(np.cov(g, rowvar=False))
    k = cov.shape[0]
    try:
        if not np.all(np.isfinite(cov)) or np.linalg.cond(cov) > 1.0 / np.finfo(float).eps:
            raise np.linalg.LinAlgError("ill-conditioned")
        return np.linalg.inv(cov), False
    except np.linalg.LinAlgError:
        ridge = config.GMM_RIDGE * np.trace(cov) / k
        logger.warning(f"Вырожденная ковариация моментов, гребневая регуляризация {ridge:.3g}")
        return np.linalg.inv(cov + ridge * np.eye(k)), True


class _GmmProblem:
    def __init__(self, series: EventSeries, spec: GmmSpec, lambda0=None):
        if len(series) and np.any(series.types != 0):
            raise InputError("GMM определен для одномерной модели")
        self.series = series
        self.spec = spec
        self.lambda0 = lambda0
        self.tau = series.inter_arrivals()
        self.n = len(series)

    def default_init(self) -> np.ndarray:
        rate = self.n / max(self.series.duration, np.finfo(float).tiny)
        return np.array([rate, rate, 2.0 * rate])

    @staticmethod
    def to_z(theta):
        return np.array([np.log(theta[0]), np.log(theta[1]), np.log(theta[2] - theta[1])])

    @staticmethod
    def from_z(z):
        return np.array([np.exp(z[0]), np.exp(z[1]), np.exp(z[1]) + np.exp(z[2])])

    def moments(self, theta) -> np.ndarray:
        mu, alpha, beta = theta
        lam0 = max(float(resolve_lambda0(mu, self.lambda0)), mu)
        eps, lam = _filter_kernel(self.tau, lam0, mu, alpha, beta)
        return _moment_matrix(eps, lam, self.tau, self.spec)

    def mean_moments(self, theta) -> np.ndarray:
        return self.moments(theta).mean(axis=0)

    def criterion(self, theta, weight: np.ndarray) -> float:
        gbar = self.mean_moments(theta)
        return float(gbar @ weight @ gbar)


def gmm_fit(
    series: EventSeries,
    spec: GmmSpec = GmmSpec(),
    init: Optional[Dict[str, float]] = None,
    lambda0=None,
    compute_std_errors: bool = True,
) -> FitReport:
    """
    Двухшаговый GMM по моментным условиям на восстановленных остатках

    Шаг 1: W = I (критерий нормирован на значение в начальной точке).
    Шаг 2: W = обратная выборочная ковариация моментов в оценках шага 1, критерий N g_bar' W g_bar.

    Returns:
        FitReport: оценки mu, alpha, beta (параметры распределения остатков не оцениваются)
    """
    if len(series) < config.GMM_MIN_EVENTS:
        logger.warning(f"GMM на {len(series)} событиях: рекомендуется не меньше {config.GMM_MIN_EVENTS}")
    if len(series) < 3:
        raise InputError("GMM требует хотя бы три события")
    problem = _GmmProblem(series, spec, lambda0)
    theta0 = problem.default_init()
    if init:
        for j, name in enumerate(GMM_NAMES):
            if name in init:
                theta0[j] = float(init[name])
    if not (theta0[0] > 0 and 0 < theta0[1] < theta0[2]):
        raise InvalidParameterError(f"начальная точка вне допустимой области: {theta0.tolist()}")

    warnings: List[str] = []
    k = spec.n_moments
    identity = np.eye(k)
    scale0 = problem.criterion(theta0, identity)
    scale0 = scale0 if np.isfinite(scale0) and scale0 > 0 else 1.0

    def stage_objective(weight, norm):
        def objective(z):
            value = problem.criterion(problem.from_z(z), weight) / norm
            return value if np.isfinite(value) else 2.0 * config.OPT_PENALTY
        return objective

    logger.info(f"GMM шаг 1: {len(series)} событий, моментов {k}")
    stage1 = nelder_mead(stage_objective(identity, scale0), problem.to_z(theta0), label="gmm/stage1")
    theta1 = problem.from_z(stage1.x)
    weight, ridged = identity, False
    result = stage1
    theta = theta1
    objective = problem.n * problem.criterion(theta1, identity)
    stage1_under_w2 = None

    if spec.weight_stage == "two_step":
        weight, ridged = gmm_weight_matrix(problem.moments(theta1))
        if ridged:
            warnings.append("ковариация моментов вырождена: использована гребневая регуляризация")
        logger.info("GMM шаг 2: обновление матрицы весов")
        result = nelder_mead(stage_objective(weight, 1.0 / problem.n), stage1.x, label="gmm/stage2")
        theta = problem.from_z(result.x)
        objective = problem.n * problem.criterion(theta, weight)
        stage1_under_w2 = problem.n * problem.criterion(theta1, weight)
        # шаг 2 стартует из оценки шага 1, поэтому не может ухудшить критерий
        if stage1_under_w2 < objective:
            theta, objective = theta1, stage1_under_w2

    if not result.converged:
        warnings.append("оптимизатор не сошелся")
    params = ExcitationParams(*map(float, theta))
    eps, _ = infer_residuals(series, params, max(float(resolve_lambda0(params.mu, lambda0)), params.mu))
    report = FitReport(
        model="univariate",
        method="gmm",
        family="none",
        estimates=dict(zip(GMM_NAMES, map(float, theta))),
        std_errors=dict.fromkeys(GMM_NAMES, float("nan")),
        objective=float(objective),
        loglik=None,
        residuals=eps,
        converged=result.converged,
        iterations=stage1.iterations + (result.iterations if result is not stage1 else 0),
        n_events=len(series),
        history=result.history,
        warnings=warnings,
        params=params,
        extras={
            "weight_matrix": weight,
            "ridge": ridged,
            "spec": spec,
            "lambda0": lambda0,
            "stage1_estimates": dict(zip(GMM_NAMES, map(float, theta1))),
            "stage1_criterion_w2": stage1_under_w2,
        },
    )
    if compute_std_errors:
        report = std_errors(report, series, "gmm_sandwich")
    logger.info(f"GMM завершен: {report.estimates}")
    return report


def gmm_sandwich_std_errors(
    mean_moments: Callable[[np.ndarray], np.ndarray], moments: np.ndarray, weight: np.ndarray, theta
) -> Tuple[np.ndarray, List[str]]:
    """(G'WG)^-1 G'W Omega W G (G'WG)^-1 / N с численным якобианом G"""
    theta = np.asarray(theta, dtype=np.float64)
    n = moments.shape[0]
    jac = numerical_jacobian(mean_moments, theta)
    omega = np.atleast_2d(np.cov(moments, rowvar=False))
    warnings: List[str] = []
    try:
        bread = np.linalg.inv(jac.T @ weight @ jac)
    except np.linalg.LinAlgError:
        warnings.append("gmm_sandwich: матрица G'WG вырождена")
        return np.full(theta.shape[0], np.nan), warnings
    cov = bread @ jac.T @ weight @ omega @ weight @ jac @ bread / n
    diag = np.diag(cov)
    if np.any(diag < 0):
        warnings.append("gmm_sandwich: отрицательные диагональные элементы ковариации")
    return np.where(diag >= 0, np.sqrt(np.abs(diag)), np.nan), warnings


def std_errors(report: FitReport, series: EventSeries, method: str = "hessian") -> FitReport:
    """
    Численные стандартные ошибки для готового отчета

    Args:
        report: результат mle_fit / qmle_exp_fit / gmm_fit
        series: данные, по которым получен отчет
        method: hessian | gmm_sandwich

    Returns:
        FitReport: копия отчета с заполненными std_errors
    """
    if not report.converged:
        logger.warning("Стандартные ошибки для несошедшейся оценки")
    names = list(report.estimates)
    theta = np.array([report.estimates[k] for k in names])

    if method == "hessian":
        if report.method == "gmm":
            raise InvalidParameterError("метод hessian требует оценку по правдоподобию")
        problem = _make_problem(
            series, report.model, get_family(report.family), report.extras.get("lambda0"),
            report.extras.get("symmetric", False), report.extras.get("first_type"),
        )
        se, warnings = hessian_std_errors(problem.loglik, theta)
    elif method == "gmm_sandwich":
        if report.method != "gmm":
            raise InvalidParameterError("метод gmm_sandwich требует оценку GMM")
        problem = _GmmProblem(series, report.extras["spec"], report.extras.get("lambda0"))
        se, warnings = gmm_sandwich_std_errors(
            problem.mean_moments, problem.moments(theta), report.extras["weight_matrix"], theta
        )
    else:
        raise InvalidParameterError(f"неизвестный метод стандартных ошибок: {method}")
    return report.with_std_errors(dict(zip(names, map(float, se))), warnings)
