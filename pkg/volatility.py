"""
Волатильность Хоукса для двумерной модели с независимыми метками и Монте-Карло оценка для сверки

Моментные уравнения:
    E[lambda] = (beta - alpha)^{-1} beta mu
    (alpha - beta) X + X (alpha - beta)' + alpha Dg(E[lambda]) alpha' = 0
    B (alpha - beta)' + Z' o S + Dg(E[lambda]) (alpha o Z)' - Dg(Z) E[lambda] E[lambda]' = 0
    Hvol_t = sqrt(u' [Z o B + (Z o B)' + Z2 o Dg(E[lambda])] u t),  u = (1, -1)'

Интерпретация centered: X - ковариация lambda, в уравнение для B подставляется S = X + E[lambda] E[lambda]'.
Интерпретация literal: S = X.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

import config
from exceptions import InputError, InvalidParameterError, NegativeQuadraticFormError, SingularSystemError
from models import EventSeries, MvExcitationParams, StoppingRule
from multivariate import Dists, simulate_mv
from univariate import map_paths

logger = logging.getLogger(__name__)

INTERPRETATIONS = ("centered", "literal")
SINGULAR_COND = 1e12


@dataclass(frozen=True, eq=False)
class MarkMoments:
    """Первые и вторые моменты размеров скачков по типам"""

    mean: np.ndarray
    second: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        second = np.asarray(self.second, dtype=np.float64)
        if mean.shape != second.shape or mean.ndim != 1:
            raise InvalidParameterError("mean и second должны быть векторами одной длины")
        if not (np.all(mean > 0) and np.all(second > 0)):
            raise InvalidParameterError("моменты меток должны быть положительными")
        if np.any(second < mean**2 * (1.0 - 1e-12)):
            raise InvalidParameterError(f"второй момент меньше квадрата среднего: {second.tolist()} < {(mean**2).tolist()}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "second", second)

    @classmethod
    def unit(cls, m: int = 2) -> "MarkMoments":
        return cls(np.ones(m), np.ones(m))

    @classmethod
    def from_marks(cls, series: EventSeries, m: int = 2) -> "MarkMoments":
        """Выборочные моменты меток по типам (без меток - единичные)"""
        if series.marks is None:
            return cls.unit(m)
        mean, second = np.empty(m), np.empty(m)
        for i in range(m):
            z = series.marks[series.types == i]
            if z.size == 0:
                raise InputError(f"нет событий типа {i} для оценки моментов меток")
            mean[i], second[i] = z.mean(), np.mean(z * z)
        return cls(mean, second)

    def scaled(self, kappa: float) -> "MarkMoments":
        return MarkMoments(self.mean * kappa, self.second * kappa**2)

    @property
    def zbar(self) -> np.ndarray:
        """Z: каждая строка равна (E z_1, ..., E z_m)"""
        return np.tile(self.mean, (self.mean.shape[0], 1))

    @property
    def zbar2(self) -> np.ndarray:
        return np.tile(self.second, (self.second.shape[0], 1))


@dataclass(frozen=True, eq=False)
class VolatilitySolution:
    expected_lambda: np.ndarray
    lambda_second: np.ndarray
    B: np.ndarray
    hvol: float
    t: float
    interpretation: str
    params: MvExcitationParams
    marks: MarkMoments

    def second_moment_used(self) -> np.ndarray:
        return _consumed_second_moment(self.lambda_second, self.expected_lambda, self.interpretation)

    def residuals(self) -> Dict[str, float]:
        """Нормы Фробениуса невязок трех моментных уравнений"""
        p, m = self.params, self.expected_lambda
        beta = np.diag(p.beta)
        a = p.alpha - beta
        x = self.lambda_second
        return {
            "expected_lambda": float(np.linalg.norm((beta - p.alpha) @ m - beta @ p.mu)),
            "lyapunov": float(np.linalg.norm(a @ x + x @ a.T + p.alpha @ np.diag(m) @ p.alpha.T)),
            "B": float(np.linalg.norm(_b_equation(self.B, p, self.marks, m, self.second_moment_used()))),
        }

    def to_dict(self) -> Dict[str, object]:
        return {
            "expected_lambda": self.expected_lambda.tolist(),
            "lambda_second": self.lambda_second.tolist(),
            "B": self.B.tolist(),
            "hvol": self.hvol,
            "t": self.t,
            "interpretation": self.interpretation,
        }


def _check_interpretation(interpretation: Optional[str]) -> str:
    interpretation = interpretation or config.VOL_INTERPRETATION
    if interpretation not in INTERPRETATIONS:
        raise InvalidParameterError(f"неизвестная интерпретация моментов: {interpretation}")
    return interpretation


def _guarded_solve(matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(matrix)) or np.linalg.cond(matrix) > SINGULAR_COND:
        logger.error(f"Вырожденная система: {what}")
        raise SingularSystemError(f"{what}: система вырождена (нарушено условие стационарности)")
    return np.linalg.solve(matrix, rhs)


def expected_lambda(params: MvExcitationParams) -> np.ndarray:
    """E[lambda] = (beta - alpha)^{-1} beta mu"""
    beta = np.diag(params.beta)
    return _guarded_solve(
        beta - params.alpha, beta @ params.mu,
        "beta - alpha (требуется спектральный радиус alpha_ij/beta_i < 1)",
    )


def lambda_second_moment(params: MvExcitationParams, expected: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Симметричное решение уравнения Ляпунова (alpha - beta) X + X (alpha - beta)' + alpha Dg(E[lambda]) alpha' = 0

    Решается линеаризацией (I kron A + A kron I) vec(X) = -vec(Q).
    """
    expected = expected_lambda(params) if expected is None else np.asarray(expected, dtype=np.float64)
    m = params.m
    a = params.alpha - np.diag(params.beta)
    q = params.alpha @ np.diag(expected) @ params.alpha.T
    eye = np.eye(m)
    system = np.kron(eye, a) + np.kron(a, eye)
    vec = _guarded_solve(system, -q.reshape(-1, order="F"), "уравнение Ляпунова")
    x = vec.reshape(m, m, order="F")
    return 0.5 * (x + x.T)


def _consumed_second_moment(x: np.ndarray, expected: np.ndarray, interpretation: str) -> np.ndarray:
    return x + np.outer(expected, expected) if interpretation == "centered" else x


def _b_equation(b, params: MvExcitationParams, marks: MarkMoments, expected, second) -> np.ndarray:
    zbar = marks.zbar
    a = params.alpha - np.diag(params.beta)
    return (
        b @ a.T
        + zbar.T * second
        + np.diag(expected) @ (params.alpha * zbar).T
        - np.diag(marks.mean) @ np.outer(expected, expected)
    )


def solve_B(
    params: MvExcitationParams,
    marks: MarkMoments,
    expected: np.ndarray,
    lambda_second: np.ndarray,
    interpretation: Optional[str] = None,
) -> np.ndarray:
    """B = [Dg(Z) E E' - Z' o S - Dg(E)(alpha o Z)'] ((alpha - beta)')^{-1}"""
    interpretation = _check_interpretation(interpretation)
    expected = np.asarray(expected, dtype=np.float64)
    second = _consumed_second_moment(np.asarray(lambda_second, dtype=np.float64), expected, interpretation)
    zbar = marks.zbar
    rhs = (
        np.diag(marks.mean) @ np.outer(expected, expected)
        - zbar.T * second
        - np.diag(expected) @ (params.alpha * zbar).T
    )
    a = params.alpha - np.diag(params.beta)
    # B a' = rhs  <=>  a B' = rhs'
    return _guarded_solve(a, rhs.T, "(alpha - beta)'").T


def _quadratic_form(params, marks, expected, b) -> float:
    zb = marks.zbar * b
    matrix = zb + zb.T + marks.zbar2 * np.diag(expected)
    u = np.array([1.0, -1.0])
    value = float(u @ matrix @ u)
    if value < 0:
        if value > -1e-12 * np.abs(matrix).max():
            return 0.0
        logger.error(f"Отрицательная квадратичная форма: {value}")
        raise NegativeQuadraticFormError(value, matrix)
    return value


def solve_volatility(
    params: MvExcitationParams, marks: Optional[MarkMoments], t: float, interpretation: Optional[str] = None
) -> VolatilitySolution:
    """
    Полное решение: E[lambda], второй момент, B и Hvol на горизонте t

    Returns:
        VolatilitySolution
    """
    if params.m != 2:
        raise InvalidParameterError("волатильность Хоукса определена для двумерной модели")
    if not t > 0:
        raise InvalidParameterError(f"горизонт должен быть положительным: {t}")
    interpretation = _check_interpretation(interpretation)
    marks = marks or MarkMoments.unit(2)
    expected = expected_lambda(params)
    second = lambda_second_moment(params, expected)
    b = solve_B(params, marks, expected, second, interpretation)
    hvol = float(np.sqrt(_quadratic_form(params, marks, expected, b) * t))
    return VolatilitySolution(
        expected_lambda=expected, lambda_second=second, B=b, hvol=hvol, t=float(t),
        interpretation=interpretation, params=params, marks=marks,
    )


def hawkes_vol(
    params: MvExcitationParams, marks: Optional[MarkMoments], t: float, interpretation: Optional[str] = None
) -> float:
    return solve_volatility(params, marks, t, interpretation).hvol


def weighted_difference(series: EventSeries, t: float) -> float:
    """Сумма меток событий типа 0 минус сумма меток типа 1 на [origin, t]"""
    upto = series.times <= t
    marks = series.marks if series.marks is not None else np.ones(len(series))
    up = marks[upto & (series.types == 0)].sum()
    down = marks[upto & (series.types == 1)].sum()
    return float(up - down)


def empirical_vol(paths: Sequence[EventSeries], t: float) -> float:
    """Выборочное стандартное отклонение взвешенной разности по траекториям"""
    if len(paths) < 2:
        raise InputError("для выборочного стандартного отклонения нужно не меньше двух траекторий")
    diffs = np.array([weighted_difference(p, t) for p in paths])
    return float(np.std(diffs, ddof=1))


def monte_carlo_vol(
    params: MvExcitationParams,
    dists: Dists,
    t: float,
    n_paths: int,
    rng: np.random.Generator,
    mark_pools: Optional[Sequence[np.ndarray]] = None,
    lambda0=None,
    first_type: Optional[int] = None,
    threads: Optional[int] = None,
) -> float:
    """
    Волатильность по симуляции двумерной модели: размеры скачков выбираются с возвращением
    из наблюдавшихся по каждому типу (без пулов - единичные метки)
    """
    if n_paths < 2:
        raise InputError("для Монте-Карло оценки нужно не меньше двух траекторий")
    stop = StoppingRule.until(t)
    pools = None if mark_pools is None else [np.asarray(p, dtype=np.float64) for p in mark_pools]
    if pools is not None and any(p.size == 0 for p in pools):
        raise InputError("пустой пул меток")

    def one_path(child: np.random.Generator) -> float:
        series, _ = simulate_mv(params, dists, lambda0, stop, child, first_type=first_type)
        if pools is None:
            return weighted_difference(series, t)
        marks = np.empty(len(series))
        for i, pool in enumerate(pools):
            own = series.types == i
            marks[own] = child.choice(pool, size=int(own.sum()), replace=True)
        up = marks[series.types == 0].sum()
        down = marks[series.types == 1].sum()
        return float(up - down)

    logger.info(f"Монте-Карло волатильность: {n_paths} траекторий, t={t}")
    diffs = np.asarray(map_paths(one_path, rng, n_paths, threads, desc="mc-vol"))
    return float(np.std(diffs, ddof=1))
