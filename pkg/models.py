"""Общие типы значений flexhawkes и их сохранение в CSV/JSON"""

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from exceptions import InputError, InvalidParameterError, StabilityError

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12f"


@dataclass(frozen=True)
class ExcitationParams:
    """Параметры возбуждения одномерной модели: базовая интенсивность mu, скачок alpha, затухание beta"""

    mu: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("mu", "alpha", "beta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidParameterError(f"{name} должен быть положительным, получено {value}")
        # эвристическое условие стационарности
        if self.alpha >= self.beta:
            raise StabilityError(f"требуется alpha < beta, получено alpha={self.alpha}, beta={self.beta}")

    @property
    def branching_ratio(self) -> float:
        return self.alpha / self.beta

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.alpha, self.beta], dtype=np.float64)

    def to_dict(self) -> Dict[str, float]:
        return {"mu": float(self.mu), "alpha": float(self.alpha), "beta": float(self.beta)}


@dataclass(frozen=True, eq=False)
class MvExcitationParams:
    """
    Параметры m-мерной модели

    Args:
        mu: базовые интенсивности, длина m
        alpha: матрица m x m, alpha[i][j] - возбуждение типа i событием типа j
        beta: скорости затухания, длина m
        symmetric: ограничение alpha11 = alpha22, alpha12 = alpha21 (только m = 2)
    """

    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)

        m = mu.shape[0]
        if mu.ndim != 1 or beta.shape != (m,) or alpha.shape != (m, m):
            raise InvalidParameterError(
                f"несогласованные размерности: mu {mu.shape}, alpha {alpha.shape}, beta {beta.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(mu > 0)):
            raise InvalidParameterError(f"mu должны быть положительными: {mu.tolist()}")
        if not (np.all(np.isfinite(beta)) and np.all(beta > 0)):
            raise InvalidParameterError(f"beta должны быть положительными: {beta.tolist()}")
        # нулевые alpha допустимы: развязанные типы и пуассоновский предел
        if not (np.all(np.isfinite(alpha)) and np.all(alpha >= 0)):
            raise InvalidParameterError(f"alpha должны быть неотрицательными: {alpha.tolist()}")
        if self.symmetric:
            if m != 2:
                raise InvalidParameterError("симметричное ограничение определено только для m = 2")
            if not (np.isclose(alpha[0, 0], alpha[1, 1]) and np.isclose(alpha[0, 1], alpha[1, 0])):
                raise InvalidParameterError(f"нарушено ограничение симметрии alpha: {alpha.tolist()}")
        rho = self.spectral_radius()
        if rho >= 1.0:
            raise StabilityError(f"спектральный радиус alpha_ij/beta_i = {rho:.6g} >= 1")

    @property
    def m(self) -> int:
        return int(self.mu.shape[0])

    def branching_matrix(self) -> np.ndarray:
        return self.alpha / self.beta[:, None]

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.branching_matrix()))))

    def permuted(self, perm: Sequence[int]) -> "MvExcitationParams":
        """Параметры после перестановки меток типов: новый тип k = старый тип perm[k]"""
        p = np.asarray(perm, dtype=np.int64)
        return MvExcitationParams(
            mu=self.mu[p], alpha=self.alpha[np.ix_(p, p)], beta=self.beta[p], symmetric=self.symmetric
        )

    @classmethod
    def from_univariate(cls, params: ExcitationParams) -> "MvExcitationParams":
        return cls(mu=[params.mu], alpha=[[params.alpha]], beta=[params.beta])

    @classmethod
    def symmetric_pair(cls, mu: float, beta: float, alpha_self: float, alpha_cross: float) -> "MvExcitationParams":
        return cls(
            mu=[mu, mu],
            alpha=[[alpha_self, alpha_cross], [alpha_cross, alpha_self]],
            beta=[beta, beta],
            symmetric=True,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"mu": self.mu.tolist(), "alpha": self.alpha.tolist(), "beta": self.beta.tolist()}


@dataclass(frozen=True, eq=False)
class EventSeries:
    """
    Последовательность событий: времена, типы и необязательные метки (размеры скачков)

    Args:
        times: строго возрастающие времена в секундах
        types: типы событий в [0, m); по умолчанию все нули
        marks: положительные метки той же длины или None
        origin: время опорного события, от которого отсчитывается первый интервал
        horizon: конец окна наблюдения; по умолчанию время последнего события
        n_types: число типов m, если часть типов не встречается в данных
    """

    times: np.ndarray
    types: Optional[np.ndarray] = None
    marks: Optional[np.ndarray] = None
    origin: float = 0.0
    horizon: Optional[float] = None
    n_types: Optional[int] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).ravel()
        n = times.shape[0]
        types = np.zeros(n, dtype=np.int64) if self.types is None else np.asarray(self.types, dtype=np.int64).ravel()
        marks = None if self.marks is None else np.asarray(self.marks, dtype=np.float64).ravel()

        if types.shape[0] != n:
            raise InputError(f"длина types ({types.shape[0]}) не совпадает с длиной times ({n})")
        if marks is not None and marks.shape[0] != n:
            raise InputError(f"длина marks ({marks.shape[0]}) не совпадает с длиной times ({n})")
        if n and not np.all(np.isfinite(times)):
            raise InputError("времена событий содержат нечисловые значения")
        if n and times[0] < self.origin:
            raise InputError(f"первое событие {times[0]} раньше начала отсчета {self.origin}")
        if n > 1:
            bad = np.flatnonzero(np.diff(times) <= 0)
            if bad.size:
                raise InputError(f"времена событий не строго возрастают (индекс {int(bad[0]) + 1})")
        if n and types.min() < 0:
            raise InputError("типы событий должны быть неотрицательными")
        if marks is not None and n and not np.all(marks > 0):
            raise InputError("метки должны быть положительными")

        m = self.n_types if self.n_types is not None else (int(types.max()) + 1 if n else 1)
        if n and types.max() >= m:
            raise InputError(f"тип {int(types.max())} вне диапазона [0, {m})")
        horizon = self.horizon
        if horizon is None:
            horizon = float(times[-1]) if n else float(self.origin)
        elif n and horizon < times[-1]:
            raise InputError(f"horizon {horizon} раньше последнего события {times[-1]}")

        object.__setattr__(self, "times", times)
        object.__setattr__(self, "types", types)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "horizon", float(horizon))
        object.__setattr__(self, "n_types", int(m))

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def m(self) -> int:
        return int(self.n_types)

    @property
    def duration(self) -> float:
        return float(self.horizon - self.origin)

    def inter_arrivals(self) -> np.ndarray:
        """Интервалы между событиями; первый отсчитывается от origin"""
        return np.diff(self.times, prepend=self.origin)

    def counts(self) -> np.ndarray:
        return np.bincount(self.types, minlength=self.m)

    def select_until(self, t: float) -> "EventSeries":
        """События с временем <= t, окно наблюдения обрезается до t"""
        k = int(np.searchsorted(self.times, t, side="right"))
        return EventSeries(
            times=self.times[:k],
            types=self.types[:k],
            marks=None if self.marks is None else self.marks[:k],
            origin=self.origin,
            horizon=max(float(t), self.origin),
            n_types=self.n_types,
        )

    def of_type(self, i: int) -> np.ndarray:
        return self.times[self.types == i]


@dataclass(frozen=True)
class StoppingRule:
    """Правило остановки симуляции: либо число событий, либо горизонт по времени"""

    max_events: Optional[int] = None
    horizon: Optional[float] = None

    def __post_init__(self):
        if (self.max_events is None) == (self.horizon is None):
            raise InvalidParameterError("нужно задать ровно одно из max_events / horizon")
        if self.max_events is not None and self.max_events < 0:
            raise InvalidParameterError(f"max_events должен быть неотрицательным: {self.max_events}")
        if self.horizon is not None and not self.horizon > 0:
            raise InvalidParameterError(f"horizon должен быть положительным: {self.horizon}")

    @classmethod
    def events(cls, n: int) -> "StoppingRule":
        return cls(max_events=int(n))

    @classmethod
    def until(cls, t: float) -> "StoppingRule":
        return cls(horizon=float(t))


@dataclass(frozen=True, eq=False)
class LambdaPath:
    """
    Дискретное состояние lambda_n после каждого события (не условная интенсивность)

    values имеет форму (N,) для одномерной модели и (N, m) для многомерной
    """

    lambda0: Union[float, np.ndarray]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if np.ndim(self.lambda0):
            object.__setattr__(self, "lambda0", np.asarray(self.lambda0, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def above(self, mu) -> bool:
        return bool(np.all(self.values > np.asarray(mu)))

    def column(self, i: int) -> "LambdaPath":
        return LambdaPath(lambda0=float(np.atleast_1d(self.lambda0)[i]), values=self.values[:, i])


@dataclass(frozen=True)
class GmmSpec:
    """
    Настройки GMM

    Args:
        weight_stage: identity - один шаг с единичной матрицей, two_step - обновление весов
        moments: lagged - три условия с лагом, lagged_mean - плюс E[eps_n - 1] = 0
        scale: общий множитель моментов
    """

    weight_stage: str = "two_step"
    moments: str = "lagged"
    scale: float = 1.0

    def __post_init__(self):
        if self.weight_stage not in ("identity", "two_step"):
            raise InvalidParameterError(f"неизвестная схема весов: {self.weight_stage}")
        if self.moments not in ("lagged", "lagged_mean"):
            raise InvalidParameterError(f"неизвестный набор моментов: {self.moments}")
        if not self.scale > 0:
            raise InvalidParameterError(f"scale должен быть положительным: {self.scale}")

    @property
    def n_moments(self) -> int:
        return 3 if self.moments == "lagged" else 4


@dataclass(frozen=True, eq=False)
class FitReport:
    """Результат оценивания"""

    model: str
    method: str
    family: str
    estimates: Dict[str, float]
    std_errors: Dict[str, float]
    objective: float
    loglik: Optional[float]
    residuals: Any
    converged: bool
    iterations: int
    n_events: int
    history: np.ndarray = field(default_factory=lambda: np.empty(0))
    warnings: List[str] = field(default_factory=list)
    params: Any = None
    dists: Any = None
    extras: Dict[str, Any] = field(default_factory=dict)

    def with_std_errors(self, std_errors: Dict[str, float], warnings: Sequence[str] = ()) -> "FitReport":
        return replace(self, std_errors=dict(std_errors), warnings=list(self.warnings) + list(warnings))

    def to_dict(self) -> Dict[str, Any]:
        def _clean(value):
            value = float(value)
            return None if not np.isfinite(value) else value

        return {
            "model": self.model,
            "method": self.method,
            "family": self.family,
            "estimates": {k: _clean(v) for k, v in self.estimates.items()},
            "std_errors": {k: _clean(v) for k, v in self.std_errors.items()},
            "objective": _clean(self.objective),
            "loglik": None if self.loglik is None else _clean(self.loglik),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "n_events": int(self.n_events),
            "warnings": list(self.warnings),
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)


# ---------------------------------------------------------------------------
# Сохранение и загрузка
# ---------------------------------------------------------------------------

def write_event_series_csv(series: EventSeries, path: Union[str, Path]) -> Path:
    """
    Записывает события в CSV с заголовком time,type,mark

    Args:
        series: последовательность событий
        path: путь к файлу

    Returns:
        Path: путь к записанному файлу
    """
    path = Path(path)
    frame = pd.DataFrame(
        {
            "time": series.times,
            "type": series.types,
            "mark": series.marks if series.marks is not None else np.full(len(series), np.nan),
        }
    )
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="")
    logger.info(f"Записано {len(series)} событий в {path}")
    return path


def read_event_series_csv(
    path: Union[str, Path], origin: float = 0.0, horizon: Optional[float] = None, n_types: Optional[int] = None
) -> EventSeries:
    """Читает события из CSV time,type,mark"""
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except Exception as e:
        logger.error(f"Ошибка при чтении событий из {path}: {e}")
        raise InputError(f"не удалось прочитать {path}: {e}") from e

    if "time" not in frame.columns:
        raise InputError(f"в {path} нет столбца time")
    types = frame["type"].to_numpy(dtype=np.int64) if "type" in frame.columns else None
    marks = None
    if "mark" in frame.columns and frame["mark"].notna().any():
        if frame["mark"].isna().any():
            raise InputError(f"в {path} метки заданы не для всех событий")
        marks = frame["mark"].to_numpy(dtype=np.float64)
    return EventSeries(
        times=frame["time"].to_numpy(dtype=np.float64),
        types=types,
        marks=marks,
        origin=origin,
        horizon=horizon,
        n_types=n_types,
    )


def write_column_csv(values, path: Union[str, Path], header: str) -> Path:
    """Записывает одностолбцовый CSV (остатки - epsilon, состояние - lambda)"""
    path = Path(path)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        frame = pd.DataFrame(values, columns=[f"{header}_{i}" for i in range(values.shape[1])])
    else:
        frame = pd.DataFrame({header: values})
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_column_csv(path: Union[str, Path], header: str = "epsilon") -> np.ndarray:
    frame = pd.read_csv(path)
    if header not in frame.columns:
        raise InputError(f"в {path} нет столбца {header}")
    return frame[header].to_numpy(dtype=np.float64)


def write_residuals_csv(residuals, path: Union[str, Path]) -> Path:
    return write_column_csv(residuals, path, "epsilon")


def read_residuals_csv(path: Union[str, Path]) -> np.ndarray:
    return read_column_csv(path, "epsilon")


def write_lambda_csv(path_values: LambdaPath, path: Union[str, Path]) -> Path:
    return write_column_csv(path_values.values, path, "lambda")


def params_from_dict(data: Dict[str, Any]) -> Union[ExcitationParams, MvExcitationParams]:
    """Одномерные параметры, если mu - число, иначе многомерные"""
    try:
        if np.ndim(data["mu"]) == 0:
            return ExcitationParams(mu=float(data["mu"]), alpha=float(data["alpha"]), beta=float(data["beta"]))
        return MvExcitationParams(
            mu=data["mu"], alpha=data["alpha"], beta=data["beta"], symmetric=bool(data.get("symmetric", False))
        )
    except KeyError as e:
        raise InputError(f"в параметрах нет поля {e}") from e


def write_json(data: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Ошибка при чтении {path}: {e}")
        raise InputError(f"не удалось прочитать {path}: {e}") from e


def write_params_json(params, path: Union[str, Path]) -> Path:
    return write_json(params.to_dict(), path)


def read_params_json(path: Union[str, Path]) -> Union[ExcitationParams, MvExcitationParams]:
    return params_from_dict(read_json(path))
