"""
Семейство распределений остатков eps (положительный носитель, среднее 1)

Варианты: UnitExponential, Gamma, TrapezoidExp (трапеция на [0, a) + экспоненциальный хвост), Empirical.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

import config
from exceptions import InvalidParameterError, InvalidTrapezoidParameters, NoDensityError

logger = logging.getLogger(__name__)

MEAN_TOL = 1e-8


class ResidualDistribution:
    """Базовый класс распределения остатков. Значения неизменяемы после создания"""

    name = "base"
    has_density = True

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def logpdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def logsf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.sf(x))

    def quantile(self, q):
        raise NotImplementedError

    def hazard(self, x):
        """f(x) / (1 - F(x)); inf там, где функция выживания обнулилась"""
        with np.errstate(over="ignore", invalid="ignore"):
            return np.exp(self.logpdf(x) - self.logsf(x))

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(rng.random(size))

    def mean(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.name}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "family")
        return f"{type(self).__name__}({args})"


class UnitExponential(ResidualDistribution):
    name = "exp"

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x >= 0, np.exp(-np.maximum(x, 0.0)), 0.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        # ровно -x: совпадение с логарифмом правдоподобия процесса Хоукса
        return np.where(x >= 0, -x, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -np.expm1(-np.maximum(x, 0.0))

    def sf(self, x):
        return np.exp(-np.maximum(np.asarray(x, dtype=np.float64), 0.0))

    def logsf(self, x):
        return -np.maximum(np.asarray(x, dtype=np.float64), 0.0)

    def quantile(self, q):
        return -np.log1p(-np.asarray(q, dtype=np.float64))

    def hazard(self, x):
        return np.ones_like(np.asarray(x, dtype=np.float64))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.standard_exponential(size)

    def mean(self) -> float:
        return 1.0


class Gamma(ResidualDistribution):
    """Гамма-распределение с параметрами формы и масштаба"""

    name = "gamma"

    def __init__(self, shape: float, scale: Optional[float] = None):
        if scale is None:
            scale = 1.0 / shape
        if not (np.isfinite(shape) and shape > 0 and np.isfinite(scale) and scale > 0):
            raise InvalidParameterError(f"параметры гамма-распределения должны быть положительными: {shape}, {scale}")
        self.shape = float(shape)
        self.scale = float(scale)
        self._log_norm = special.gammaln(self.shape) + self.shape * np.log(self.scale)

    @classmethod
    def unit_mean(cls, shape: float) -> "Gamma":
        return cls(shape, 1.0 / shape)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = special.xlogy(self.shape - 1.0, x) - x / self.scale - self._log_norm
        return np.where(x >= 0, out, -np.inf)

    def cdf(self, x):
        return special.gammainc(self.shape, np.maximum(np.asarray(x, dtype=np.float64), 0.0) / self.scale)

    def sf(self, x):
        return special.gammaincc(self.shape, np.maximum(np.asarray(x, dtype=np.float64), 0.0) / self.scale)

    def logsf(self, x):
        return stats.gamma.logsf(np.asarray(x, dtype=np.float64), self.shape, scale=self.scale)

    def quantile(self, q):
        return special.gammaincinv(self.shape, np.asarray(q, dtype=np.float64)) * self.scale

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size)

    def mean(self) -> float:
        return self.shape * self.scale

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.name, "shape": self.shape, "scale": self.scale}


class TrapezoidShape(NamedTuple):
    p: float
    c: float
    valid: bool


def trapezoid_params(a: float, ell: float, strict: bool = False) -> TrapezoidShape:
    """
    Производные величины трапециевидно-экспоненциальной плотности

    p = (6l - 2al) / (a^2 l^2 + 4al + 6) - масса экспоненциального хвоста,
    c = (2 - 2p - pal) / a - значение плотности в нуле.

    Args:
        a: ширина трапециевидного участка
        ell: скорость экспоненциального хвоста
        strict: бросать InvalidTrapezoidParameters вне допустимой области

    Returns:
        TrapezoidShape: (p, c, valid), valid = 0 < p <= 1 и c >= 0
    """
    if not (a > 0 and ell > 0):
        raise InvalidParameterError(f"a и ell должны быть положительными: a={a}, ell={ell}")
    al = a * ell
    den = al * al + 4.0 * al + 6.0
    p = (6.0 * ell - 2.0 * al) / den
    # раскрытая форма (2 - 2p - pal)/a без потери точности при a -> 0
    c = (4.0 * al * ell + 12.0 * ell - 6.0 * ell * ell) / den + 12.0 * (1.0 - ell) / (a * den)
    valid = bool(0.0 < p <= 1.0 and c >= 0.0)
    if strict and not valid:
        raise InvalidTrapezoidParameters(a, ell, p, c)
    return TrapezoidShape(float(p), float(c), valid)


class TrapezoidExp(ResidualDistribution):
    """Линейная плотность ((pl - c)/a) x + c на [0, a), затем p l exp(-l (x - a))"""

    name = "trapezoid"

    def __init__(self, a: float, ell: float):
        p, c, _ = trapezoid_params(a, ell, strict=True)
        self.a = float(a)
        self.ell = float(ell)
        self.p = p
        self.c = c
        self.slope = (p * ell - c) / a

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        linear = self.slope * x + self.c
        tail = self.p * self.ell * np.exp(-self.ell * np.maximum(x - self.a, 0.0))
        return np.where(x < 0, 0.0, np.where(x < self.a, linear, tail))

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore"):
            linear = np.log(np.maximum(self.slope * x + self.c, 0.0))
        tail = np.log(self.p * self.ell) - self.ell * (x - self.a)
        return np.where(x < 0, -np.inf, np.where(x < self.a, linear, tail))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        xc = np.clip(x, 0.0, self.a)
        linear = 0.5 * self.slope * xc * xc + self.c * xc
        tail = 1.0 - self.p * np.exp(-self.ell * np.maximum(x - self.a, 0.0))
        return np.where(x < self.a, linear, tail)

    def sf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x < self.a, 1.0 - self.cdf(x), self.p * np.exp(-self.ell * np.maximum(x - self.a, 0.0)))

    def logsf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore"):
            head = np.log(np.maximum(1.0 - self.cdf(np.minimum(x, self.a)), 0.0))
        return np.where(x < self.a, head, np.log(self.p) - self.ell * (x - self.a))

    def quantile(self, q):
        q = np.asarray(q, dtype=np.float64)
        head_mass = 1.0 - self.p
        qh = np.minimum(q, head_mass)
        disc = np.maximum(self.c * self.c + 2.0 * self.slope * qh, 0.0)
        # корень (slope/2) x^2 + c x = q в устойчивой форме
        with np.errstate(divide="ignore", invalid="ignore"):
            head = np.where(qh > 0, 2.0 * qh / (self.c + np.sqrt(disc)), 0.0)
            tail = self.a - np.log((1.0 - q) / self.p) / self.ell
        return np.where(q <= head_mass, head, tail)

    def mean(self) -> float:
        a, ell, p, c = self.a, self.ell, self.p, self.c
        return self.slope * a**3 / 3.0 + c * a * a / 2.0 + p * (a + 1.0 / ell)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.name, "a": self.a, "ell": self.ell, "p": self.p, "c": self.c}


class Empirical(ResidualDistribution):
    """Эмпирическое распределение: ступенчатая CDF и выборка с возвращением"""

    name = "empirical"
    has_density = False

    def __init__(self, samples: Sequence[float]):
        values = np.asarray(samples, dtype=np.float64).ravel()
        if values.size == 0:
            raise InvalidParameterError("эмпирическое распределение требует непустую выборку")
        if not np.all(values > 0):
            raise InvalidParameterError("все значения эмпирической выборки должны быть положительными")
        self.samples = values
        self._sorted = np.sort(values)

    def pdf(self, x):
        raise NoDensityError("no closed-form density: эмпирическое распределение не имеет плотности")

    def logpdf(self, x):
        raise NoDensityError("no closed-form density: эмпирическое распределение не имеет плотности")

    def hazard(self, x):
        raise NoDensityError("no closed-form density: эмпирическое распределение не имеет плотности")

    def cdf(self, x):
        return np.searchsorted(self._sorted, np.asarray(x, dtype=np.float64), side="right") / self._sorted.size

    def quantile(self, q):
        return np.quantile(self._sorted, q, method="inverted_cdf")

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.samples, size=size, replace=True)

    def mean(self) -> float:
        return float(self.samples.mean())

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.name, "n_samples": int(self.samples.size)}


# ---------------------------------------------------------------------------
# Функциональный интерфейс
# ---------------------------------------------------------------------------

def pdf(dist: ResidualDistribution, x):
    return dist.pdf(x)


def cdf(dist: ResidualDistribution, x):
    return dist.cdf(x)


def quantile(dist: ResidualDistribution, q):
    return dist.quantile(q)


def sample(dist: ResidualDistribution, rng: np.random.Generator, size=None):
    return dist.sample(rng, size)


def require_density(dist: ResidualDistribution) -> None:
    if not dist.has_density:
        raise NoDensityError(f"{dist.name}: оценивание по правдоподобию невозможно без плотности")


def validate_for_model(dist: ResidualDistribution) -> ResidualDistribution:
    """Проверка условия E[eps] = 1 для использования в модели"""
    if isinstance(dist, Empirical):
        return dist
    mean = dist.mean()
    if abs(mean - 1.0) > MEAN_TOL:
        raise InvalidParameterError(f"{dist!r}: среднее остатков {mean:.10g} != 1")
    return dist


def from_dict(data: Dict[str, Any]) -> ResidualDistribution:
    family = data.get("family", "exp")
    if family == "exp":
        return UnitExponential()
    if family == "gamma":
        return Gamma(float(data["shape"]), data.get("scale"))
    if family == "trapezoid":
        return TrapezoidExp(float(data["a"]), float(data["ell"]))
    raise InvalidParameterError(f"неизвестное семейство остатков: {family}")


# ---------------------------------------------------------------------------
# Параметризация семейств для оценивания
# ---------------------------------------------------------------------------

def _trapezoid_violation(raw: np.ndarray) -> float:
    p, c, valid = trapezoid_params(float(raw[0]), float(raw[1]))
    if valid:
        return 0.0
    return max(p - 1.0, 0.0) + max(-p, 0.0) + max(-c, 0.0)


@dataclass(frozen=True)
class ResidualFamily:
    """
    Семейство остатков в координатах оптимизатора

    Параметры хранятся в логарифмах; build() строит распределение из исходных значений,
    violation() возвращает меру выхода из допустимой области (0 внутри).
    """

    name: str
    param_names: Tuple[str, ...]
    initial: Tuple[float, ...]
    factory: Callable[..., ResidualDistribution]
    violation: Callable[[np.ndarray], float] = lambda raw: 0.0

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def to_unconstrained(self, raw) -> np.ndarray:
        return np.log(np.asarray(raw, dtype=np.float64))

    def from_unconstrained(self, z) -> np.ndarray:
        return np.exp(np.asarray(z, dtype=np.float64))

    def build(self, raw) -> ResidualDistribution:
        return self.factory(*[float(v) for v in np.atleast_1d(raw)])

    def penalty(self, raw) -> float:
        if not self.n_params:
            return 0.0
        raw = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
            return config.OPT_PENALTY
        v = self.violation(raw)
        return config.OPT_PENALTY * (1.0 + v) if v > 0 else 0.0


FAMILIES: Dict[str, ResidualFamily] = {
    "exp": ResidualFamily("exp", (), (), lambda: UnitExponential()),
    "gamma": ResidualFamily("gamma", ("shape",), (1.0,), Gamma.unit_mean),
    # a мало, ell = 1: почти экспоненциальная точка
    "trapezoid": ResidualFamily("trapezoid", ("a", "ell"), (0.05, 1.0), TrapezoidExp, _trapezoid_violation),
}


def get_family(name: str) -> ResidualFamily:
    try:
        return FAMILIES[name]
    except KeyError:
        if name == "empirical":
            raise NoDensityError("эмпирические остатки не поддерживают оценивание по правдоподобию (используйте GMM или FHS)")
        raise InvalidParameterError(f"неизвестное семейство остатков: {name}; доступны {sorted(FAMILIES)}")


def family_params(dist: ResidualDistribution) -> np.ndarray:
    """Параметры распределения в порядке ResidualFamily.param_names"""
    if isinstance(dist, Gamma):
        return np.array([dist.shape])
    if isinstance(dist, TrapezoidExp):
        return np.array([dist.a, dist.ell])
    return np.empty(0)
