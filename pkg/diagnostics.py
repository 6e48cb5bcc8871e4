"""Диагностика остатков: гистограммы, Q-Q, KS-тест, доли хвостов"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from exceptions import InputError
from residuals import ResidualDistribution, UnitExponential

logger = logging.getLogger(__name__)

DEFAULT_PROBS = np.linspace(0.01, 0.99, 99)


@dataclass(frozen=True)
class KsResult:
    statistic: float
    pvalue: float
    n: int

    def to_dict(self):
        return {"statistic": self.statistic, "pvalue": self.pvalue, "n": self.n}


def _values(values) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise InputError("пустая выборка")
    if not np.all(np.isfinite(values)):
        raise InputError("выборка содержит NaN или бесконечность")
    return values


def histogram_table(values, bins: Union[int, np.ndarray] = 50, upper: Optional[float] = None) -> pd.DataFrame:
    """
    Данные для гистограммы

    Returns:
        pd.DataFrame: left, right, count, density
    """
    values = _values(values)
    rng = None if upper is None else (0.0, float(upper))
    counts, edges = np.histogram(values, bins=bins, range=rng)
    widths = np.diff(edges)
    return pd.DataFrame(
        {"left": edges[:-1], "right": edges[1:], "count": counts, "density": counts / (values.size * widths)}
    )


def qq_table(values, dist: Optional[ResidualDistribution] = None, probs=None) -> pd.DataFrame:
    """Эмпирические и теоретические квантили на сетке вероятностей (по умолчанию 1%..99%)"""
    values = _values(values)
    dist = dist or UnitExponential()
    probs = DEFAULT_PROBS if probs is None else np.asarray(probs, dtype=np.float64)
    return pd.DataFrame(
        {
            "prob": probs,
            "empirical": np.quantile(values, probs),
            "theoretical": dist.quantile(probs),
        }
    )


def max_quantile_gap(table: pd.DataFrame) -> float:
    return float(np.max(np.abs(table["empirical"].to_numpy() - table["theoretical"].to_numpy())))


def ks_test(values, dist: Optional[ResidualDistribution] = None) -> KsResult:
    """Критерий Колмогорова-Смирнова против непрерывного распределения остатков"""
    values = _values(values)
    dist = dist or UnitExponential()
    result = stats.kstest(values, dist.cdf)
    logger.debug(f"KS: D={result.statistic:.5f}, p={result.pvalue:.4g}, n={values.size}")
    return KsResult(float(result.statistic), float(result.pvalue), int(values.size))


def tail_fractions(values, below: float, above: float) -> Tuple[float, float]:
    """Доли значений строго ниже below и строго выше above"""
    values = _values(values)
    return float(np.mean(values < below)), float(np.mean(values > above))


def exceedance_share(values, threshold: float = 5.0) -> float:
    """Доля остатков больше порога; для Exp(1) и порога 5 это exp(-5) ~ 0.67%"""
    return float(np.mean(_values(values) > threshold))
