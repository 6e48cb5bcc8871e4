import sys
from pathlib import Path

import numpy as np
import pytest

# Добавляем корневую директорию проекта в sys.path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

import config  # noqa: E402
from models import EventSeries, ExcitationParams, MvExcitationParams, StoppingRule  # noqa: E402
from residuals import Gamma, UnitExponential  # noqa: E402


@pytest.fixture(autouse=True)
def setup_test_env(monkeypatch, tmp_path):
    """Настройка тестового окружения: config уже импортирован, поэтому меняем его атрибуты"""
    monkeypatch.setenv("LOG_LEVEL", "ERROR")
    monkeypatch.setenv("THREADS", "2")
    monkeypatch.setattr(config, "LOG_LEVEL", "ERROR")
    monkeypatch.setattr(config, "THREADS", 2)
    monkeypatch.setattr(config, "OUTPUT_FOLDER", tmp_path / "test_output")


@pytest.fixture
def rng():
    """Генератор с фиксированным зерном"""
    return np.random.default_rng(20240601)


@pytest.fixture
def example_params():
    """Параметры из примеров psi / phi: mu=0.5, alpha=0.5, beta=1"""
    return ExcitationParams(mu=0.5, alpha=0.5, beta=1.0)


@pytest.fixture
def reference_params():
    """mu=0.2, alpha=0.5, beta=0.8"""
    return ExcitationParams(mu=0.2, alpha=0.5, beta=0.8)


@pytest.fixture
def symmetric_params():
    return MvExcitationParams(mu=[1.0, 1.0], alpha=[[0.2, 0.1], [0.1, 0.2]], beta=[1.0, 1.0], symmetric=True)


@pytest.fixture
def hawkes_series(reference_params):
    """10^4 событий экспоненциального процесса Хоукса"""
    from univariate import simulate

    series, _ = simulate(reference_params, UnitExponential(), None, StoppingRule.events(10_000), np.random.default_rng(7))
    return series


@pytest.fixture
def gamma_series(reference_params):
    """10^4 событий гибкой модели с остатками Gamma(2, 0.5)"""
    from univariate import simulate

    series, _ = simulate(reference_params, Gamma.unit_mean(2.0), None, StoppingRule.events(10_000), np.random.default_rng(11))
    return series


@pytest.fixture
def bivariate_series(symmetric_params):
    """Двумерная выборка с экспоненциальными остатками"""
    from multivariate import simulate_mv

    series, _ = simulate_mv(
        symmetric_params, UnitExponential(), None, StoppingRule.events(10_000), np.random.default_rng(13)
    )
    return series


@pytest.fixture
def tiny_series():
    return EventSeries(times=[0.5, 1.25, 3.0])
