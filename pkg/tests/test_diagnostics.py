import numpy as np
import pytest

from diagnostics import exceedance_share, histogram_table, ks_test, max_quantile_gap, qq_table, tail_fractions
from exceptions import InputError
from residuals import Gamma, UnitExponential


def test_histogram_density_integrates_to_one(rng):
    values = rng.exponential(1.0, 5000)
    table = histogram_table(values, bins=40)
    assert list(table.columns) == ["left", "right", "count", "density"]
    assert table["count"].sum() == 5000
    assert float(np.sum(table["density"] * (table["right"] - table["left"]))) == pytest.approx(1.0)


def test_histogram_upper_bound():
    table = histogram_table([0.5, 1.5, 2.5, 9.0], bins=3, upper=3.0)
    assert table["right"].iloc[-1] == 3.0
    assert table["count"].tolist() == [1, 1, 1]


def test_qq_table_exponential(rng):
    """Q-Q на сетке 1%..99%: выборка Exp(1) близка к теоретическим квантилям"""
    table = qq_table(rng.exponential(1.0, 100_000))
    assert len(table) == 99
    assert table["theoretical"].iloc[49] == pytest.approx(np.log(2.0))
    assert max_quantile_gap(table) < 0.1


def test_qq_table_detects_wrong_family(rng):
    sample = Gamma.unit_mean(3.0).sample(rng, 50_000)
    assert max_quantile_gap(qq_table(sample)) > 0.3
    assert max_quantile_gap(qq_table(sample, Gamma.unit_mean(3.0))) < 0.1


def test_ks_test(rng):
    result = ks_test(rng.exponential(1.0, 5000))
    assert result.pvalue > 0.01
    assert result.n == 5000
    assert set(result.to_dict()) == {"statistic", "pvalue", "n"}
    assert ks_test(Gamma.unit_mean(3.0).sample(rng, 5000), UnitExponential()).pvalue < 1e-6


def test_tail_fractions_are_strict():
    values = np.array([1.0, 2.0, 3.0, 4.0])
    assert tail_fractions(values, below=2.0, above=3.0) == (0.25, 0.25)


def test_exceedance_share(rng):
    """Для Exp(1) доля выше 5 около exp(-5)"""
    assert exceedance_share(rng.exponential(1.0, 200_000)) == pytest.approx(np.exp(-5.0), abs=0.001)


def test_invalid_samples():
    with pytest.raises(InputError):
        ks_test([])
    with pytest.raises(InputError):
        histogram_table([1.0, np.nan])
