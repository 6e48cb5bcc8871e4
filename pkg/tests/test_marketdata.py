import numpy as np
import pandas as pd
import pytest

from exceptions import InputError, InvalidParameterError
from marketdata import (
    PriceEventSeries,
    QuoteSeries,
    midprice_events,
    process_quote_files,
    read_price_events_csv,
    read_quotes_csv,
    sparsify,
    to_event_series,
    write_price_events_csv,
)


def _brute_midprice(times, bid, ask, t0, t1):
    """Построчный проход по ленте: последнее значение на метке времени, события строго внутри окна"""
    mids = {}
    for t, b, a in zip(times, bid, ask):
        if a < b:
            continue
        mids[t] = 0.5 * (b + a)
    ordered = sorted(mids.items())
    before = [m for t, m in ordered if t <= t0]
    inside = [(t, m) for t, m in ordered if t0 < t < t1]
    price = before[-1] if before else inside[0][1]
    out = []
    for t, m in inside:
        if m != price:
            out.append((t, m))
            price = m
    return out


def _brute_sparsify(events: PriceEventSeries, dt: float):
    out = []
    last = events.initial_price
    n = 1
    while True:
        g = events.start + n * dt
        hits = [k for k, t in enumerate(events.times) if t <= g]
        price = events.prices[hits[-1]] if hits else events.initial_price
        if price != last:
            out.append((events.times[hits[-1]], price))
            last = price
        if g >= events.times[-1]:
            return out
        n += 1


def _random_tape(rng, n=400):
    times = np.sort(rng.integers(0, 1000, n)).astype(np.float64)
    bid = 100.0 + rng.integers(0, 4, n)
    ask = bid + rng.integers(1, 3, n)
    crossed = rng.random(n) < 0.05
    ask[crossed] = bid[crossed] - 1.0
    return times, bid, ask


def _random_events(rng, n=300, start=0.0):
    times = start + np.cumsum(rng.exponential(0.3, n))
    steps = rng.choice([-1.0, 1.0], n)
    prices = 100.0 + np.cumsum(steps)
    return PriceEventSeries(times=times, prices=prices, initial_price=100.0, start=start)


def test_single_midprice_change():
    """bid 100/ask 102, затем 101/103: одно событие 101 -> 102, направление +1, скачок 1"""
    quotes = QuoteSeries(times=[1.0, 2.0], bid=[100.0, 101.0], ask=[102.0, 103.0])
    events, report = midprice_events(quotes, (0.0, 10.0))
    assert events.times.tolist() == [2.0]
    assert events.prices.tolist() == [102.0]
    assert events.initial_price == 101.0
    assert events.directions.tolist() == [1]
    assert events.jump_sizes.tolist() == [1.0]
    assert report.n_events == 1


def test_constant_quotes_give_no_events():
    quotes = QuoteSeries(times=[1.0, 2.0, 3.0], bid=[100.0] * 3, ask=[101.0] * 3)
    events, _ = midprice_events(quotes, (0.0, 10.0))
    assert len(events) == 0


def test_quality_report_counts():
    """Пересеченные котировки пропускаются, одновременные схлопываются к последней"""
    quotes = QuoteSeries(
        times=[1.0, 2.0, 2.0, 3.0, 4.0],
        bid=[100.0, 100.0, 101.0, 102.0, 99.0],
        ask=[101.0, 101.0, 102.0, 101.0, 100.0],
    )
    events, report = midprice_events(quotes, (0.0, 10.0))
    assert report.crossed_skipped == 1
    assert report.duplicates_collapsed == 1
    assert events.times.tolist() == [2.0, 4.0]
    assert events.prices.tolist() == [101.5, 99.5]
    assert report.to_dict()["n_records"] == 5


def test_window_matches_brute_force(rng):
    """Случайная лента: события строго внутри окна совпадают с построчным проходом"""
    for _ in range(20):
        times, bid, ask = _random_tape(rng)
        t0, t1 = 200.0, 800.0
        events, _ = midprice_events(QuoteSeries(times, bid, ask), (t0, t1))
        expected = _brute_midprice(times, bid, ask, t0, t1)
        assert list(zip(events.times.tolist(), events.prices.tolist())) == expected
        assert np.all((events.times > t0) & (events.times < t1))


def test_midprice_invalid_inputs():
    quotes = QuoteSeries(times=[1.0], bid=[100.0], ask=[101.0])
    with pytest.raises(InvalidParameterError):
        midprice_events(quotes, (5.0, 5.0))
    with pytest.raises(InputError):
        midprice_events(quotes, (0.0, 0.5))
    with pytest.raises(InputError):
        QuoteSeries(times=[2.0, 1.0], bid=[1.0, 1.0], ask=[2.0, 2.0])


def test_midprice_rounding():
    quotes = QuoteSeries(times=[1.0, 2.0], bid=[100.001, 100.002], ask=[100.011, 100.012])
    events, _ = midprice_events(quotes, (0.0, 10.0), decimals=2)
    assert len(events) == 0


def test_sparsify_hand_trace():
    """Изменения 0.1 -> 101, 0.3 -> 102, 0.4 -> 101, dt = 0.5: записывается (0.4, 101)"""
    events = PriceEventSeries(times=[0.1, 0.3, 0.4], prices=[101.0, 102.0, 101.0], initial_price=100.0)
    sparse = sparsify(events, 0.5)
    assert sparse.times.tolist() == [0.4]
    assert sparse.prices.tolist() == [101.0]
    assert sparse.directions.tolist() == [1]


def test_sparsify_drops_returning_oscillation():
    events = PriceEventSeries(times=[0.1, 0.2], prices=[101.0, 100.0], initial_price=100.0)
    assert len(sparsify(events, 0.5)) == 0


def test_sparsify_grid_aligned_event():
    """Событие ровно в точке сетки входит в ее действующую цену"""
    events = PriceEventSeries(times=[0.5, 0.7], prices=[101.0, 102.0], initial_price=100.0)
    sparse = sparsify(events, 0.5)
    assert sparse.times.tolist() == [0.5, 0.7]


def test_sparsify_identity_for_fine_grid(rng):
    events = _random_events(rng)
    dt = 0.5 * np.diff(events.times).min()
    sparse = sparsify(events, dt)
    assert np.array_equal(sparse.times, events.times)
    assert np.array_equal(sparse.prices, events.prices)


def test_sparsify_matches_brute_force():
    """100 случайных лент, у каждой свой шаг dt и начало окна"""
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dt = rng.uniform(0.1, 4.0)
        events = _random_events(rng, n=120, start=rng.uniform(0.0, 5.0))
        sparse = sparsify(events, dt)
        assert list(zip(sparse.times.tolist(), sparse.prices.tolist())) == _brute_sparsify(events, dt), seed
        assert np.isin(sparse.times, events.times).all()
        assert np.all(np.diff(sparse.times) > 0)


def test_sparsify_idempotent(rng):
    events = _random_events(rng)
    once = sparsify(events, 1.0)
    twice = sparsify(once, 1.0)
    assert np.array_equal(once.times, twice.times)
    assert np.array_equal(once.prices, twice.prices)


def test_sparsify_edge_cases():
    empty = PriceEventSeries(times=[], prices=[], initial_price=100.0)
    assert len(sparsify(empty, 1.0)) == 0
    with pytest.raises(InvalidParameterError):
        sparsify(empty, 0.0)


def test_to_event_series():
    """Рост - тип 0, падение - тип 1, метка - размер скачка"""
    events = PriceEventSeries(times=[10.5, 11.0, 12.0], prices=[101.0, 100.5, 102.5], initial_price=100.0, start=10.0, end=20.0)
    series = to_event_series(events)
    assert np.allclose(series.times, [0.5, 1.0, 2.0])
    assert series.types.tolist() == [0, 1, 0]
    assert np.allclose(series.marks, [1.0, 0.5, 2.0])
    assert series.horizon == 10.0
    assert series.m == 2


def test_quote_csv_pipeline(tmp_path):
    """time_ns,bid,ask -> события -> CSV time,price,direction,jump и обратно"""
    frame = pd.DataFrame(
        {
            "time_ns": [3_000_000_000, 1_000_000_000, 2_000_000_000, 4_500_000_000],
            "bid": [101.0, 100.0, 100.0, 100.0],
            "ask": [103.0, 102.0, 102.0, 102.0],
        }
    )
    path = tmp_path / "quotes.csv"
    frame.to_csv(path, index=False)
    quotes = read_quotes_csv(path)
    assert quotes.times.tolist() == [1.0, 2.0, 3.0, 4.5]

    [(events, report)] = process_quote_files([path], (0.0, 10.0), threads=1)
    assert events.times.tolist() == [3.0, 4.5]
    assert events.directions.tolist() == [1, -1]
    assert report.n_events == 2

    out = write_price_events_csv(events, tmp_path / "events.csv")
    header = out.read_text().splitlines()[0]
    assert header == "time,price,direction,jump"
    restored = read_price_events_csv(out, start=0.0, end=10.0)
    assert restored.initial_price == 101.0
    assert np.allclose(restored.prices, events.prices)


def test_quote_csv_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time_ns,bid\n1,100\n")
    with pytest.raises(InputError):
        read_quotes_csv(path)
