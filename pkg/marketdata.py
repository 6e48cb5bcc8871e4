"""Котировки -> события изменения средней цены, разреженное наблюдение по сетке dt"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

import config
from exceptions import InputError, InvalidParameterError
from models import CSV_FLOAT_FORMAT, EventSeries

logger = logging.getLogger(__name__)

NS_PER_SECOND = 1_000_000_000


@dataclass(frozen=True, eq=False)
class QuoteSeries:
    """
    Лента лучших котировок

    Пересеченные записи (ask < bid) допускаются на входе и отбрасываются при построении событий.
    """

    times: np.ndarray
    bid: np.ndarray
    ask: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).ravel()
        bid = np.asarray(self.bid, dtype=np.float64).ravel()
        ask = np.asarray(self.ask, dtype=np.float64).ravel()
        if not (times.shape == bid.shape == ask.shape):
            raise InputError("times, bid и ask должны иметь одинаковую длину")
        if times.size and np.any(np.diff(times) < 0):
            raise InputError("времена котировок должны не убывать")
        if np.any(bid <= 0) or np.any(ask <= 0):
            raise InputError("цены котировок должны быть положительными")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "bid", bid)
        object.__setattr__(self, "ask", ask)

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def crossed(self) -> np.ndarray:
        return self.ask < self.bid


@dataclass
class QualityReport:
    n_records: int = 0
    crossed_skipped: int = 0
    duplicates_collapsed: int = 0
    outside_window: int = 0
    n_events: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class PriceEventSeries:
    """
    Моменты изменения цены

    Args:
        times: строго возрастающие времена изменений
        prices: цена после каждого изменения
        initial_price: цена, действовавшая в начале окна
        start: начало окна (точка привязки сетки)
        end: конец окна
    """

    times: np.ndarray
    prices: np.ndarray
    initial_price: float
    start: float = 0.0
    end: Optional[float] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).ravel()
        prices = np.asarray(self.prices, dtype=np.float64).ravel()
        if times.shape != prices.shape:
            raise InputError("times и prices должны иметь одинаковую длину")
        if times.size and np.any(np.diff(times) <= 0):
            raise InputError("времена изменений цены должны строго возрастать")
        if times.size and times[0] < self.start:
            raise InputError("изменение цены раньше начала окна")
        if np.any(np.diff(np.concatenate([[self.initial_price], prices])) == 0):
            raise InputError("соседние цены должны различаться")
        end = self.end if self.end is not None else (float(times[-1]) if times.size else float(self.start))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "initial_price", float(self.initial_price))
        object.__setattr__(self, "end", float(end))

    def __len__(self) -> int:
        return int(self.times.shape[0])

    @property
    def changes(self) -> np.ndarray:
        return np.diff(np.concatenate([[self.initial_price], self.prices]))

    @property
    def directions(self) -> np.ndarray:
        return np.sign(self.changes).astype(np.int64)

    @property
    def jump_sizes(self) -> np.ndarray:
        return np.abs(self.changes)

    def price_at(self, t) -> np.ndarray:
        """Действующая цена: цена последнего изменения с временем <= t"""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=np.float64), side="right") - 1
        prices = np.concatenate([[self.initial_price], self.prices])
        return prices[idx + 1]


def midprice_events(
    quotes: QuoteSeries, window: Tuple[float, float], decimals: Optional[int] = None
) -> Tuple[PriceEventSeries, QualityReport]:
    """
    События изменения средней цены (bid + ask) / 2 внутри окна

    Args:
        quotes: лента котировок
        window: (t0, t1), события строго внутри окна
        decimals: округление средней цены (шаг цены)

    Returns:
        Tuple[PriceEventSeries, QualityReport]
    """
    t0, t1 = map(float, window)
    if not t0 < t1:
        raise InvalidParameterError(f"окно задано неверно: {window}")
    if not len(quotes):
        raise InputError("пустая лента котировок")
    report = QualityReport(n_records=len(quotes))

    # 1. Пересеченные котировки
    ok = ~quotes.crossed
    report.crossed_skipped = int((~ok).sum())
    if report.crossed_skipped:
        logger.warning(f"Пропущено пересеченных котировок: {report.crossed_skipped}")
    times, mid = quotes.times[ok], 0.5 * (quotes.bid[ok] + quotes.ask[ok])
    if decimals is not None:
        mid = np.round(mid, decimals)

    # 2. Одновременные обновления: остается последнее
    last = np.concatenate([times[1:] != times[:-1], [True]]) if times.size else np.empty(0, dtype=bool)
    report.duplicates_collapsed = int((~last).sum())
    times, mid = times[last], mid[last]
    if not times.size:
        raise InputError("после очистки не осталось котировок")

    # 3. Начальная цена: последняя запись не позже t0, иначе первая запись окна
    before = times <= t0
    inside = (times > t0) & (times < t1)
    report.outside_window = int((~inside).sum())
    if before.any():
        initial = mid[before][-1]
    elif inside.any():
        initial = mid[inside][0]
    else:
        raise InputError(f"в окне {window} нет котировок")

    # 4. Изменения цены
    times_in, mid_in = times[inside], mid[inside]
    prev = np.concatenate([[initial], mid_in[:-1]])
    change = mid_in != prev
    events = PriceEventSeries(times=times_in[change], prices=mid_in[change], initial_price=initial, start=t0, end=t1)
    report.n_events = len(events)
    logger.info(f"Извлечено {len(events)} изменений средней цены из {report.n_records} котировок")
    return events, report


def sparsify(events: PriceEventSeries, dt: float) -> PriceEventSeries:
    """
    Разреженное наблюдение с шагом dt от начала окна

    В каждой точке сетки n dt берется действующая цена P(n dt); если она отличается от последней
    записанной, записывается пара (t*, P(n dt)), где t* - время последнего изменения не позже n dt.
    Промежуточные колебания внутри интервала отбрасываются.
    """
    if not dt > 0:
        raise InvalidParameterError(f"dt должен быть положительным: {dt}")
    if not len(events):
        return PriceEventSeries(np.empty(0), np.empty(0), events.initial_price, events.start, events.end)
    n_grid = int(np.ceil((events.times[-1] - events.start) / dt))
    grid = events.start + dt * np.arange(1, n_grid + 1)
    # накопленная погрешность сетки: последнее событие должно попасть под последнюю точку
    if grid[-1] < events.times[-1]:
        grid = np.append(grid, events.start + dt * (n_grid + 1))
    idx = np.searchsorted(events.times, grid, side="right") - 1
    prices = np.concatenate([[events.initial_price], events.prices])[idx + 1]
    prev = np.concatenate([[events.initial_price], prices[:-1]])
    keep = prices != prev
    return PriceEventSeries(
        times=events.times[idx[keep]],
        prices=prices[keep],
        initial_price=events.initial_price,
        start=events.start,
        end=events.end,
    )


def to_event_series(events: PriceEventSeries) -> EventSeries:
    """Тип 0 - рост, тип 1 - падение, метка - размер скачка; время отсчитывается от начала окна"""
    return EventSeries(
        times=events.times - events.start,
        types=np.where(events.directions > 0, 0, 1),
        marks=events.jump_sizes,
        origin=0.0,
        horizon=events.end - events.start,
        n_types=2,
    )


# ---------------------------------------------------------------------------
# Файлы
# ---------------------------------------------------------------------------

def read_quotes_csv(path: Union[str, Path]) -> QuoteSeries:
    """Читает котировки time_ns,bid,ask; время - целые наносекунды"""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"time_ns": np.int64})
    except Exception as e:
        logger.error(f"Ошибка при чтении котировок {path}: {e}")
        raise InputError(f"не удалось прочитать {path}: {e}") from e
    missing = {"time_ns", "bid", "ask"} - set(frame.columns)
    if missing:
        raise InputError(f"в {path} нет столбцов {sorted(missing)}")
    frame = frame.sort_values("time_ns", kind="stable")
    seconds = frame["time_ns"].to_numpy(dtype=np.int64) / NS_PER_SECOND
    return QuoteSeries(seconds, frame["bid"].to_numpy(np.float64), frame["ask"].to_numpy(np.float64))


def write_price_events_csv(events: PriceEventSeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    pd.DataFrame(
        {"time": events.times, "price": events.prices, "direction": events.directions, "jump": events.jump_sizes}
    ).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_price_events_csv(path: Union[str, Path], start: float = 0.0, end: Optional[float] = None) -> PriceEventSeries:
    """Начальная цена восстанавливается по первой строке: price - direction * jump"""
    frame = pd.read_csv(path)
    missing = {"time", "price", "direction", "jump"} - set(frame.columns)
    if missing:
        raise InputError(f"в {path} нет столбцов {sorted(missing)}")
    if frame.empty:
        raise InputError(f"{path}: нет событий, начальная цена не определена")
    first = frame.iloc[0]
    initial = float(first["price"] - first["direction"] * first["jump"])
    return PriceEventSeries(frame["time"].to_numpy(np.float64), frame["price"].to_numpy(np.float64), initial, start, end)


def process_quote_files(
    paths: Sequence[Union[str, Path]], window: Tuple[float, float], threads: Optional[int] = None
) -> List[Tuple[PriceEventSeries, QualityReport]]:
    """Файлы обрабатываются параллельно, каждый - одним проходом"""

    def one(path):
        return midprice_events(read_quotes_csv(path), window)

    return Parallel(n_jobs=threads or config.THREADS, prefer="threads")(delayed(one)(p) for p in paths)
