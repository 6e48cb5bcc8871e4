"""
Командная строка flexhawkes

Команды: simulate, estimate, residuals, fhs, sparsify, volatility.
Параметры берутся из файла key = value (--config), флаги командной строки имеют приоритет.
"""

import logging
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Annotated, Any, Dict, Iterator, List, Literal, Optional, Sequence

import numpy as np
import pandas as pd
import typer
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from tqdm import tqdm

import config
import diagnostics
from estimate import gmm_fit, mle_fit, qmle_exp_fit
from exceptions import FlexHawkesError, InputError
from marketdata import (
    midprice_events,
    read_price_events_csv,
    read_quotes_csv,
    sparsify,
    to_event_series,
    write_price_events_csv,
)
from models import (
    EventSeries,
    ExcitationParams,
    FitReport,
    GmmSpec,
    MvExcitationParams,
    StoppingRule,
    params_from_dict,
    read_event_series_csv,
    read_json,
    write_event_series_csv,
    write_json,
    write_lambda_csv,
    write_params_json,
    write_residuals_csv,
)
from multivariate import infer_residuals_mv, simulate_mv
from residuals import Gamma, ResidualDistribution, TrapezoidExp, UnitExponential
from univariate import fhs, infer_residuals, map_paths, simulate
from volatility import MarkMoments, monte_carlo_vol, solve_volatility

logger = logging.getLogger(__name__)

app = typer.Typer(name=config.APP_NAME, help="Гибкий самовозбуждающийся точечный процесс", no_args_is_help=True)


# ---------------------------------------------------------------------------
# Конфигурации запусков
# ---------------------------------------------------------------------------

class RunConfig(BaseModel):
    """Общие параметры: каталог результатов, потоки, зерно"""

    model_config = ConfigDict(extra="ignore")

    out_dir: Path = config.OUTPUT_FOLDER
    threads: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = Field(None, ge=0)


class StochasticConfig(RunConfig):
    seed: int = Field(..., ge=0, description="зерно обязательно для стохастических команд")


class ResidualFields(BaseModel):
    residual: Literal["exp", "gamma", "trapezoid"] = "exp"
    shape: Optional[float] = Field(None, gt=0)
    a: Optional[float] = Field(None, gt=0)
    ell: Optional[float] = Field(None, gt=0)

    def residual_distribution(self) -> ResidualDistribution:
        if self.residual == "gamma":
            if self.shape is None:
                raise InputError("для остатков gamma нужен параметр shape")
            return Gamma.unit_mean(self.shape)
        if self.residual == "trapezoid":
            if self.a is None or self.ell is None:
                raise InputError("для остатков trapezoid нужны параметры a и ell")
            return TrapezoidExp(self.a, self.ell)
        return UnitExponential()

    def residual_init(self) -> Dict[str, float]:
        names = {"gamma": ("shape",), "trapezoid": ("a", "ell")}.get(self.residual, ())
        return {k: getattr(self, k) for k in names if getattr(self, k) is not None}


class SimulateConfig(StochasticConfig, ResidualFields):
    model: Literal["hawkes", "flex"] = "flex"
    dims: int = Field(1, ge=1, le=2)
    mu: float = Field(..., gt=0)
    alpha: float = Field(..., gt=0)
    beta: float = Field(..., gt=0)
    alpha_cross: float = Field(0.0, ge=0)
    n_events: Optional[int] = Field(None, ge=1)
    horizon: Optional[float] = Field(None, gt=0)
    lambda0: Optional[float] = Field(None, gt=0)
    first_type: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if (self.n_events is None) == (self.horizon is None):
            raise ValueError("нужно задать ровно одно из n_events / horizon")
        if self.model == "hawkes" and self.residual != "exp":
            raise ValueError("модель hawkes допускает только остатки exp")
        if self.dims == 1 and self.first_type is not None:
            raise ValueError("first_type задается только для dims = 2")
        return self


class EstimateConfig(RunConfig, ResidualFields):
    events: Path
    method: Literal["mle", "qmle", "gmm"] = "mle"
    symmetric: bool = False
    n_starts: int = Field(1, ge=1)
    first_type: Optional[int] = Field(None, ge=0)
    std_errors: bool = True
    gmm_moments: Literal["lagged", "lagged_mean"] = "lagged"
    gmm_weight: Literal["identity", "two_step"] = "two_step"
    lambda0: Optional[float] = Field(None, gt=0)
    bins: int = Field(50, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.n_starts > 1 and self.seed is None:
            raise ValueError("для нескольких стартов нужно задать seed")
        return self


class ResidualsConfig(RunConfig, ResidualFields):
    events: Path
    params: Path
    lambda0: Optional[float] = Field(None, gt=0)
    first_type: Optional[int] = Field(None, ge=0)
    bins: int = Field(50, ge=1)
    threshold: float = Field(5.0, gt=0)


class FhsConfig(StochasticConfig, ResidualFields):
    events: Path
    n_paths: int = Field(100, ge=1)
    below_quantile: float = Field(0.2, gt=0, lt=1)
    above_quantile: float = Field(0.98, gt=0, lt=1)
    compare_hawkes: bool = True
    save_paths: bool = True
    lambda0: Optional[float] = Field(None, gt=0)


class SparsifyConfig(RunConfig):
    quotes: Optional[Path] = None
    events: Optional[Path] = None
    window_start: Optional[float] = None
    window_end: Optional[float] = None
    dt: float = Field(..., gt=0)
    decimals: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if (self.quotes is None) == (self.events is None):
            raise ValueError("нужно задать ровно один вход: quotes или events")
        if self.quotes is not None and (self.window_start is None or self.window_end is None):
            raise ValueError("для котировок нужно окно window_start / window_end")
        return self


class VolatilityConfig(RunConfig, ResidualFields):
    params: Optional[Path] = None
    events: Optional[Path] = None
    window_start: float = 0.0
    window_end: Optional[float] = None
    dt_grid: List[float] = Field(default_factory=list)
    t: Optional[float] = Field(None, gt=0)
    n_paths: int = Field(0, ge=0)
    interpretation: Literal["centered", "literal"] = config.VOL_INTERPRETATION

    @field_validator("dt_grid", mode="before")
    @classmethod
    def _split_grid(cls, value):
        if isinstance(value, str):
            return [v for v in value.replace(";", ",").replace(" ", ",").split(",") if v]
        return value

    @model_validator(mode="after")
    def _check(self):
        if (self.params is None) == (self.events is None):
            raise ValueError("нужно задать ровно один вход: params или events")
        if self.n_paths == 1:
            raise ValueError("стандартное отклонение по одной траектории не определено: n_paths >= 2")
        if self.n_paths and self.seed is None:
            raise ValueError("для Монте-Карло нужно задать seed")
        if self.events is not None and not self.dt_grid:
            raise ValueError("для расчета по данным нужна сетка dt_grid")
        if any(dt <= 0 for dt in self.dt_grid):
            raise ValueError("значения dt_grid должны быть положительными")
        if self.params is not None and self.t is None:
            raise ValueError("для расчета по параметрам нужен горизонт t")
        return self


def load_run_config(model: type, config_file: Optional[Path], overrides: Dict[str, Any]) -> BaseModel:
    """
    Слияние файла key = value и флагов командной строки с проверкой

    Args:
        model: класс конфигурации команды
        config_file: путь к файлу или None
        overrides: значения флагов (None - флаг не задан)

    Returns:
        BaseModel: проверенная конфигурация
    """
    values: Dict[str, Any] = {}
    if config_file is not None:
        for key, value in dotenv_values(config_file).items():
            if value not in (None, ""):
                values[key.strip().lower().replace("-", "_")] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    return model.model_validate(values)


# ---------------------------------------------------------------------------
# Служебное
# ---------------------------------------------------------------------------

def setup_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format=config.LOG_FORMAT,
        handlers=[
            RotatingFileHandler(
                config.LOGS_FOLDER / f"{config.APP_NAME}.log",
                maxBytes=config.LOG_MAX_BYTES,
                backupCount=config.LOG_BACKUP_COUNT,
                encoding="utf-8",
            ),
            logging.StreamHandler(),
        ],
    )


@contextmanager
def handled(command: str) -> Iterator[None]:
    """Ошибки проверки и модели -> сообщение и ненулевой код выхода"""
    try:
        yield
    except ValidationError as e:
        logger.error(f"{command}: неверная конфигурация: {e}")
        typer.secho(f"Ошибка конфигурации:\n{e}", err=True, fg=typer.colors.RED)
        raise typer.Exit(code=2)
    except FlexHawkesError as e:
        logger.error(f"{command}: {type(e).__name__}: {e}")
        typer.secho(f"Ошибка: {e}", err=True, fg=typer.colors.RED)
        raise typer.Exit(code=1)


def _prepare(cfg: RunConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def write_manifest(cfg: RunConfig, command: str, outputs: Sequence[Path]) -> Path:
    """run_manifest.json: итоговая конфигурация, зерно и версия"""
    return write_json(
        {
            "app": config.APP_NAME,
            "version": config.APP_VERSION,
            "command": command,
            "seed": cfg.seed,
            "config": cfg.model_dump(mode="json"),
            "outputs": [Path(p).name for p in outputs],
        },
        cfg.out_dir / "run_manifest.json",
    )


def _report_json(report: FitReport) -> Dict[str, Any]:
    data = report.to_dict()
    if report.params is not None:
        data["params"] = report.params.to_dict()
    if report.dists is not None:
        dists = report.dists if isinstance(report.dists, list) else [report.dists]
        data["dists"] = [d.to_dict() for d in dists]
    return data


def _read_params(path: Path):
    data = read_json(path)
    return params_from_dict(data.get("params", data))


def _diagnostic_tables(residuals_by_type, dists_by_type, bins: int):
    """Гистограммы и Q-Q по типам, столбец type различает типы"""
    hists, qqs = [], []
    for i, (eps, dist) in enumerate(zip(residuals_by_type, dists_by_type)):
        if len(eps) == 0:
            logger.warning(f"Нет остатков типа {i}")
            continue
        hists.append(diagnostics.histogram_table(eps, bins).assign(type=i))
        qqs.append(diagnostics.qq_table(eps, dist).assign(type=i))
    if not hists:
        raise InputError("нет остатков для диагностики")
    return pd.concat(hists, ignore_index=True), pd.concat(qqs, ignore_index=True)


def _residual_summary(residuals_by_type, dists_by_type, threshold: float) -> List[Dict[str, Any]]:
    rows = []
    for i, (eps, dist) in enumerate(zip(residuals_by_type, dists_by_type)):
        if len(eps) == 0:
            continue
        qq = diagnostics.qq_table(eps, dist)
        rows.append(
            {
                "type": i,
                "n": int(len(eps)),
                "mean": float(np.mean(eps)),
                "ks": diagnostics.ks_test(eps, dist).to_dict(),
                "max_quantile_gap": diagnostics.max_quantile_gap(qq),
                "exceedance_share": diagnostics.exceedance_share(eps, threshold),
                "reference_exceedance": float(dist.sf(threshold)),
            }
        )
    return rows


def _inter_arrival_fractions(paths: Sequence[EventSeries], below: float, above: float) -> Dict[str, float]:
    pooled = np.concatenate([p.inter_arrivals() for p in paths])
    lo, hi = diagnostics.tail_fractions(pooled, below, above)
    return {"below": lo, "above": hi}


# ---------------------------------------------------------------------------
# Общие опции
# ---------------------------------------------------------------------------

SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Зерно генератора")]
ConfigOpt = Annotated[
    Optional[Path], typer.Option("--config", exists=True, dir_okay=False, help="Файл key = value с параметрами")
]
OutDirOpt = Annotated[Optional[Path], typer.Option("--out-dir", help="Каталог результатов")]
ThreadsOpt = Annotated[Optional[int], typer.Option("--threads", help="Ограничение числа потоков")]
ResidualOpt = Annotated[Optional[str], typer.Option("--residual", help="exp | gamma | trapezoid")]


@app.callback()
def main() -> None:
    setup_logging()


# ---------------------------------------------------------------------------
# Команды
# ---------------------------------------------------------------------------

@app.command("simulate")
def cmd_simulate(
    seed: SeedOpt = None,
    config_file: ConfigOpt = None,
    out_dir: OutDirOpt = None,
    threads: ThreadsOpt = None,
    model: Annotated[Optional[str], typer.Option("--model", help="hawkes | flex")] = None,
    residual: ResidualOpt = None,
    shape: Optional[float] = typer.Option(None, "--shape"),
    a: Optional[float] = typer.Option(None, "--a"),
    ell: Optional[float] = typer.Option(None, "--ell"),
    dims: Optional[int] = typer.Option(None, "--dims", help="1 или 2"),
    mu: Optional[float] = typer.Option(None, "--mu"),
    alpha: Optional[float] = typer.Option(None, "--alpha"),
    beta: Optional[float] = typer.Option(None, "--beta"),
    alpha_cross: Optional[float] = typer.Option(None, "--alpha-cross"),
    n_events: Optional[int] = typer.Option(None, "--n-events"),
    horizon: Optional[float] = typer.Option(None, "--horizon"),
    lambda0: Optional[float] = typer.Option(None, "--lambda0"),
    first_type: Optional[int] = typer.Option(None, "--first-type"),
):
    """Симуляция событий; пишет events.csv и lambda.csv"""
    with handled("simulate"):
        cfg: SimulateConfig = load_run_config(SimulateConfig, config_file, dict(
            seed=seed, out_dir=out_dir, threads=threads, model=model, residual=residual, shape=shape, a=a,
            ell=ell, dims=dims, mu=mu, alpha=alpha, beta=beta, alpha_cross=alpha_cross, n_events=n_events,
            horizon=horizon, lambda0=lambda0, first_type=first_type,
        ))
        out = _prepare(cfg)
        rng = np.random.default_rng(cfg.seed)
        dist = cfg.residual_distribution()
        stop = StoppingRule.events(cfg.n_events) if cfg.n_events is not None else StoppingRule.until(cfg.horizon)

        if cfg.dims == 1:
            params = ExcitationParams(cfg.mu, cfg.alpha, cfg.beta)
            series, path = simulate(params, dist, cfg.lambda0, stop, rng)
        else:
            params = MvExcitationParams.symmetric_pair(cfg.mu, cfg.beta, cfg.alpha, cfg.alpha_cross)
            series, path = simulate_mv(params, dist, cfg.lambda0, stop, rng, first_type=cfg.first_type)

        outputs = [
            write_event_series_csv(series, out / "events.csv"),
            write_lambda_csv(path, out / "lambda.csv"),
            write_params_json(params, out / "params.json"),
        ]
        write_manifest(cfg, "simulate", outputs)
        typer.echo(f"Сгенерировано {len(series)} событий -> {out}")


@app.command("estimate")
def cmd_estimate(
    events: Annotated[Optional[Path], typer.Option("--events", help="CSV time,type,mark")] = None,
    seed: SeedOpt = None,
    config_file: ConfigOpt = None,
    out_dir: OutDirOpt = None,
    threads: ThreadsOpt = None,
    method: Annotated[Optional[str], typer.Option("--method", help="mle | qmle | gmm")] = None,
    residual: ResidualOpt = None,
    shape: Optional[float] = typer.Option(None, "--shape", help="Начальное значение shape"),
    a: Optional[float] = typer.Option(None, "--a"),
    ell: Optional[float] = typer.Option(None, "--ell"),
    symmetric: Optional[bool] = typer.Option(None, "--symmetric/--no-symmetric"),
    n_starts: Optional[int] = typer.Option(None, "--n-starts"),
    first_type: Optional[int] = typer.Option(None, "--first-type"),
    std_errors: Optional[bool] = typer.Option(None, "--std-errors/--no-std-errors"),
    gmm_moments: Optional[str] = typer.Option(None, "--gmm-moments"),
    gmm_weight: Optional[str] = typer.Option(None, "--gmm-weight"),
    lambda0: Optional[float] = typer.Option(None, "--lambda0"),
    bins: Optional[int] = typer.Option(None, "--bins"),
):
    """Оценивание (MLE, QMLE, GMM); пишет fit.json, residuals.csv, histogram.csv, qq.csv"""
    with handled("estimate"):
        cfg: EstimateConfig = load_run_config(EstimateConfig, config_file, dict(
            events=events, seed=seed, out_dir=out_dir, threads=threads, method=method, residual=residual,
            shape=shape, a=a, ell=ell, symmetric=symmetric, n_starts=n_starts, first_type=first_type,
            std_errors=std_errors, gmm_moments=gmm_moments, gmm_weight=gmm_weight, lambda0=lambda0, bins=bins,
        ))
        out = _prepare(cfg)
        series = read_event_series_csv(cfg.events)
        model = "univariate" if series.m == 1 else "multivariate"
        rng = np.random.default_rng(cfg.seed) if cfg.seed is not None else None

        if cfg.method == "gmm":
            if model != "univariate":
                raise InputError("GMM реализован для одномерной модели")
            spec = GmmSpec(weight_stage=cfg.gmm_weight, moments=cfg.gmm_moments)
            report = gmm_fit(series, spec, lambda0=cfg.lambda0, compute_std_errors=cfg.std_errors)
        else:
            kwargs = dict(
                lambda0=cfg.lambda0, symmetric=cfg.symmetric, first_type=cfg.first_type, n_starts=cfg.n_starts,
                rng=rng, threads=cfg.threads, compute_std_errors=cfg.std_errors,
            )
            if cfg.method == "qmle":
                report = qmle_exp_fit(series, model, **kwargs)
            else:
                init = cfg.residual_init()
                if model == "multivariate":
                    init = {f"{k}_{i}": v for k, v in init.items() for i in range(series.m)}
                report = mle_fit(series, model, cfg.residual, init=init or None, **kwargs)

        if model == "univariate":
            residuals_by_type = [report.residuals]
            dist = report.dists if report.dists is not None else UnitExponential()
            dists_by_type = [dist]
        else:
            residuals_by_type = report.residuals
            dists_by_type = report.dists
        hist, qq = _diagnostic_tables(residuals_by_type, dists_by_type, cfg.bins)

        outputs = [write_json(_report_json(report), out / "fit.json")]
        if model == "univariate":
            outputs.append(write_residuals_csv(report.residuals, out / "residuals.csv"))
        else:
            outputs.extend(write_residuals_csv(eps, out / f"residuals_{i}.csv") for i, eps in enumerate(residuals_by_type))
        hist.to_csv(out / "histogram.csv", index=False)
        qq.to_csv(out / "qq.csv", index=False)
        outputs.extend([out / "histogram.csv", out / "qq.csv"])
        write_manifest(cfg, "estimate", outputs)
        typer.echo(report.to_json())


@app.command("residuals")
def cmd_residuals(
    events: Annotated[Optional[Path], typer.Option("--events")] = None,
    params: Annotated[Optional[Path], typer.Option("--params", help="JSON параметров или fit.json")] = None,
    seed: SeedOpt = None,
    config_file: ConfigOpt = None,
    out_dir: OutDirOpt = None,
    threads: ThreadsOpt = None,
    residual: ResidualOpt = None,
    shape: Optional[float] = typer.Option(None, "--shape"),
    a: Optional[float] = typer.Option(None, "--a"),
    ell: Optional[float] = typer.Option(None, "--ell"),
    lambda0: Optional[float] = typer.Option(None, "--lambda0"),
    first_type: Optional[int] = typer.Option(None, "--first-type"),
    bins: Optional[int] = typer.Option(None, "--bins"),
    threshold: Optional[float] = typer.Option(None, "--threshold"),
):
    """Восстановление остатков при заданных параметрах и сравнение с эталонным законом"""
    with handled("residuals"):
        cfg: ResidualsConfig = load_run_config(ResidualsConfig, config_file, dict(
            events=events, params=params, seed=seed, out_dir=out_dir, threads=threads, residual=residual,
            shape=shape, a=a, ell=ell, lambda0=lambda0, first_type=first_type, bins=bins, threshold=threshold,
        ))
        out = _prepare(cfg)
        series = read_event_series_csv(cfg.events)
        model_params = _read_params(cfg.params)
        reference = cfg.residual_distribution()
        if isinstance(model_params, ExcitationParams):
            eps, _ = infer_residuals(series, model_params, cfg.lambda0)
            residuals_by_type = [eps]
        else:
            residuals_by_type = infer_residuals_mv(series, model_params, cfg.lambda0, cfg.first_type)
        dists_by_type = [reference] * len(residuals_by_type)

        hist, qq = _diagnostic_tables(residuals_by_type, dists_by_type, cfg.bins)
        outputs = [
            write_residuals_csv(np.concatenate(residuals_by_type), out / "residuals.csv"),
            out / "histogram.csv",
            out / "qq.csv",
        ]
        hist.to_csv(outputs[1], index=False)
        qq.to_csv(outputs[2], index=False)
        summary = {
            "reference": reference.to_dict(),
            "threshold": cfg.threshold,
            "types": _residual_summary(residuals_by_type, dists_by_type, cfg.threshold),
        }
        outputs.append(write_json(summary, out / "residual_summary.json"))
        write_manifest(cfg, "residuals", outputs)
        for row in summary["types"]:
            typer.echo(
                f"тип {row['type']}: n={row['n']}, KS p={row['ks']['pvalue']:.4g}, "
                f"доля > {cfg.threshold:g}: {row['exceedance_share']:.4%} (эталон {row['reference_exceedance']:.4%})"
            )


@app.command("fhs")
def cmd_fhs(
    events: Annotated[Optional[Path], typer.Option("--events")] = None,
    seed: SeedOpt = None,
    config_file: ConfigOpt = None,
    out_dir: OutDirOpt = None,
    threads: ThreadsOpt = None,
    residual: ResidualOpt = None,
    shape: Optional[float] = typer.Option(None, "--shape"),
    a: Optional[float] = typer.Option(None, "--a"),
    ell: Optional[float] = typer.Option(None, "--ell"),
    n_paths: Optional[int] = typer.Option(None, "--n-paths"),
    below_quantile: Optional[float] = typer.Option(None, "--below-quantile"),
    above_quantile: Optional[float] = typer.Option(None, "--above-quantile"),
    compare_hawkes: Optional[bool] = typer.Option(None, "--compare-hawkes/--no-compare-hawkes"),
    save_paths: Optional[bool] = typer.Option(None, "--save-paths/--no-save-paths"),
    lambda0: Optional[float] = typer.Option(None, "--lambda0"),
):
    """Оценка -> остатки -> выборка с возвращением -> симуляция; сводка по хвостам интервалов"""
    with handled("fhs"):
        cfg: FhsConfig = load_run_config(FhsConfig, config_file, dict(
            events=events, seed=seed, out_dir=out_dir, threads=threads, residual=residual, shape=shape, a=a,
            ell=ell, n_paths=n_paths, below_quantile=below_quantile, above_quantile=above_quantile,
            compare_hawkes=compare_hawkes, save_paths=save_paths, lambda0=lambda0,
        ))
        out = _prepare(cfg)
        series = read_event_series_csv(cfg.events)
        fhs_rng, hawkes_rng = np.random.default_rng(cfg.seed).spawn(2)

        report = mle_fit(
            series, "univariate", cfg.residual, init=cfg.residual_init() or None, lambda0=cfg.lambda0,
            compute_std_errors=False,
        )
        paths = fhs(series, report.params, cfg.lambda0, cfg.n_paths, fhs_rng, cfg.threads, residuals=report.residuals)

        observed = series.inter_arrivals()
        below, above = np.quantile(observed, [cfg.below_quantile, cfg.above_quantile])
        summary: Dict[str, Any] = {
            "n_events": len(series),
            "n_paths": cfg.n_paths,
            "cutoffs": {"below": float(below), "above": float(above)},
            "observed": dict(zip(("below", "above"), diagnostics.tail_fractions(observed, below, above))),
            "fhs": _inter_arrival_fractions(paths, below, above),
            "fit": _report_json(report),
        }

        if cfg.compare_hawkes:
            qmle = qmle_exp_fit(series, compute_std_errors=False, lambda0=cfg.lambda0)
            stop = StoppingRule.events(len(series))
            unit = UnitExponential()

            def hawkes_path(child: np.random.Generator) -> EventSeries:
                return simulate(qmle.params, unit, cfg.lambda0, stop, child, origin=series.origin)[0]

            hawkes_paths = map_paths(hawkes_path, hawkes_rng, cfg.n_paths, cfg.threads, desc="hawkes")
            summary["hawkes"] = _inter_arrival_fractions(hawkes_paths, below, above)
            summary["qmle"] = _report_json(qmle)

        outputs = [write_json(summary, out / "fhs_summary.json")]
        if cfg.save_paths:
            frame = pd.concat(
                [pd.DataFrame({"path": k, "time": p.times}) for k, p in enumerate(paths)], ignore_index=True
            )
            frame.to_csv(out / "fhs_paths.csv", index=False, float_format="%.12f")
            outputs.append(out / "fhs_paths.csv")
        write_manifest(cfg, "fhs", outputs)
        typer.echo(
            f"FHS: ниже {below:.6g}: {summary['fhs']['below']:.4f} (данные {summary['observed']['below']:.4f}), "
            f"выше {above:.6g}: {summary['fhs']['above']:.4f} (данные {summary['observed']['above']:.4f})"
        )


@app.command("sparsify")
def cmd_sparsify(
    dt: Annotated[Optional[float], typer.Option("--dt", help="Шаг сетки наблюдения")] = None,
    quotes: Annotated[Optional[Path], typer.Option("--quotes", help="CSV time_ns,bid,ask")] = None,
    events: Annotated[Optional[Path], typer.Option("--events", help="CSV time,price,direction,jump")] = None,
    window_start: Optional[float] = typer.Option(None, "--window-start"),
    window_end: Optional[float] = typer.Option(None, "--window-end"),
    decimals: Optional[int] = typer.Option(None, "--decimals"),
    seed: SeedOpt = None,
    config_file: ConfigOpt = None,
    out_dir: OutDirOpt = None,
    threads: ThreadsOpt = None,
):
    """Разреженное наблюдение цены с шагом dt"""
    with handled("sparsify"):
        cfg: SparsifyConfig = load_run_config(SparsifyConfig, config_file, dict(
            dt=dt, quotes=quotes, events=events, window_start=window_start, window_end=window_end,
            decimals=decimals, seed=seed, out_dir=out_dir, threads=threads,
        ))
        out = _prepare(cfg)
        outputs: List[Path] = []
        if cfg.quotes is not None:
            price_events, quality = midprice_events(
                read_quotes_csv(cfg.quotes), (cfg.window_start, cfg.window_end), cfg.decimals
            )
            outputs.append(write_price_events_csv(price_events, out / "price_events.csv"))
            outputs.append(write_json(quality.to_dict(), out / "quality.json"))
        else:
            start = cfg.window_start if cfg.window_start is not None else 0.0
            price_events = read_price_events_csv(cfg.events, start, cfg.window_end)
        sparse = sparsify(price_events, cfg.dt)
        outputs.append(write_price_events_csv(sparse, out / "sparse.csv"))
        write_manifest(cfg, "sparsify", outputs)
        typer.echo(f"Изменений цены: {len(price_events)} -> {len(sparse)} при dt={cfg.dt:g}")


def _volatility_sweep(cfg: VolatilityConfig, dist_family: str) -> List[Dict[str, Any]]:
    price_events = read_price_events_csv(cfg.events, cfg.window_start, cfg.window_end)
    t = cfg.t if cfg.t is not None else price_events.end - price_events.start
    rngs = np.random.default_rng(cfg.seed).spawn(len(cfg.dt_grid)) if cfg.n_paths else [None] * len(cfg.dt_grid)
    rows = []
    for dt, rng in zip(tqdm(cfg.dt_grid, desc="dt"), rngs):
        row: Dict[str, Any] = {"dt": dt}
        series = to_event_series(sparsify(price_events, dt))
        row["n_events"] = len(series)
        try:
            hawkes = mle_fit(series, "multivariate", "exp", symmetric=True, compute_std_errors=False)
        except FlexHawkesError as e:
            logger.warning(f"dt={dt}: оценка невозможна: {e}")
            rows.append(row)
            continue
        row.update(hawkes.estimates)
        try:
            solution = solve_volatility(hawkes.params, MarkMoments.from_marks(series), t, cfg.interpretation)
            row["hvol"] = solution.hvol
            row["solution"] = solution.to_dict()
            if cfg.n_paths:
                flex = hawkes
                if dist_family != "exp":
                    flex = mle_fit(series, "multivariate", dist_family, symmetric=True, compute_std_errors=False)
                row.update({f"flex_{name}": value for name, value in flex.estimates.items()})
                pools = [series.marks[series.types == i] for i in range(2)]
                row["mc_vol"] = monte_carlo_vol(
                    flex.params, flex.dists, t, cfg.n_paths, rng, mark_pools=pools, threads=cfg.threads
                )
        except FlexHawkesError as e:
            logger.warning(f"dt={dt}: волатильность не посчитана: {e}")
            rows.append(row)
            continue
        logger.info(f"dt={dt}: событий {len(series)}, Hvol={row['hvol']:.6g}")
        rows.append(row)
    return rows


@app.command("volatility")
def cmd_volatility(
    params: Annotated[Optional[Path], typer.Option("--params", help="JSON двумерных параметров")] = None,
    events: Annotated[Optional[Path], typer.Option("--events", help="CSV изменений цены")] = None,
    dt: Annotated[Optional[List[float]], typer.Option("--dt", help="Шаг сетки (можно повторять)")] = None,
    t: Optional[float] = typer.Option(None, "--t", help="Горизонт волатильности"),
    n_paths: Optional[int] = typer.Option(None, "--n-paths", help="Траекторий Монте-Карло (0 - без МК)"),
    interpretation: Optional[str] = typer.Option(None, "--interpretation", help="centered | literal"),
    window_start: Optional[float] = typer.Option(None, "--window-start"),
    window_end: Optional[float] = typer.Option(None, "--window-end"),
    residual: ResidualOpt = None,
    shape: Optional[float] = typer.Option(None, "--shape"),
    a: Optional[float] = typer.Option(None, "--a"),
    ell: Optional[float] = typer.Option(None, "--ell"),
    seed: SeedOpt = None,
    config_file: ConfigOpt = None,
    out_dir: OutDirOpt = None,
    threads: ThreadsOpt = None,
):
    """Волатильность Хоукса по параметрам или по сетке dt на данных (с Монте-Карло сверкой)"""
    with handled("volatility"):
        cfg: VolatilityConfig = load_run_config(VolatilityConfig, config_file, dict(
            params=params, events=events, dt_grid=dt or None, t=t, n_paths=n_paths, interpretation=interpretation,
            window_start=window_start, window_end=window_end, residual=residual, shape=shape, a=a, ell=ell,
            seed=seed, out_dir=out_dir, threads=threads,
        ))
        out = _prepare(cfg)
        if cfg.params is not None:
            model_params = _read_params(cfg.params)
            if not isinstance(model_params, MvExcitationParams) or model_params.m != 2:
                raise InputError("для волатильности нужны параметры двумерной модели")
            solution = solve_volatility(model_params, None, cfg.t, cfg.interpretation)
            result: Dict[str, Any] = {"solution": solution.to_dict(), "equation_residuals": solution.residuals()}
            if cfg.n_paths:
                result["mc_vol"] = monte_carlo_vol(
                    model_params, cfg.residual_distribution(), cfg.t, cfg.n_paths,
                    np.random.default_rng(cfg.seed), threads=cfg.threads,
                )
            outputs = [write_json(result, out / "volatility.json")]
            typer.echo(f"Hvol = {solution.hvol:.6g}" + (f", МК = {result['mc_vol']:.6g}" if "mc_vol" in result else ""))
        else:
            rows = _volatility_sweep(cfg, cfg.residual)
            table = pd.DataFrame([{k: v for k, v in row.items() if k != "solution"} for row in rows])
            table.to_csv(out / "sweep.csv", index=False)
            outputs = [
                out / "sweep.csv",
                write_json({"rows": [{k: row.get(k) for k in ("dt", "solution")} for row in rows]}, out / "volatility.json"),
            ]
            typer.echo(table.to_string(index=False))
        write_manifest(cfg, "volatility", outputs)


if __name__ == "__main__":
    app()
