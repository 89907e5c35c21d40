"""
Модуль экспериментов Монте-Карло.

Повторяет дизайн симуляции, применяет выбранные оценщики, сравнивает их
с известной истиной и собирает таблицы смещения, разброса, отношения
SE/std, эмпирического размера тестов и RMSE. Каждое повторение использует
собственный поток случайных чисел, поэтому результат не зависит от числа
потоков выполнения.
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from statsmodels.stats.proportion import proportion_confint
from statsmodels.tools.eval_measures import rmse

from analytic import corrected_cdf, corrected_quantile, cross_validate_bandwidth
from comparators import empirical_bayes, james_stein_shrink
from core import (
    BadConfig,
    BadLevel,
    BadReplications,
    BadSpec,
    NoisyDrawsError,
    ThetaGrid,
    linear_grid,
)
from dgp import DesignSpec, design_truth, draw_design
from empirical import check_tau, naive_cdf
from jackknife import (
    DEFAULT_LAMBDA,
    SplitSpec,
    lambda_cdf,
    lambda_quantile,
    split_panel_cdf,
    split_panel_quantile,
)
from moments import corrected_variance, t_test_size

logger = logging.getLogger(__name__)

ESTIMATOR_TAGS = ("variance", "cdf", "quantile", "split_jackknife", "lambda_jackknife", "eb")
PANEL_ONLY_TAGS = ("variance", "split_jackknife")
TAU_TAGS = ("cdf", "quantile", "split_jackknife", "lambda_jackknife")
CURVE_ESTIMATORS = ("naive", "analytic", "split_jackknife", "lambda_jackknife")
RMSE_GRIDS = ("uniform", "deciles")
DECILES = tuple(round(0.1 * k, 1) for k in range(1, 10))
MIN_REPLICATIONS = 100
THREADS_ENV = "NOISY_DRAWS_THREADS"
RMSE_GRID_POINTS = 201
RMSE_GRID_WIDTH = 3.0
PROGRESS_STEPS = 10
SIZE_BAND_ALPHA = 0.05
MAX_LOGGED_EXCLUSIONS = 10


@dataclass(frozen=True)
class ExperimentOptions:
    """
    Параметры оценщиков внутри эксперимента.

    Attributes:
        level (float): Номинальный уровень тестов
        lam (float): λ для λ-jackknife
        split_m1 (Optional[int]): Размер первого блока split-panel jackknife
        bandwidth_fallback (bool): Использовать запасную ширину окна вместо исключения
    """

    level: float = 0.05
    lam: float = DEFAULT_LAMBDA
    split_m1: Optional[int] = None
    bandwidth_fallback: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    """Один эксперимент из файла конфигурации."""

    name: str
    design: DesignSpec
    estimators: Tuple[str, ...]
    taus: Tuple[float, ...]
    replications: int
    options: ExperimentOptions = field(default_factory=ExperimentOptions)
    rmse: Tuple[str, ...] = ()
    rmse_grid: str = "uniform"
    curves: bool = False


@dataclass(frozen=True)
class ReportRow:
    """Одна ячейка отчета: оценщик × цель."""

    estimator: str
    target: str
    true_value: float
    bias: float
    std: float
    se_over_std: float
    size_5pct: float
    rmse: float
    mse: float
    mc_se: Dict[str, float]
    size_band: Tuple[float, float]


@dataclass(frozen=True)
class McReport:
    """
    Агрегированный отчет эксперимента Монте-Карло.

    Attributes:
        design (DesignSpec): Дизайн
        replications (int): Запрошенное число повторений
        level (float): Номинальный уровень тестов
        rows (Tuple[ReportRow, ...]): Ячейки отчета
        excluded (int): Число исключенных повторений
        exclusions (Tuple[str, ...]): Сообщения первых исключенных повторений
        bandwidth_fallbacks (int): Число повторений с запасной шириной окна
    """

    design: DesignSpec
    replications: int
    level: float
    rows: Tuple[ReportRow, ...]
    excluded: int = 0
    exclusions: Tuple[str, ...] = ()
    bandwidth_fallbacks: int = 0

    def row(self, estimator: str, target: str) -> ReportRow:
        """
        Находит ячейку отчета.

        Raises:
            KeyError: Если такой ячейки нет
        """
        for row in self.rows:
            if row.estimator == estimator and row.target == target:
                return row
        raise KeyError(f"{estimator} / {target}")

    def to_frame(self) -> pd.DataFrame:
        """Плоская таблица: одна строка на ячейку отчета."""
        records = []
        for row in self.rows:
            records.append(
                {
                    "estimator": row.estimator,
                    "target": row.target,
                    "true_value": row.true_value,
                    "bias": row.bias,
                    "std": row.std,
                    "se_over_std": row.se_over_std,
                    "size_5pct": row.size_5pct,
                    "rmse": row.rmse,
                    "mse": row.mse,
                    **{f"mc_se_{k}": v for k, v in sorted(row.mc_se.items())},
                }
            )
        return pd.DataFrame.from_records(records)

    def to_json(self) -> str:
        """JSON с фиксированным порядком ключей; NaN записывается как null."""
        payload = {
            "design": self.design.to_dict(),
            "replications": self.replications,
            "level": self.level,
            "excluded": self.excluded,
            "exclusions": list(self.exclusions),
            "bandwidth_fallbacks": self.bandwidth_fallbacks,
            "rows": [
                {
                    "estimator": row.estimator,
                    "target": row.target,
                    "true_value": row.true_value,
                    "bias": row.bias,
                    "std": row.std,
                    "se_over_std": row.se_over_std,
                    "size_5pct": row.size_5pct,
                    "size_band": list(row.size_band),
                    "rmse": row.rmse,
                    "mse": row.mse,
                    "mc_se": dict(row.mc_se),
                }
                for row in self.rows
            ],
        }
        return json.dumps(_without_nan(payload), sort_keys=True, indent=2, ensure_ascii=False)


@dataclass(frozen=True)
class CurveReport:
    """RMSE оценок функции распределения на сетке θ."""

    frame: pd.DataFrame
    rmse: Dict[str, float]
    mc_se: Dict[str, float]
    replications: int
    excluded: int = 0

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "estimator": list(self.rmse),
                "rmse": [self.rmse[k] for k in self.rmse],
                "mc_se": [self.mc_se[k] for k in self.rmse],
            }
        )


class _Cell(NamedTuple):
    estimate: float
    se: float
    error: float
    sq_error: float
    scalar: bool


class _Outcome(NamedTuple):
    replication: int
    cells: Dict[Tuple[str, str], _Cell]
    truths: Dict[Tuple[str, str], float]
    fallback: bool
    error: Optional[str]


def _without_nan(value):
    """Рекурсивно заменяет NaN и бесконечности на None."""
    if isinstance(value, dict):
        return {k: _without_nan(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_without_nan(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _tau_tag(tau: float) -> str:
    return f"tau={tau:g}"


def _scalar(estimate: float, se: float, truth: float) -> _Cell:
    error = float(estimate) - truth
    return _Cell(float(estimate), float(se), error, error * error, True)


def _units(estimates: np.ndarray, theta: np.ndarray) -> _Cell:
    errors = estimates - theta
    return _Cell(
        float(estimates.mean()), math.nan, float(errors.mean()), float(np.mean(errors**2)), False
    )


def resolve_workers(workers: Optional[int] = None) -> int:
    """
    Число потоков выполнения с учетом переменной окружения NOISY_DRAWS_THREADS.

    Args:
        workers (Optional[int]): Запрошенное число (по умолчанию число ядер)

    Returns:
        int: Число потоков не меньше 1
    """
    count = int(workers) if workers else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            count = min(count, int(cap))
        except ValueError:
            logger.warning("Игнорируется некорректное значение %s=%r", THREADS_ENV, cap)
    return max(1, count)


def _map_replications(func: Callable[[int], object], replications: int, workers: int) -> List:
    """Выполняет func(r) для всех повторений, сохраняя порядок результатов."""
    step = max(1, replications // PROGRESS_STEPS)
    results = []
    if workers == 1:
        iterator = map(func, range(replications))
        pool = None
    else:
        pool = ThreadPoolExecutor(max_workers=workers)
        iterator = pool.map(func, range(replications))
    try:
        for done, result in enumerate(iterator, start=1):
            results.append(result)
            if done % step == 0 or done == replications:
                logger.info("Выполнено повторений: %d из %d", done, replications)
    finally:
        if pool is not None:
            pool.shutdown()
    return results


def _replicate(
    design: DesignSpec,
    estimators: Tuple[str, ...],
    taus: Tuple[float, ...],
    options: ExperimentOptions,
    replication: int,
) -> _Outcome:
    """Одно повторение: генерация данных, все оценки и ошибки относительно истины."""
    cells: Dict[Tuple[str, str], _Cell] = {}
    truths: Dict[Tuple[str, str], float] = {}

    def put(estimator: str, target: str, cell: _Cell, truth: float) -> None:
        cells[(estimator, target)] = cell
        truths[(estimator, target)] = truth

    try:
        draw = draw_design(design, replication)
        truth = design_truth(design)
        sample = draw.sample
        thetas = [float(truth.q(tau)) for tau in taus]
        grid = ThetaGrid(np.array(thetas)) if taus else None
        fallback = False
        h = math.nan
        if "cdf" in estimators or "quantile" in estimators:
            choice = cross_validate_bandwidth(sample, fallback=options.bandwidth_fallback)
            h, fallback = choice.h, choice.fallback

        if "variance" in estimators:
            variance = corrected_variance(draw.panel)
            put("psi2_hat", "psi2", _scalar(variance.psi2_hat, variance.se_hat, design.psi2), design.psi2)
            put(
                "psi2_check",
                "psi2",
                _scalar(variance.psi2_check, variance.se_check, design.psi2),
                design.psi2,
            )

        if "cdf" in estimators:
            naive = naive_cdf(sample, grid)
            analytic = corrected_cdf(sample, grid, h)
            for j, tau in enumerate(taus):
                put("naive_cdf", _tau_tag(tau), _scalar(naive.f_hat[j], naive.se[j], tau), tau)
                put(
                    "analytic_cdf",
                    _tau_tag(tau),
                    _scalar(analytic.f_corrected[j], analytic.se[j], tau),
                    tau,
                )

        if "quantile" in estimators:
            for tau, theta in zip(taus, thetas):
                estimate = corrected_quantile(sample, tau, h)
                put("naive_quantile", _tau_tag(tau), _scalar(estimate.q_naive, math.nan, theta), theta)
                put(
                    "analytic_quantile",
                    _tau_tag(tau),
                    _scalar(estimate.q_corrected, math.nan, theta),
                    theta,
                )

        if "split_jackknife" in estimators:
            split = SplitSpec.default_for(design.m, options.split_m1)
            jack = split_panel_cdf(draw.panel, split, grid)
            for j, (tau, theta) in enumerate(zip(taus, thetas)):
                put("split_cdf", _tau_tag(tau), _scalar(jack.f_corrected[j], jack.se[j], tau), tau)
                quantile = split_panel_quantile(draw.panel, split, tau)
                put(
                    "split_quantile",
                    _tau_tag(tau),
                    _scalar(quantile.q_corrected, math.nan, theta),
                    theta,
                )

        if "lambda_jackknife" in estimators:
            smooth = lambda_cdf(sample, grid, options.lam)
            for j, (tau, theta) in enumerate(zip(taus, thetas)):
                put("lambda_cdf", _tau_tag(tau), _scalar(smooth.f_corrected[j], smooth.se[j], tau), tau)
                quantile = lambda_quantile(sample, tau, options.lam)
                put(
                    "lambda_quantile",
                    _tau_tag(tau),
                    _scalar(quantile.q_corrected, math.nan, theta),
                    theta,
                )

        if "eb" in estimators:
            theta = draw.theta
            sigma2 = float(sample.noise_var.mean())
            put("plugin_theta", "theta_i", _units(sample.draws, theta), math.nan)
            put("james_stein_theta", "theta_i", _units(james_stein_shrink(sample), theta), math.nan)
            put("eb_theta", "theta_i", _units(empirical_bayes(sample, sigma2), theta), math.nan)
    except NoisyDrawsError as e:
        return _Outcome(replication, {}, {}, False, f"повторение {replication}: {e}")
    return _Outcome(replication, cells, truths, fallback, None)


def _aggregate(
    key: Tuple[str, str], cells: List[_Cell], truth: float, level: float
) -> ReportRow:
    """Сводит ячейку по всем учтенным повторениям."""
    count = len(cells)
    estimates = np.array([c.estimate for c in cells])
    ses = np.array([c.se for c in cells])
    errors = np.array([c.error for c in cells])
    squared = np.array([c.sq_error for c in cells])
    scalar = cells[0].scalar
    bias = float(errors.mean())
    mse = float(squared.mean())
    if scalar:
        std = float(np.std(estimates, ddof=1)) if count > 1 else math.nan
        root = float(rmse(estimates, np.full(count, truth)))
    else:
        std = math.sqrt(max(mse - bias * bias, 0.0))
        root = math.sqrt(mse)
    has_se = bool(np.isfinite(ses).all())
    if has_se:
        size = t_test_size(estimates, ses, truth, level)
        se_over_std = float(ses.mean() / std) if std > 0 else math.nan
        rejections = int(round(size * count))
        low, high = proportion_confint(rejections, count, alpha=SIZE_BAND_ALPHA, method="wilson")
        size_band = (float(low), float(high))
        size_se = (size_band[1] - size_band[0]) / (2.0 * 1.959963984540054)
    else:
        size = se_over_std = size_se = math.nan
        size_band = (math.nan, math.nan)
    root_count = math.sqrt(count)
    error_sd = float(np.std(errors, ddof=1)) if count > 1 else math.nan
    mc_se = {
        "bias": error_sd / root_count,
        "std": std / math.sqrt(2.0 * (count - 1)) if count > 1 else math.nan,
        "size": size_se,
        "rmse": (
            float(np.std(squared, ddof=1)) / (2.0 * root * root_count)
            if count > 1 and root > 0
            else math.nan
        ),
    }
    return ReportRow(
        estimator=key[0],
        target=key[1],
        true_value=truth,
        bias=bias,
        std=std,
        se_over_std=se_over_std,
        size_5pct=size,
        rmse=root,
        mse=mse,
        mc_se=mc_se,
        size_band=size_band,
    )


def _check_estimators(design: DesignSpec, estimators: Sequence[str], taus: Sequence[float]):
    estimators = tuple(dict.fromkeys(estimators))
    if not estimators:
        raise BadConfig("Не указан ни один оценщик")
    unknown = [e for e in estimators if e not in ESTIMATOR_TAGS]
    if unknown:
        raise BadConfig(
            f"Неизвестные оценщики: {', '.join(unknown)}; допустимы {', '.join(ESTIMATOR_TAGS)}"
        )
    if not design.is_panel:
        panel_only = [e for e in estimators if e in PANEL_ONLY_TAGS]
        if panel_only:
            raise BadSpec(f"Оценщики {', '.join(panel_only)} требуют панельного дизайна")
    taus = tuple(sorted({check_tau(t) for t in taus}))
    if not taus and any(e in TAU_TAGS for e in estimators):
        raise BadConfig("Для оценок функции распределения и квантилей нужен список taus")
    return estimators, taus


def run_experiment(
    design: DesignSpec,
    estimators: Sequence[str],
    taus: Sequence[float],
    replications: int,
    options: Optional[ExperimentOptions] = None,
    workers: Optional[int] = None,
) -> McReport:
    """
    Эксперимент Монте-Карло для одного дизайна.

    Args:
        design (DesignSpec): Дизайн симуляции
        estimators (Sequence[str]): Теги оценщиков из ESTIMATOR_TAGS
        taus (Sequence[float]): Уровни квантилей
        replications (int): Число повторений (не меньше 100)
        options (Optional[ExperimentOptions]): Параметры оценщиков
        workers (Optional[int]): Число потоков выполнения

    Returns:
        McReport: Отчет; повторения с ошибками исключаются и учитываются в excluded

    Raises:
        BadReplications: Если повторений меньше 100
        BadConfig: Если набор оценщиков или taus некорректен
        BadSpec: Если оценщику нужна панель, а дизайн ее не дает
    """
    options = options or ExperimentOptions()
    if int(replications) < MIN_REPLICATIONS:
        raise BadReplications(f"Нужно не меньше {MIN_REPLICATIONS} повторений, получено {replications}")
    if not (0.0 < options.level < 1.0):
        raise BadLevel(f"Уровень теста должен лежать в (0, 1), получено {options.level}")
    estimators, taus = _check_estimators(design, estimators, taus)
    if "split_jackknife" in estimators:
        SplitSpec.default_for(design.m, options.split_m1)
    replications = int(replications)
    workers = resolve_workers(workers)
    logger.info(
        "Эксперимент %s n=%d m=%d: %d повторений, оценщики %s, потоков %d",
        design.kind,
        design.n,
        design.m,
        replications,
        ", ".join(estimators),
        workers,
    )
    task = partial(_replicate, design, estimators, taus, options)
    outcomes = _map_replications(task, replications, workers)

    failed = [o for o in outcomes if o.error is not None]
    kept = [o for o in outcomes if o.error is None]
    if failed:
        logger.warning(
            "Исключено повторений: %d из %d; первое: %s", len(failed), replications, failed[0].error
        )
    if not kept:
        raise BadReplications("Все повторения завершились ошибкой")
    rows = []
    for key in kept[0].cells:
        cells = [o.cells[key] for o in kept]
        rows.append(_aggregate(key, cells, kept[0].truths[key], options.level))
    return McReport(
        design=design,
        replications=replications,
        level=options.level,
        rows=tuple(rows),
        excluded=len(failed),
        exclusions=tuple(o.error for o in failed[:MAX_LOGGED_EXCLUSIONS]),
        bandwidth_fallbacks=sum(o.fallback for o in kept),
    )


def rmse_grid(design: DesignSpec, kind: str = "uniform") -> ThetaGrid:
    """
    Сетка θ для RMSE.

    "uniform" - 201 точка на η ± 3ψ (на (0, 1) для долей),
    "deciles" - девять децилей истинного распределения.
    """
    truth = design_truth(design)
    if kind == "deciles":
        return ThetaGrid(np.array([float(truth.q(tau)) for tau in DECILES]))
    if kind != "uniform":
        raise BadConfig(f"Неизвестная сетка RMSE {kind!r}; допустимы {', '.join(RMSE_GRIDS)}")
    if design.is_panel:
        psi = math.sqrt(design.psi2)
        return linear_grid(
            design.eta - RMSE_GRID_WIDTH * psi, design.eta + RMSE_GRID_WIDTH * psi, RMSE_GRID_POINTS
        )
    return ThetaGrid(np.linspace(0.0, 1.0, RMSE_GRID_POINTS + 2)[1:-1])


def _curve_replicate(
    design: DesignSpec,
    estimators: Tuple[str, ...],
    grid: ThetaGrid,
    options: ExperimentOptions,
    replication: int,
):
    """Оценки F на сетке в одном повторении (или текст ошибки)."""
    try:
        draw = draw_design(design, replication)
        sample = draw.sample
        curves = {}
        for estimator in estimators:
            if estimator == "naive":
                curves[estimator] = naive_cdf(sample, grid).f_corrected
            elif estimator == "analytic":
                h = cross_validate_bandwidth(sample, fallback=options.bandwidth_fallback).h
                curves[estimator] = corrected_cdf(sample, grid, h).f_corrected
            elif estimator == "split_jackknife":
                split = SplitSpec.default_for(design.m, options.split_m1)
                curves[estimator] = split_panel_cdf(draw.panel, split, grid).f_corrected
            else:
                curves[estimator] = lambda_cdf(sample, grid, options.lam).f_corrected
        return curves
    except NoisyDrawsError as e:
        return f"повторение {replication}: {e}"


def curve_report(
    design: DesignSpec,
    estimators: Sequence[str],
    grid: Optional[ThetaGrid] = None,
    replications: int = MIN_REPLICATIONS,
    options: Optional[ExperimentOptions] = None,
    workers: Optional[int] = None,
) -> CurveReport:
    """
    Средние оценки F и RMSE на сетке θ по повторениям.

    RMSE оценщика: в каждом повторении квадрат ошибки усредняется по
    сетке, затем берется корень из среднего по повторениям.

    Returns:
        CurveReport: Таблица для графиков и сводные RMSE
    """
    options = options or ExperimentOptions()
    estimators = tuple(dict.fromkeys(estimators))
    unknown = [e for e in estimators if e not in CURVE_ESTIMATORS]
    if unknown or not estimators:
        raise BadConfig(
            f"Неизвестные оценщики RMSE: {', '.join(unknown) or '-'}; "
            f"допустимы {', '.join(CURVE_ESTIMATORS)}"
        )
    if "split_jackknife" in estimators and not design.is_panel:
        raise BadSpec("split_jackknife требует панельного дизайна")
    if int(replications) < MIN_REPLICATIONS:
        raise BadReplications(f"Нужно не меньше {MIN_REPLICATIONS} повторений, получено {replications}")
    grid = grid or rmse_grid(design)
    truth_f = np.asarray(design_truth(design).F(grid.points), dtype=float)
    task = partial(_curve_replicate, design, estimators, grid, options)
    outcomes = _map_replications(task, int(replications), resolve_workers(workers))
    kept = [o for o in outcomes if not isinstance(o, str)]
    excluded = len(outcomes) - len(kept)
    if excluded:
        logger.warning("Исключено повторений при расчете RMSE: %d", excluded)
    if not kept:
        raise BadReplications("Все повторения завершились ошибкой")
    frame = pd.DataFrame({"theta": grid.points, "true_f": truth_f})
    summary, mc_se = {}, {}
    for estimator in estimators:
        stacked = np.vstack([o[estimator] for o in kept])
        squared = (stacked - truth_f[None, :]) ** 2
        frame[f"mean_{estimator}"] = stacked.mean(axis=0)
        frame[f"rmse_{estimator}"] = np.sqrt(squared.mean(axis=0))
        per_replication = squared.mean(axis=1)
        summary[estimator] = math.sqrt(float(per_replication.mean()))
        mc_se[estimator] = (
            float(np.std(per_replication, ddof=1))
            / (2.0 * summary[estimator] * math.sqrt(len(kept)))
            if summary[estimator] > 0
            else math.nan
        )
    return CurveReport(frame, summary, mc_se, int(replications), excluded)


def rmse_curve(
    design: DesignSpec,
    estimator: str,
    grid: Optional[ThetaGrid] = None,
    replications: int = MIN_REPLICATIONS,
    options: Optional[ExperimentOptions] = None,
    workers: Optional[int] = None,
) -> float:
    """
    RMSE оценки функции распределения против истинной F.

    Args:
        design (DesignSpec): Дизайн
        estimator (str): "naive", "analytic", "split_jackknife" или "lambda_jackknife"
        grid (Optional[ThetaGrid]): Сетка θ (по умолчанию rmse_grid(design))
        replications (int): Число повторений

    Returns:
        float: RMSE
    """
    report = curve_report(design, [estimator], grid, replications, options, workers)
    return report.rmse[estimator]


def format_report(report: McReport) -> str:
    """Текстовая сводная таблица: bias, std, se/std, size, rmse."""
    frame = report.to_frame()[
        ["estimator", "target", "bias", "std", "se_over_std", "size_5pct", "rmse"]
    ]
    header = (
        f"{report.design.kind} (n, m) = ({report.design.n}, {report.design.m}), "
        f"R = {report.replications}, исключено {report.excluded}"
    )
    return header + "\n" + frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")


def cdf_curves(
    design: DesignSpec,
    estimators: Sequence[str],
    grid: Optional[ThetaGrid] = None,
    replications: int = MIN_REPLICATIONS,
    options: Optional[ExperimentOptions] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """Таблица для графиков: theta, true_f, mean_<оценщик>, rmse_<оценщик>."""
    return curve_report(design, estimators, grid, replications, options, workers).frame
