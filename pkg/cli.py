"""
Интерфейс командной строки.

Подкоманды:
- estimate  - оценка функции распределения и квантилей по файлу данных;
- simulate  - эксперименты Монте-Карло по JSON-конфигурации;
- bandwidth - выбор ширины окна кросс-валидацией.

Коды завершения: 0 - успех, 2 - ошибка данных или конфигурации,
3 - ошибка оценщика, 4 - исключенные повторения при --strict.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd

from analytic import (
    BOOTSTRAP_MIN_B,
    DEFAULT_BOOTSTRAP_B,
    DEFAULT_LEVEL,
    BandwidthSearch,
    CV_REFINE_ITERS,
    CV_RESOLUTION,
    bandwidth_trace,
    bootstrap_quantile_ci,
    check_bandwidth,
    corrected_cdf,
    corrected_quantile,
    cross_validate_bandwidth,
    default_search,
)
from core import (
    DEFAULT_GRID_POINTS,
    DEFAULT_SEED,
    BadGrid,
    BadInput,
    EstimatorError,
    NoisySample,
    Panel,
    QuantileEstimate,
    ThetaGrid,
    ValidationError,
    auto_grid,
    linear_grid,
)
from data_loader import (
    get_file_format_requirements,
    load_experiment_config,
    load_input,
    write_table,
)
from empirical import naive_cdf, quantile_plugin
from jackknife import (
    DEFAULT_LAMBDA,
    SplitSpec,
    lambda_cdf,
    lambda_quantile,
    split_panel_cdf,
    split_panel_quantile,
)
from runner import curve_report, format_report, rmse_grid, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATOR = 3
EXIT_EXCLUDED = 4
METHODS = ("naive", "analytic", "lambda-jackknife", "split-jackknife")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def parse_grid(text: str, sample: NoisySample) -> ThetaGrid:
    """
    Разбирает значение --grid: 'auto' или 'min:max:count'.

    Raises:
        BadGrid: Если строку нельзя разобрать
    """
    if text == "auto":
        return auto_grid(sample, DEFAULT_GRID_POINTS)
    parts = text.split(":")
    if len(parts) != 3:
        raise BadGrid(f"Сетка задается как auto или min:max:count, получено {text!r}")
    try:
        lower, upper, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise BadGrid(f"Некорректные числа в сетке {text!r}")
    return linear_grid(lower, upper, count)


def parse_taus(text: Optional[str]) -> List[float]:
    """Разбирает список уровней квантилей через запятую."""
    if not text:
        return []
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise BadInput(f"Некорректный список taus: {text!r}")


def _require_panel(panel: Optional[Panel]) -> Panel:
    if panel is None:
        raise BadInput("Метод split-jackknife требует панельный файл (unit, period, value)")
    return panel


def _check_flags(args) -> None:
    """
    Проверяет сочетание флагов estimate до чтения данных.

    Raises:
        BadInput: Если флаг не относится к выбранному методу
    """
    if args.method != "analytic":
        used = [
            flag
            for flag, given in (
                ("--h", args.h is not None),
                ("--cv", args.cv),
                ("--fallback", args.fallback),
                ("--bootstrap", args.bootstrap is not None),
            )
            if given
        ]
        if used:
            raise BadInput(f"Флаги {', '.join(used)} применимы только к --method analytic")
    if args.h is not None and args.fallback:
        raise BadInput("--fallback относится к кросс-валидации и не сочетается с --h")
    if args.bootstrap is not None:
        if args.bootstrap < BOOTSTRAP_MIN_B:
            raise BadInput(f"--bootstrap требует B ≥ {BOOTSTRAP_MIN_B}, получено {args.bootstrap}")
        if not args.taus:
            raise BadInput("--bootstrap строит интервалы для квантилей: укажите --taus")


def _bandwidth(args, sample: NoisySample) -> float:
    if not args.cv and args.h is not None:
        return check_bandwidth(args.h)
    choice = cross_validate_bandwidth(sample, fallback=args.fallback)
    logger.info("Ширина окна по кросс-валидации: h = %.6g", choice.h)
    return choice.h


def _quantiles(args, sample, panel, taus, h) -> List[QuantileEstimate]:
    estimates = []
    for tau in taus:
        if args.method == "naive":
            q = quantile_plugin(sample, tau)
            estimates.append(QuantileEstimate(tau=tau, q_naive=q, q_corrected=q, method="naive"))
        elif args.method == "analytic":
            if args.bootstrap is not None:
                estimates.append(
                    bootstrap_quantile_ci(sample, tau, h, args.bootstrap, args.level, args.seed)
                )
            else:
                estimates.append(corrected_quantile(sample, tau, h))
        elif args.method == "lambda-jackknife":
            estimates.append(lambda_quantile(sample, tau, args.lam))
        else:
            split = SplitSpec.default_for(panel.m, args.m1)
            estimates.append(split_panel_quantile(panel, split, tau))
    return estimates


def _emit(frame: pd.DataFrame, path: Optional[str]) -> None:
    if path:
        write_table(frame, path)
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")


def cmd_estimate(args) -> int:
    """Оценивает F и квантили по файлу данных и записывает таблицы CSV."""
    _check_flags(args)
    sample, panel = load_input(args.input, args.m)
    if args.method == "split-jackknife":
        _require_panel(panel)
    taus = parse_taus(args.taus)
    grid = parse_grid(args.grid, sample)
    h = _bandwidth(args, sample) if args.method == "analytic" else None

    if args.method == "naive":
        estimate = naive_cdf(sample, grid)
    elif args.method == "analytic":
        estimate = corrected_cdf(sample, grid, h)
    elif args.method == "lambda-jackknife":
        estimate = lambda_cdf(sample, grid, args.lam)
    else:
        estimate = split_panel_cdf(panel, SplitSpec.default_for(panel.m, args.m1), grid)
    _emit(estimate.to_frame(clamp=args.clamp), args.out)

    if taus:
        quantiles = _quantiles(args, sample, panel, taus, h)
        frame = pd.DataFrame.from_records([q.to_record() for q in quantiles])
        target = args.quantiles_out
        if target is None and args.out:
            out = Path(args.out)
            target = str(out.with_name(f"{out.stem}_quantiles{out.suffix or '.csv'}"))
        _emit(frame, target)
    return EXIT_OK


def cmd_simulate(args) -> int:
    """Запускает эксперименты из конфигурации и записывает отчеты JSON и CSV."""
    configs = load_experiment_config(args.config, strict=args.strict)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    excluded = 0
    for config in configs:
        replications = args.replications or config.replications
        report = run_experiment(
            config.design,
            config.estimators,
            config.taus,
            replications,
            options=config.options,
            workers=args.workers,
        )
        (out_dir / f"{config.name}.json").write_text(report.to_json() + "\n", encoding="utf-8")
        write_table(report.to_frame(), out_dir / f"{config.name}.csv")
        print(f"[{config.name}]")
        print(format_report(report))
        excluded += report.excluded

        if config.rmse:
            curves = curve_report(
                config.design,
                config.rmse,
                rmse_grid(config.design, config.rmse_grid),
                replications,
                options=config.options,
                workers=args.workers,
            )
            write_table(curves.summary(), out_dir / f"{config.name}_rmse.csv")
            if config.curves:
                write_table(curves.frame, out_dir / f"{config.name}_curves.csv")
            for estimator, value in curves.rmse.items():
                print(f"RMSE {estimator}: {value:.4f} (MC SE {curves.mc_se[estimator]:.4f})")
            excluded += curves.excluded

    if excluded:
        logger.warning("Исключено повторений во всех экспериментах: %d", excluded)
        if args.strict:
            return EXIT_EXCLUDED
    return EXIT_OK


def _search(args, sample: NoisySample) -> Optional[BandwidthSearch]:
    """Окно поиска из флагов; None, если используются значения по умолчанию."""
    window = (args.h_min, args.h_max, args.resolution, args.refine)
    if window == (None, None, CV_RESOLUTION, CV_REFINE_ITERS):
        return None
    base = default_search(sample) if args.h_min is None or args.h_max is None else None
    return BandwidthSearch(
        h_min=args.h_min if args.h_min is not None else base.h_min,
        h_max=args.h_max if args.h_max is not None else base.h_max,
        resolution=args.resolution,
        refine_iters=args.refine,
    )


def cmd_bandwidth(args) -> int:
    """Печатает ширину окна ȟ; с --trace записывает таблицу (h, v(h))."""
    sample, _ = load_input(args.input, args.m)
    search = _search(args, sample)
    if args.trace:
        write_table(bandwidth_trace(sample, search), args.trace)
    choice = cross_validate_bandwidth(sample, search, fallback=args.fallback)
    suffix = " (запасное значение)" if choice.fallback else ""
    print(f"{choice.h:.12g}{suffix}")
    return EXIT_OK


def _requirements_epilog() -> str:
    lines = ["Требования к входным файлам:"]
    lines += [f"  - {text}" for text in get_file_format_requirements().values()]
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    """Создает парсер аргументов со всеми подкомандами."""
    parser = argparse.ArgumentParser(
        prog="noisy-draws",
        description="Оценка распределения латентных параметров по зашумленным оценкам",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Подробный журнал")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Только предупреждения")
    subparsers = parser.add_subparsers(dest="command", required=True)

    estimate = subparsers.add_parser(
        "estimate",
        help="Оценка F и квантилей по файлу",
        epilog=_requirements_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    estimate.add_argument("input", help="CSV или Excel: theta_hat,sigma2 или unit,period,value")
    estimate.add_argument("--m", type=float, help="Эффективный размер выборки на единицу")
    estimate.add_argument("--method", choices=METHODS, default="analytic")
    bandwidth_group = estimate.add_mutually_exclusive_group()
    bandwidth_group.add_argument("--h", type=float, help="Фиксированная ширина окна")
    bandwidth_group.add_argument(
        "--cv", action="store_true", help="Ширина окна кросс-валидацией (по умолчанию)"
    )
    estimate.add_argument(
        "--fallback", action="store_true", help="Запасная ширина окна, если минимума нет"
    )
    estimate.add_argument("--taus", help="Уровни квантилей через запятую")
    estimate.add_argument("--grid", default="auto", help="auto или min:max:count")
    estimate.add_argument(
        "--bootstrap",
        type=int,
        nargs="?",
        const=DEFAULT_BOOTSTRAP_B,
        metavar="B",
        help=f"Бутстрап-интервал для q̌ (по умолчанию B = {DEFAULT_BOOTSTRAP_B})",
    )
    estimate.add_argument("--level", type=float, default=DEFAULT_LEVEL)
    estimate.add_argument("--seed", type=int, default=DEFAULT_SEED)
    estimate.add_argument("--lam", type=float, default=DEFAULT_LAMBDA, help="λ для λ-jackknife")
    estimate.add_argument("--m1", type=int, help="Первый блок split-panel jackknife")
    estimate.add_argument("--clamp", action="store_true", help="Обрезать f_corrected до [0, 1]")
    estimate.add_argument("--out", help="CSV для таблицы F (по умолчанию stdout)")
    estimate.add_argument("--quantiles-out", help="CSV для таблицы квантилей")
    estimate.set_defaults(handler=cmd_estimate)

    simulate = subparsers.add_parser("simulate", help="Эксперименты Монте-Карло")
    simulate.add_argument("config", help="JSON-конфигурация экспериментов")
    simulate.add_argument("--out-dir", default="results")
    simulate.add_argument(
        "--strict", action="store_true", help="Отклонять неизвестные ключи и исключения"
    )
    simulate.add_argument("--replications", type=int, help="Переопределить число повторений")
    simulate.add_argument("--workers", type=int, help="Число потоков выполнения")
    simulate.set_defaults(handler=cmd_simulate)

    bandwidth = subparsers.add_parser("bandwidth", help="Выбор ширины окна")
    bandwidth.add_argument("input")
    bandwidth.add_argument("--m", type=float)
    bandwidth.add_argument("--h-min", type=float)
    bandwidth.add_argument("--h-max", type=float)
    bandwidth.add_argument("--resolution", type=int, default=CV_RESOLUTION)
    bandwidth.add_argument("--refine", type=int, default=CV_REFINE_ITERS)
    bandwidth.add_argument("--fallback", action="store_true")
    bandwidth.add_argument("--trace", help="CSV для таблицы (h, v(h))")
    bandwidth.set_defaults(handler=cmd_bandwidth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Точка входа командной строки.

    Returns:
        int: Код завершения
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INPUT

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        return args.handler(args)
    except (ValidationError, FileNotFoundError) as e:
        logger.error("Ошибка данных: %s", e)
        return EXIT_INPUT
    except EstimatorError as e:
        logger.error("Ошибка оценки: %s", e)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
