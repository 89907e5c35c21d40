"""
Модуль для загрузки входных данных и конфигураций экспериментов.

Поддерживаются два формата таблиц (CSV или Excel):
- оценки по единицам: столбцы theta_hat и sigma2 (плюс флаг --m);
- длинная панель: столбцы unit, period, value.

Ошибки формата сообщают номер строки файла (заголовок - строка 1).
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from core import (
    BadConfig,
    BadInput,
    NoisyDrawsError,
    NoisySample,
    Panel,
    ValidationError,
)
from dgp import DesignSpec
from empirical import reduce_panel
from jackknife import DEFAULT_LAMBDA
from runner import ExperimentConfig, ExperimentOptions, RMSE_GRIDS

logger = logging.getLogger(__name__)

# Константы форматов
SUPPORTED_FILE_EXTENSIONS = {".xlsx", ".xls", ".csv"}
SAMPLE_COLUMNS = ("theta_hat", "sigma2")
PANEL_COLUMNS = ("unit", "period", "value")
HEADER_LINES = 1
CONFIG_SCHEMA_VERSION = 1
CONFIG_TOP_KEYS = {"schema", "experiments"}
EXPERIMENT_KEYS = {
    "name",
    "design",
    "estimators",
    "taus",
    "replications",
    "rmse",
    "rmse_grid",
    "level",
    "lambda",
    "split_m1",
    "bandwidth_fallback",
    "curves",
}
DESIGN_KEYS = {"kind", "n", "m", "psi2", "sigma2", "eta", "seed"}
CSV_FLOAT_FORMAT = "%.17g"
MAX_REPORTED_ERRORS = 20


def _determine_file_type(file_source: Union[str, Path]) -> str:
    """
    Определяет тип файла на основе расширения.

    Args:
        file_source (Union[str, Path]): Путь к файлу

    Returns:
        str: Тип файла ('excel' или 'csv')

    Raises:
        BadInput: Если формат файла не поддерживается
    """
    file_extension = Path(str(file_source)).suffix.lower()

    if file_extension in {".xlsx", ".xls"}:
        return "excel"
    elif file_extension == ".csv":
        return "csv"
    raise BadInput(
        f"Неподдерживаемый формат файла: {file_extension or 'без расширения'}. "
        f"Поддерживаются: {', '.join(sorted(SUPPORTED_FILE_EXTENSIONS))}"
    )


def _read_table(file_path: Union[str, Path]) -> pd.DataFrame:
    """
    Читает таблицу из локального файла.

    Raises:
        FileNotFoundError: Если файл не найден
        BadInput: Если формат не поддерживается или файл не читается
    """
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"Файл {file_path} не найден")
    file_type = _determine_file_type(path)
    try:
        if file_type == "excel":
            return pd.read_excel(path)
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, ValueError) as e:
        raise BadInput(f"Не удалось прочитать {file_path}: {e}")


def _line(row: int) -> int:
    """Номер строки файла для строки данных с номером row (с нуля)."""
    return row + HEADER_LINES + 1


def _normalized_columns(df: pd.DataFrame) -> Dict[str, object]:
    return {str(col).strip().lower(): col for col in df.columns}


def detect_layout(df: pd.DataFrame) -> str:
    """
    Определяет формат таблицы по названиям столбцов.

    Returns:
        str: 'sample' или 'panel'

    Raises:
        BadInput: Если набор столбцов не подходит ни под один формат
    """
    columns = _normalized_columns(df)
    if all(col in columns for col in SAMPLE_COLUMNS):
        return "sample"
    if all(col in columns for col in PANEL_COLUMNS):
        return "panel"
    raise BadInput(
        "Не найдены обязательные столбцы: ожидается "
        f"{', '.join(SAMPLE_COLUMNS)} или {', '.join(PANEL_COLUMNS)}; "
        f"в файле: {', '.join(str(c) for c in df.columns)}"
    )


def _numeric(df: pd.DataFrame, column: str) -> pd.Series:
    """Столбец как числа; нечисловые ячейки становятся NaN."""
    return pd.to_numeric(df[_normalized_columns(df)[column]], errors="coerce")


def validate_file_format(df: pd.DataFrame) -> Dict[str, Union[bool, List[str]]]:
    """
    Валидирует формат таблицы до построения выборки.

    Args:
        df (pd.DataFrame): DataFrame для валидации

    Returns:
        Dict[str, Union[bool, List[str]]]: Результат валидации с деталями
        (is_valid, layout, errors, warnings, suggestions)
    """
    validation_result = {
        "is_valid": True,
        "layout": None,
        "errors": [],
        "warnings": [],
        "suggestions": [],
    }

    if df.empty:
        validation_result["is_valid"] = False
        validation_result["errors"].append("Файл пустой или не содержит данных")
        return validation_result

    try:
        layout = detect_layout(df)
    except BadInput as e:
        validation_result["is_valid"] = False
        validation_result["errors"].append(str(e))
        validation_result["suggestions"].append(
            "Используйте заголовок theta_hat,sigma2 или unit,period,value"
        )
        return validation_result
    validation_result["layout"] = layout

    value_columns = SAMPLE_COLUMNS if layout == "sample" else ("value",)
    for column in value_columns:
        values = _numeric(df, column)
        for row in np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float))):
            validation_result["errors"].append(
                f"строка {_line(int(row))}: нечисловое значение в столбце {column}"
            )
    if layout == "sample":
        sigma2 = _numeric(df, "sigma2").to_numpy(dtype=float)
        for row in np.flatnonzero(np.isfinite(sigma2) & (sigma2 <= 0.0)):
            validation_result["errors"].append(
                f"строка {_line(int(row))}: дисперсия sigma2 должна быть положительной"
            )
        if len(df) < 2:
            validation_result["errors"].append("Нужно минимум 2 строки с оценками")
    else:
        columns = _normalized_columns(df)
        keys = df[[columns["unit"], columns["period"]]]
        duplicated = keys.duplicated()
        for row in np.flatnonzero(duplicated.to_numpy()):
            validation_result["errors"].append(
                f"строка {_line(int(row))}: повтор пары unit, period"
            )

    extra = set(_normalized_columns(df)) - set(
        SAMPLE_COLUMNS if layout == "sample" else PANEL_COLUMNS
    )
    if extra:
        validation_result["warnings"].append(
            f"Лишние столбцы будут проигнорированы: {', '.join(sorted(extra))}"
        )

    if validation_result["errors"]:
        validation_result["is_valid"] = False
    return validation_result


def _check_format(df: pd.DataFrame, file_path: Union[str, Path]) -> str:
    """
    Проверяет таблицу целиком и сообщает все ошибки строк одним исключением.

    Returns:
        str: Формат таблицы ('sample' или 'panel')

    Raises:
        BadInput: Если проверка формата не пройдена
    """
    validation_result = validate_file_format(df)
    for warning in validation_result["warnings"]:
        logger.warning("%s: %s", file_path, warning)
    if validation_result["is_valid"]:
        return validation_result["layout"]

    errors = validation_result["errors"]
    for error in errors:
        logger.error("%s: %s", file_path, error)
    shown = "; ".join(errors[:MAX_REPORTED_ERRORS])
    if len(errors) > MAX_REPORTED_ERRORS:
        shown += f"; и еще {len(errors) - MAX_REPORTED_ERRORS}"
    requirements = get_file_format_requirements()
    hints = validation_result["suggestions"] + [
        requirements.get(validation_result["layout"] or "formats", requirements["formats"])
    ]
    raise BadInput(
        f"Файл {file_path} не прошел проверку формата (ошибок: {len(errors)}): {shown}. "
        f"{'. '.join(hints)}"
    )


def load_sample_frame(df: pd.DataFrame, m: float) -> NoisySample:
    """
    Строит выборку из таблицы оценок theta_hat, sigma2.

    Args:
        df (pd.DataFrame): Таблица
        m (float): Эффективный размер выборки на единицу

    Returns:
        NoisySample: Проверенная выборка

    Raises:
        BadInput: Ошибка конкретной строки (с номером строки файла)
        ValidationError: Прочие ошибки выборки
    """
    draws = _numeric(df, "theta_hat").to_numpy(dtype=float)
    noise_var = _numeric(df, "sigma2").to_numpy(dtype=float)
    try:
        return NoisySample(draws, noise_var, m)
    except ValidationError as e:
        if e.index is None:
            raise
        raise BadInput(f"строка {_line(e.index)}: {e}", index=e.index)


def load_panel_frame(df: pd.DataFrame) -> Panel:
    """
    Строит сбалансированную панель из длинной таблицы unit, period, value.

    Единицы идут в порядке первого появления, периоды сортируются.

    Raises:
        BadInput: Повторы пар (unit, period), несбалансированная панель или нечисловые значения
    """
    columns = _normalized_columns(df)
    frame = pd.DataFrame(
        {
            "unit": df[columns["unit"]],
            "period": df[columns["period"]],
            "value": _numeric(df, "value"),
        }
    )
    bad = np.flatnonzero(~np.isfinite(frame["value"].to_numpy(dtype=float)))
    if bad.size:
        row = int(bad[0])
        raise BadInput(f"строка {_line(row)}: нечисловое значение в столбце value", index=row)
    duplicated = np.flatnonzero(frame.duplicated(["unit", "period"]).to_numpy())
    if duplicated.size:
        row = int(duplicated[0])
        raise BadInput(
            f"строка {_line(row)}: повтор периода {frame['period'].iloc[row]!r} "
            f"для единицы {frame['unit'].iloc[row]!r}",
            index=row,
        )
    units = list(pd.unique(frame["unit"]))
    wide = frame.pivot(index="unit", columns="period", values="value")
    wide = wide.reindex(index=units).sort_index(axis=1)
    missing = wide.isna().any(axis=1)
    if missing.any():
        unit = missing[missing].index[0]
        raise BadInput(
            f"Несбалансированная панель: у единицы {unit!r} есть не все периоды",
            unit=unit,
        )
    return Panel(wide.to_numpy(dtype=float), units=tuple(units))


def load_input(file_path: Union[str, Path], m: Optional[float] = None):
    """
    Загружает входной файл любого поддерживаемого формата.

    Args:
        file_path (Union[str, Path]): Путь к CSV или Excel
        m (Optional[float]): Эффективный размер выборки (обязателен для оценок по единицам)

    Returns:
        Tuple[NoisySample, Optional[Panel]]: Выборка и панель (если файл панельный)

    Raises:
        FileNotFoundError: Если файл не найден
        BadInput: Если формат или строки файла некорректны
        ZeroVariance: Если у единицы панели нулевая выборочная дисперсия
    """
    df = _read_table(file_path)
    layout = _check_format(df, file_path)
    logger.info("Загружен файл %s: %d строк, формат %s", file_path, len(df), layout)
    if layout == "sample":
        if m is None:
            raise BadInput("Для таблицы theta_hat, sigma2 нужно указать --m")
        return load_sample_frame(df, m), None
    panel = load_panel_frame(df)
    if m is not None and float(m) != panel.m:
        logger.warning("--m=%s игнорируется: в панели %d периодов", m, panel.m)
    return reduce_panel(panel), panel


def write_table(df: pd.DataFrame, file_path: Union[str, Path]) -> None:
    """Записывает таблицу в CSV с полной точностью чисел."""
    path = Path(file_path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("Записан файл %s (%d строк)", path, len(df))


def get_file_format_requirements() -> Dict[str, str]:
    """
    Возвращает требования к формату входных файлов.

    Returns:
        Dict[str, str]: Словарь с требованиями
    """
    return {
        "formats": "CSV (.csv) или Excel (.xlsx, .xls), первая строка - заголовок",
        "sample": "Оценки по единицам: столбцы theta_hat и sigma2 (σ²ᵢ > 0), плюс флаг --m",
        "panel": "Длинная панель: столбцы unit, period, value; у каждой единицы все периоды",
        "numbers": "Десятичный разделитель - точка, пропуски не допускаются",
        "minimum": "Минимум 2 единицы; в панели минимум 2 периода",
    }


def _check_keys(found: set, allowed: set, where: str, strict: bool) -> None:
    unknown = sorted(found - allowed)
    if not unknown:
        return
    message = f"{where}: неизвестные ключи {', '.join(unknown)}"
    if strict:
        raise BadConfig(message)
    logger.warning("%s; они будут проигнорированы", message)


def _as_number(value, name: str, where: str) -> float:
    if isinstance(value, bool):
        raise BadConfig(f"{where}: {name} должно быть числом, получено {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise BadConfig(f"{where}: {name} должно быть числом, получено {value!r}")
    if not math.isfinite(number):
        raise BadConfig(f"{where}: {name} должно быть конечным, получено {value!r}")
    return number


def _parse_experiment(entry: dict, position: int, strict: bool) -> ExperimentConfig:
    """Разбирает один эксперимент конфигурации."""
    if not isinstance(entry, dict):
        raise BadConfig(f"Эксперимент {position}: ожидается объект")
    name = str(entry.get("name") or f"experiment{position}")
    where = f"Эксперимент {name}"
    _check_keys(set(entry), EXPERIMENT_KEYS, where, strict)
    design_entry = entry.get("design")
    if not isinstance(design_entry, dict):
        raise BadConfig(f"{where}: отсутствует объект design")
    _check_keys(set(design_entry), DESIGN_KEYS, f"{where}, design", strict)
    try:
        design = DesignSpec(**{k: v for k, v in design_entry.items() if k in DESIGN_KEYS})
    except TypeError as e:
        raise BadConfig(f"{where}: некорректный design: {e}")
    except NoisyDrawsError as e:
        raise BadConfig(f"{where}: {e}")

    estimators = entry.get("estimators")
    if not isinstance(estimators, list) or not all(isinstance(e, str) for e in estimators):
        raise BadConfig(f"{where}: estimators должен быть списком строк")
    taus = entry.get("taus", [])
    if not isinstance(taus, list):
        raise BadConfig(f"{where}: taus должен быть списком чисел")
    taus = tuple(_as_number(t, "tau", where) for t in taus)
    replications = entry.get("replications")
    if isinstance(replications, bool) or not isinstance(replications, int):
        raise BadConfig(f"{where}: replications должно быть целым, получено {replications!r}")
    rmse_grid = entry.get("rmse_grid", "uniform")
    if rmse_grid not in RMSE_GRIDS:
        raise BadConfig(f"{where}: rmse_grid должен быть одним из {', '.join(RMSE_GRIDS)}")
    rmse = entry.get("rmse", [])
    if not isinstance(rmse, list):
        raise BadConfig(f"{where}: rmse должен быть списком оценщиков")
    split_m1 = entry.get("split_m1")
    if split_m1 is not None and (isinstance(split_m1, bool) or not isinstance(split_m1, int)):
        raise BadConfig(f"{where}: split_m1 должно быть целым или null")
    options = ExperimentOptions(
        level=_as_number(entry.get("level", 0.05), "level", where),
        lam=_as_number(entry.get("lambda", DEFAULT_LAMBDA), "lambda", where),
        split_m1=split_m1,
        bandwidth_fallback=bool(entry.get("bandwidth_fallback", True)),
    )
    return ExperimentConfig(
        name=name,
        design=design,
        estimators=tuple(estimators),
        taus=taus,
        replications=replications,
        options=options,
        rmse=tuple(str(e) for e in rmse),
        rmse_grid=rmse_grid,
        curves=bool(entry.get("curves", False)),
    )


def load_experiment_config(
    file_path: Union[str, Path], strict: bool = False
) -> List[ExperimentConfig]:
    """
    Загружает JSON-конфигурацию экспериментов.

    Args:
        file_path (Union[str, Path]): Путь к JSON
        strict (bool): Отклонять неизвестные ключи вместо предупреждения

    Returns:
        List[ExperimentConfig]: Эксперименты в порядке файла

    Raises:
        FileNotFoundError: Если файл не найден
        BadConfig: Если конфигурация некорректна
    """
    path = Path(file_path)
    if not path.exists():
        raise FileNotFoundError(f"Файл {file_path} не найден")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise BadConfig(f"{file_path}: некорректный JSON (строка {e.lineno}): {e.msg}")
    if not isinstance(payload, dict):
        raise BadConfig(f"{file_path}: ожидается JSON-объект")
    if payload.get("schema") != CONFIG_SCHEMA_VERSION:
        raise BadConfig(
            f"{file_path}: поддерживается schema {CONFIG_SCHEMA_VERSION}, "
            f"получено {payload.get('schema')!r}"
        )
    _check_keys(set(payload), CONFIG_TOP_KEYS, str(file_path), strict)
    experiments = payload.get("experiments")
    if not isinstance(experiments, list) or not experiments:
        raise BadConfig(f"{file_path}: список experiments пуст или отсутствует")
    configs = [_parse_experiment(entry, k, strict) for k, entry in enumerate(experiments)]
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise BadConfig(f"{file_path}: имена экспериментов должны быть уникальными")
    return configs
