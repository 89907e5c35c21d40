#!/usr/bin/env python3
"""
Скрипт для проверки всех необходимых зависимостей.

Кроме импорта пакетов проверяет, что доступны функции, на которые
опираются оценщики, и что модули проекта импортируются без ошибок.
"""

import importlib
import sys

DEPENDENCIES = [
    ("numpy", "NumPy", "random.Philox"),
    ("scipy", "SciPy", "special.ndtri"),
    ("scipy.optimize", "SciPy optimize", "bisect"),
    ("scipy.integrate", "SciPy integrate", "quad"),
    ("pandas", "Pandas", "read_csv"),
    ("openpyxl", "OpenPyXL", None),
    ("statsmodels.stats.proportion", "Statsmodels", "proportion_confint"),
    ("statsmodels.tools.eval_measures", "Statsmodels eval_measures", "rmse"),
]

PROJECT_MODULES = [
    "core",
    "empirical",
    "analytic",
    "jackknife",
    "moments",
    "comparators",
    "dgp",
    "runner",
    "data_loader",
    "cli",
]


def check_import(module_name, package_name=None, attribute=None):
    """Проверяет возможность импорта модуля и наличие атрибута."""
    label = package_name or module_name
    try:
        target = importlib.import_module(module_name)
        for part in (attribute or "").split("."):
            if part:
                target = getattr(target, part)
    except ImportError as e:
        print(f"[ERROR] {label} - НЕ УСТАНОВЛЕН")
        print(f"   Ошибка: {e}")
        return False
    except AttributeError:
        print(f"[ERROR] {label} - нет {attribute}, обновите пакет")
        return False
    print(f"[OK] {label} - установлен")
    return True


def main():
    """Основная функция проверки."""
    print("Проверка зависимостей noisy-draws...")
    print("=" * 50)

    all_ok = True
    for module, name, attribute in DEPENDENCIES:
        if not check_import(module, name, attribute):
            all_ok = False

    if all_ok:
        print("-" * 50)
        for module in PROJECT_MODULES:
            if not check_import(module):
                all_ok = False

    print("=" * 50)
    if all_ok:
        print("SUCCESS: Все зависимости установлены корректно!")
        print("Справка по запуску: python cli.py --help")
    else:
        print("WARNING: Обнаружены отсутствующие зависимости!")
        print("Установите их командой: pip install -r requirements.txt")

    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
