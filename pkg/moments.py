"""
Модуль скорректированных моментов.

Коррекция дисперсии латентного распределения по панели, коррекция
гладких функционалов μ = E φ(θ) через вторую производную φ и расчет
эмпирического размера t-теста для таблиц Монте-Карло.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from core import (
    ArrayLike,
    BadLevel,
    LengthMismatch,
    NoisySample,
    NonFiniteTransform,
    Panel,
    normal_quantile,
)
from empirical import basis_se, panel_moments

logger = logging.getLogger(__name__)

DEFAULT_TEST_LEVEL = 0.05


@dataclass(frozen=True)
class VarianceEstimate:
    """Наивная ψ̂² и скорректированная ψ̌² оценки дисперсии θ со стандартными ошибками."""

    psi2_hat: float
    psi2_check: float
    se_hat: float
    se_check: float


@dataclass(frozen=True)
class MomentEstimate:
    """Наивная μ̂ и скорректированная μ̌ оценки функционала E φ(θ)."""

    mu_hat: float
    mu_check: float
    se: float


def corrected_variance(panel: Panel) -> VarianceEstimate:
    """
    Оценки дисперсии фиксированных эффектов.

    ψ̂² - выборочная дисперсия средних по строкам,
    ψ̌² = (n−1)⁻¹ Σ[(ϑᵢ−ϑ̄)² − s²ᵢ/m].

    Args:
        panel (Panel): Панель наблюдений

    Returns:
        VarianceEstimate: Оценки и стандартные ошибки по слагаемым на единицу
    """
    means, variances = panel_moments(panel)
    n, m = panel.n, panel.m
    squared = (means - means.mean()) ** 2
    corrected = squared - variances / m
    return VarianceEstimate(
        psi2_hat=float(squared.sum() / (n - 1)),
        psi2_check=float(corrected.sum() / (n - 1)),
        se_hat=basis_se(squared),
        se_check=basis_se(corrected),
    )


def _evaluate(func: Callable, draws: np.ndarray, name: str) -> np.ndarray:
    """Применяет пользовательскую функцию к оценкам (векторно или поэлементно)."""
    try:
        values = np.asarray(func(draws), dtype=float)
        if values.shape != draws.shape:
            values = np.broadcast_to(values, draws.shape).astype(float)
    except (TypeError, ValueError):
        values = np.array([func(float(x)) for x in draws], dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteTransform(
            f"{name} вернула нечисловое значение в точке ϑ = {draws[i]}", index=i
        )
    return values


def corrected_moment(
    sample: NoisySample,
    phi: Callable[[float], float],
    phi_dd: Callable[[float], float],
) -> MomentEstimate:
    """
    Коррекция гладкого функционала μ = E φ(θ).

    μ̂ = mean φ(ϑᵢ), b̂_μ = mean[φ″(ϑᵢ)σᵢ²]/2, μ̌ = μ̂ − b̂_μ/m.

    Args:
        sample (NoisySample): Выборка
        phi (Callable[[float], float]): Функция φ
        phi_dd (Callable[[float], float]): Ее вторая производная φ″

    Returns:
        MomentEstimate: μ̂, μ̌ и SE по базису φ(ϑᵢ) − φ″(ϑᵢ)σᵢ²/(2m)

    Raises:
        NonFiniteTransform: Если φ или φ″ дают нечисловое значение
    """
    values = _evaluate(phi, sample.draws, "φ")
    curvature = _evaluate(phi_dd, sample.draws, "φ″")
    basis = values - curvature * sample.noise_var / (2.0 * sample.m)
    return MomentEstimate(
        mu_hat=float(values.mean()), mu_check=float(basis.mean()), se=basis_se(basis)
    )


def t_test_size(
    estimates: ArrayLike,
    ses: ArrayLike,
    true_value: float,
    level: float = DEFAULT_TEST_LEVEL,
) -> float:
    """
    Доля повторений, в которых двусторонний t-тест отвергает H₀.

    Args:
        estimates (ArrayLike): Оценки по повторениям
        ses (ArrayLike): Их стандартные ошибки
        true_value (float): Истинное значение
        level (float): Номинальный уровень теста

    Returns:
        float: Доля |est − true|/se > Φ⁻¹(1 − level/2)

    Raises:
        LengthMismatch: Если длины векторов различаются
        BadLevel: Если level вне (0, 1)
    """
    estimates = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    if estimates.shape != ses.shape:
        raise LengthMismatch(f"Оценок {estimates.size}, стандартных ошибок {ses.size}")
    if not (0.0 < level < 1.0):
        raise BadLevel(f"Уровень теста должен лежать в (0, 1), получено {level}")
    if estimates.size == 0:
        return math.nan
    critical = normal_quantile(1.0 - level / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        statistic = np.abs(estimates - true_value) / ses
    return float(np.mean(np.nan_to_num(statistic, nan=0.0) > critical))
