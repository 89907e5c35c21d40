"""
Модуль оценок-конкурентов для отдельных θᵢ.

Параметрическое сжатие к среднему (с известными параметрами и его
James–Stein-аналог с оцененными параметрами) и эмпирический Байес по
формуле Твиди с ядерной оценкой плотности.
"""

import logging
import math
from typing import Optional, Tuple, Union

import numpy as np

from core import BadBandwidth, BadParams, NoisySample, normal_pdf

logger = logging.getLogger(__name__)

SILVERMAN_CONSTANT = 1.06
DENSITY_FLOOR = 1e-300
KDE_BLOCK = 1024
KDE_MAX_CELLS = 1 << 22


def _check_positive(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise BadParams(f"{name} должно быть числом, получено {value!r}")
    if not math.isfinite(value) or value <= 0.0:
        raise BadParams(f"{name} должно быть положительным, получено {value}")
    return value


def parametric_shrink(
    sample: NoisySample, sigma2: float, psi2: float, eta: float = 0.0
) -> np.ndarray:
    """
    Сжатие η + (1 − (σ²/m)/(σ²/m + ψ²))(ϑᵢ − η).

    Args:
        sample (NoisySample): Выборка
        sigma2 (float): Дисперсия шума σ²
        psi2 (float): Дисперсия θ
        eta (float): Среднее θ

    Returns:
        np.ndarray: Сжатые оценки

    Raises:
        BadParams: Если σ² ≤ 0 или ψ² ≤ 0
    """
    sigma2 = _check_positive("σ²", sigma2)
    psi2 = _check_positive("ψ²", psi2)
    if not math.isfinite(float(eta)):
        raise BadParams(f"η должно быть конечным, получено {eta}")
    noise = sigma2 / sample.m
    return eta + (1.0 - noise / (noise + psi2)) * (sample.draws - eta)


def james_stein_shrink(sample: NoisySample) -> np.ndarray:
    """
    Сжатие с оцененными параметрами (положительная часть).

    η̂ - среднее оценок, σ̂² - среднее σᵢ², ψ̌² = max(var ϑ − σ̂²/m, 0);
    при ψ̌² = 0 все оценки сжимаются в η̂.
    """
    eta = float(sample.draws.mean())
    noise = float(sample.noise_var.mean()) / sample.m
    psi2 = max(float(np.var(sample.draws, ddof=1)) - noise, 0.0)
    return eta + psi2 / (psi2 + noise) * (sample.draws - eta)


def silverman_bandwidth(draws: np.ndarray) -> float:
    """
    Правило Сильвермана 1.06·s·n^{−1/5}.

    Raises:
        BadBandwidth: Если разброс оценок нулевой
    """
    draws = np.asarray(draws, dtype=float)
    s = float(np.std(draws, ddof=1))
    if s <= 0.0:
        raise BadBandwidth("Нулевой разброс оценок: правило Сильвермана неприменимо")
    return SILVERMAN_CONSTANT * s * draws.size ** (-0.2)


def _kde_with_derivative(
    draws: np.ndarray, points: np.ndarray, h: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Гауссова ядерная оценка p̂ и ее производной p̂′ в точках."""
    n = draws.size
    density = np.empty(points.size)
    slope = np.empty(points.size)
    rows = max(1, min(KDE_BLOCK, KDE_MAX_CELLS // n))
    for start in range(0, points.size, rows):
        stop = min(start + rows, points.size)
        u = (points[start:stop, None] - draws[None, :]) / h
        kernel = normal_pdf(u)
        density[start:stop] = kernel.sum(axis=1) / (n * h)
        slope[start:stop] = -(u * kernel).sum(axis=1) / (n * h * h)
    return density, slope


def empirical_bayes(
    sample: NoisySample,
    sigma2: float,
    h_eb: Optional[float] = None,
    return_flags: bool = False,
) -> Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """
    Эмпирический Байес (формула Твиди): ϑᵢ + (σ²/m)·p̂′(ϑᵢ)/p̂(ϑᵢ).

    Плотность p̂ оценивается гауссовым ядром по всем оценкам (включая
    саму ϑᵢ). Знаменатель ограничен снизу 1e−300; такие единицы
    помечаются как вырожденные.

    Args:
        sample (NoisySample): Выборка
        sigma2 (float): Общая дисперсия шума σ²
        h_eb (Optional[float]): Ширина окна (по умолчанию правило Сильвермана)
        return_flags (bool): Вернуть также маску вырожденных единиц

    Returns:
        Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]: Оценки θᵢ
        (и маска вырожденной плотности при return_flags=True)

    Raises:
        BadBandwidth: Если h_eb ≤ 0
        BadParams: Если σ² ≤ 0
    """
    sigma2 = _check_positive("σ²", sigma2)
    if h_eb is None:
        h_eb = silverman_bandwidth(sample.draws)
    try:
        h_eb = float(h_eb)
    except (TypeError, ValueError):
        raise BadBandwidth(f"Ширина окна должна быть числом, получено {h_eb!r}")
    if not math.isfinite(h_eb) or h_eb <= 0.0:
        raise BadBandwidth(f"Ширина окна должна быть положительной, получено {h_eb}")
    density, slope = _kde_with_derivative(sample.draws, sample.draws, h_eb)
    degenerate = density < DENSITY_FLOOR
    if degenerate.any():
        logger.warning(
            "Плотность ниже %.0e для %d единиц; знаменатель ограничен снизу",
            DENSITY_FLOOR,
            int(degenerate.sum()),
        )
    score = slope / np.maximum(density, DENSITY_FLOOR)
    estimates = sample.draws + sigma2 / sample.m * score
    if return_flags:
        return estimates, degenerate
    return estimates
