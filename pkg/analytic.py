"""
Модуль аналитической коррекции смещения.

Ядерная оценка ведущего смещения b̂_F с гауссовым ядром, скорректированная
функция распределения F̌ = F̂ − b̂_F/m, кросс-валидационный выбор ширины
окна, скорректированный квантиль q̌ через сдвиг ранга τ̂*, стандартные
ошибки по базису влияния и бутстрап-интервалы для квантилей.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy import optimize

from core import (
    DEFAULT_SEED,
    ArrayLike,
    BadBandwidth,
    BadLevel,
    BadReplications,
    CdfEstimate,
    NoInteriorMinimum,
    NoisySample,
    QuantileEstimate,
    ThetaGrid,
    make_rng,
    normal_pdf,
    normal_pdf_deriv,
)
from empirical import basis_se, check_tau, ecdf, order_rank, quantile_plugin

logger = logging.getLogger(__name__)

CV_LOWER_FACTOR = 0.05
CV_UPPER_FACTOR = 2.0
CV_RESOLUTION = 40
CV_REFINE_ITERS = 30
MIN_RESOLUTION = 8
BOOTSTRAP_MIN_B = 100
DEFAULT_BOOTSTRAP_B = 399
DEFAULT_LEVEL = 0.95
# Размер блока строк при вычислении двойных сумм O(n²)
PAIR_BLOCK = 512


def check_bandwidth(h: float) -> float:
    """
    Проверяет ширину окна.

    Raises:
        BadBandwidth: Если h не является конечным положительным числом
    """
    try:
        h = float(h)
    except (TypeError, ValueError):
        raise BadBandwidth(f"Ширина окна должна быть числом, получено {h!r}")
    if not math.isfinite(h) or h <= 0.0:
        raise BadBandwidth(f"Ширина окна должна быть положительной, получено {h}")
    return h


@dataclass(frozen=True)
class BandwidthSearch:
    """
    Окно поиска ширины окна для кросс-валидации.

    Attributes:
        h_min (float): Нижняя граница окна
        h_max (float): Верхняя граница окна
        resolution (int): Число точек логарифмической сетки
        refine_iters (int): Число итераций уточнения золотым сечением
    """

    h_min: float
    h_max: float
    resolution: int = CV_RESOLUTION
    refine_iters: int = CV_REFINE_ITERS

    def __post_init__(self):
        h_min = check_bandwidth(self.h_min)
        h_max = check_bandwidth(self.h_max)
        if h_min >= h_max:
            raise BadBandwidth(f"Требуется h_min < h_max, получено {h_min} и {h_max}")
        if int(self.resolution) < MIN_RESOLUTION:
            raise BadBandwidth(
                f"Сетка поиска должна содержать не меньше {MIN_RESOLUTION} точек"
            )
        if int(self.refine_iters) < 0:
            raise BadBandwidth("Число итераций уточнения не может быть отрицательным")
        object.__setattr__(self, "h_min", h_min)
        object.__setattr__(self, "h_max", h_max)
        object.__setattr__(self, "resolution", int(self.resolution))
        object.__setattr__(self, "refine_iters", int(self.refine_iters))

    def trial_grid(self) -> np.ndarray:
        """Логарифмически равномерная сетка пробных ширин окна."""
        return np.geomspace(self.h_min, self.h_max, self.resolution)


class CvTerms(NamedTuple):
    """Слагаемые критерия v(h)."""

    squared_bias: float
    cross: float
    leave_one_out: float

    @property
    def total(self) -> float:
        return self.squared_bias + self.cross + self.leave_one_out


class BandwidthChoice(NamedTuple):
    """Результат выбора ширины окна."""

    h: float
    value: float
    fallback: bool


def _bias_at(sample: NoisySample, points: np.ndarray, h: float) -> np.ndarray:
    """b̂_F в точках: (1/(2nh²)) Σ σᵢ² ηᵢ φ(ηᵢ), ηᵢ = (ϑᵢ − θ)/h."""
    eta = (sample.draws[:, None] - points[None, :]) / h
    weighted = sample.noise_var[:, None] * eta * normal_pdf(eta)
    return weighted.sum(axis=0) / (2.0 * sample.n * h * h)


def bias_cdf_hat(sample: NoisySample, theta: float, h: float) -> float:
    """
    Ядерная оценка ведущего смещения b̂_F(θ).

    b̂_F(θ) = −(1/(2nh²)) Σ σᵢ² κ′((ϑᵢ−θ)/h), κ′(η) = −ηφ(η).

    Args:
        sample (NoisySample): Выборка
        theta (float): Точка θ
        h (float): Ширина окна

    Returns:
        float: Оценка b̂_F(θ)

    Raises:
        BadBandwidth: Если h ≤ 0
    """
    h = check_bandwidth(h)
    return float(_bias_at(sample, np.array([float(theta)]), h)[0])


def _corrected_basis(sample: NoisySample, points: np.ndarray, h: float) -> np.ndarray:
    """Базис 1{ϑᵢ≤θ} + (1/(2mh²)) σᵢ² κ′((ϑᵢ−θ)/h); его среднее равно F̌(θ)."""
    eta = (sample.draws[:, None] - points[None, :]) / h
    indicator = (sample.draws[:, None] <= points[None, :]).astype(float)
    kernel_term = sample.noise_var[:, None] * (-eta * normal_pdf(eta))
    return indicator + kernel_term / (2.0 * sample.m * h * h)


def se_corrected_cdf(sample: NoisySample, theta: float, h: float) -> float:
    """
    Стандартная ошибка F̌(θ) по базису влияния.

    Returns:
        float: Выборочное std базиса, деленное на √n

    Raises:
        BadBandwidth: Если h ≤ 0
    """
    h = check_bandwidth(h)
    return float(basis_se(_corrected_basis(sample, np.array([float(theta)]), h))[0])


def corrected_cdf(sample: NoisySample, grid: ThetaGrid, h: float) -> CdfEstimate:
    """
    Скорректированная оценка F̌(θ) = F̂(θ) − b̂_F(θ)/m на сетке.

    Значения F̌ не обрезаются до [0, 1].

    Args:
        sample (NoisySample): Выборка
        grid (ThetaGrid): Сетка θ
        h (float): Ширина окна

    Returns:
        CdfEstimate: Оценка с методом "analytic"
    """
    h = check_bandwidth(h)
    f_hat = ecdf(sample, grid)
    bias = _bias_at(sample, grid.points, h)
    return CdfEstimate(
        grid=grid,
        f_hat=f_hat,
        bias_hat=bias,
        f_corrected=f_hat - bias / sample.m,
        se=basis_se(_corrected_basis(sample, grid.points, h)),
        method="analytic",
        m=sample.m,
    )


def phi_bar_prime(a: ArrayLike, b: ArrayLike, h: float) -> np.ndarray:
    """
    φ̲′(a, b; h) = (1/4)(1/(√2h)) φ((a−b)/(√2h)) (1/2 − (a+b)²/(4h²) + ab/h²).

    Равно ∫φ′((a−θ)/h)φ′((b−θ)/h)dθ / (4h²).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = math.sqrt(2.0) * h
    shape = 0.5 - (a + b) ** 2 / (4.0 * h * h) + a * b / (h * h)
    return 0.25 / scale * normal_pdf((a - b) / scale) * shape


def _phi_bar_prime_diff(diff: np.ndarray, h: float) -> np.ndarray:
    """φ̲′ через разность a − b (численно устойчивая форма)."""
    scale = math.sqrt(2.0) * h
    return 0.25 / scale * normal_pdf(diff / scale) * (0.5 - diff * diff / (4.0 * h * h))


def gaussian_cross_integral(a: float, b: float, h: float) -> float:
    """∫φ′((a−θ)/h)φ′((b−θ)/h)dθ в замкнутой форме."""
    scale = math.sqrt(2.0) * h
    d = a - b
    return float(normal_pdf(d / scale) / scale * (h * h / 2.0 - d * d / 4.0))


def cv_terms(sample: NoisySample, h: float) -> CvTerms:
    """
    Слагаемые кросс-валидационного критерия v(h).

    squared_bias = Σᵢ Σⱼ (σᵢ²σⱼ²/h²) φ̲′(ϑᵢ, ϑⱼ; h);
    cross = m Σᵢ Σⱼ≠ᵢ (σᵢ²/h) φ′((ϑᵢ−ϑⱼ)/h);
    leave_one_out = −(nm/(n−1)) Σᵢ Σⱼ≠ᵢ (σᵢ²/h) φ((ϑᵢ−ϑⱼ)/h).

    Args:
        sample (NoisySample): Выборка
        h (float): Ширина окна

    Returns:
        CvTerms: Три слагаемых
    """
    h = check_bandwidth(h)
    draws, noise_var = sample.draws, sample.noise_var
    n, m = sample.n, sample.m
    squared_bias = cross = leave_one_out = 0.0
    for start in range(0, n, PAIR_BLOCK):
        stop = min(start + PAIR_BLOCK, n)
        diff = draws[start:stop, None] - draws[None, :]
        left = noise_var[start:stop, None]
        squared_bias += float(
            np.sum(left * noise_var[None, :] * _phi_bar_prime_diff(diff, h))
        ) / (h * h)
        weight = np.broadcast_to(left / h, diff.shape).copy()
        rows = np.arange(stop - start)
        weight[rows, rows + start] = 0.0
        u = diff / h
        cross += m * float(np.sum(weight * normal_pdf_deriv(u)))
        leave_one_out -= n * m / (n - 1) * float(np.sum(weight * normal_pdf(u)))
    return CvTerms(squared_bias, cross, leave_one_out)


def cv_objective(sample: NoisySample, h: float) -> float:
    """
    Кросс-валидационный критерий v(h) (интегральная квадратичная ошибка
    F̌, умноженная на n²m², без слагаемых, не зависящих от h).

    Raises:
        BadBandwidth: Если h ≤ 0
    """
    return cv_terms(sample, h).total


def default_search(sample: NoisySample) -> BandwidthSearch:
    """
    Окно поиска по умолчанию: h ∈ [0.05·s, 2·s], s - выборочное std оценок.

    Raises:
        NoInteriorMinimum: Если все оценки совпадают (s = 0)
    """
    s = float(np.std(sample.draws, ddof=1))
    if s <= 0.0:
        raise NoInteriorMinimum("Все оценки совпадают: окно поиска ширины вырождено")
    return BandwidthSearch(CV_LOWER_FACTOR * s, CV_UPPER_FACTOR * s)


def fallback_bandwidth(sample: NoisySample) -> float:
    """
    Запасная ширина окна h = s·m^{−1/2}.

    При нулевом разбросе оценок вместо s берется √(mean σ²ᵢ).
    """
    s = float(np.std(sample.draws, ddof=1))
    if s <= 0.0:
        s = math.sqrt(float(sample.noise_var.mean()))
    return s / math.sqrt(sample.m)


def bandwidth_trace(
    sample: NoisySample, search: Optional[BandwidthSearch] = None
) -> pd.DataFrame:
    """
    Значения v(h) на пробной сетке.

    Returns:
        pd.DataFrame: Столбцы h и v
    """
    search = search or default_search(sample)
    hs = search.trial_grid()
    values = [cv_objective(sample, h) for h in hs]
    return pd.DataFrame({"h": hs, "v": values})


def _refine(
    sample: NoisySample, hs: np.ndarray, values: np.ndarray, k: int, iters: int
) -> BandwidthChoice:
    """Уточнение минимума золотым сечением по log h внутри [h_{k−1}, h_{k+1}]."""
    best = BandwidthChoice(float(hs[k]), float(values[k]), False)
    if iters == 0:
        return best
    logs = np.log(hs)
    try:
        result = optimize.minimize_scalar(
            lambda u: cv_objective(sample, math.exp(u)),
            bracket=(logs[k - 1], logs[k], logs[k + 1]),
            method="golden",
            options={"maxiter": iters},
        )
    except ValueError as e:
        logger.debug("Уточнение ширины окна пропущено: %s", e)
        return best
    h = math.exp(float(result.x))
    if not (hs[k - 1] <= h <= hs[k + 1]) or not result.fun < best.value:
        return best
    return BandwidthChoice(h, float(result.fun), False)


def cross_validate_bandwidth(
    sample: NoisySample,
    search: Optional[BandwidthSearch] = None,
    fallback: bool = False,
) -> BandwidthChoice:
    """
    Выбор ширины окна минимизацией v(h) с признаком запасного значения.

    Args:
        sample (NoisySample): Выборка
        search (Optional[BandwidthSearch]): Окно поиска (по умолчанию default_search)
        fallback (bool): Вернуть h = s·m^{−1/2} вместо ошибки, если
            внутреннего минимума нет

    Returns:
        BandwidthChoice: Ширина окна, значение критерия и признак запасного значения

    Raises:
        NoInteriorMinimum: Если минимум на границе окна и fallback=False
    """
    try:
        search = search or default_search(sample)
        hs = search.trial_grid()
        values = np.array([cv_objective(sample, h) for h in hs])
        if not np.isfinite(values).all():
            raise NoInteriorMinimum("Критерий v(h) не конечен на сетке поиска")
        k = int(np.argmin(values))
        if k == 0 or k == hs.size - 1:
            edge = "нижней" if k == 0 else "верхней"
            raise NoInteriorMinimum(
                f"Минимум v(h) на {edge} границе окна [{search.h_min:.6g}, "
                f"{search.h_max:.6g}]; расширьте окно поиска"
            )
    except NoInteriorMinimum as e:
        if not fallback:
            raise
        h = fallback_bandwidth(sample)
        logger.warning("%s; используется запасная ширина окна h = %.6g", e, h)
        return BandwidthChoice(h, math.nan, True)
    return _refine(sample, hs, values, k, search.refine_iters)


def select_bandwidth(
    sample: NoisySample,
    search: Optional[BandwidthSearch] = None,
    fallback: bool = False,
) -> float:
    """
    Кросс-валидационная ширина окна ȟ = argmin v(h).

    Перебор по логарифмической сетке с уточнением золотым сечением;
    результат детерминирован.

    Raises:
        NoInteriorMinimum: Если минимум на границе окна (без fallback)
    """
    return cross_validate_bandwidth(sample, search, fallback).h


def corrected_quantile(sample: NoisySample, tau: float, h: float) -> QuantileEstimate:
    """
    Скорректированный квантиль q̌(τ) = ϑ_(⌈τ̂*n⌉), τ̂* = τ + b̂_F(q̂(τ))/m.

    Ранг ограничивается отрезком [1, n].

    Args:
        sample (NoisySample): Выборка
        tau (float): Уровень квантиля
        h (float): Ширина окна

    Returns:
        QuantileEstimate: q_naive, q_corrected и tau_star

    Raises:
        BadTau: Если τ вне (0, 1)
        BadBandwidth: Если h ≤ 0
    """
    tau = check_tau(tau)
    h = check_bandwidth(h)
    q_hat = quantile_plugin(sample, tau)
    tau_star = tau + bias_cdf_hat(sample, q_hat, h) / sample.m
    q_check = float(sample.sorted_draws[order_rank(tau_star, sample.n) - 1])
    return QuantileEstimate(
        tau=tau, q_naive=q_hat, q_corrected=q_check, method="analytic", tau_star=tau_star
    )


def bootstrap_quantiles(
    sample: NoisySample, tau: float, h: float, B: int, seed: int = DEFAULT_SEED
) -> np.ndarray:
    """
    Бутстрап-реплики q̌(τ) при фиксированной ширине окна.

    Реплика b использует собственный поток make_rng(seed, b), поэтому
    результат не зависит от порядка вычисления.

    Returns:
        np.ndarray: B значений q̌(τ)
    """
    tau = check_tau(tau)
    h = check_bandwidth(h)
    if int(B) < BOOTSTRAP_MIN_B:
        raise BadReplications(f"Нужно не меньше {BOOTSTRAP_MIN_B} бутстрап-выборок, получено {B}")
    replicates = np.empty(int(B))
    for b in range(int(B)):
        indices = make_rng(seed, b).integers(0, sample.n, size=sample.n)
        replicates[b] = corrected_quantile(sample.take(indices), tau, h).q_corrected
    return replicates


def bootstrap_quantile_ci(
    sample: NoisySample,
    tau: float,
    h: float,
    B: int = DEFAULT_BOOTSTRAP_B,
    level: float = DEFAULT_LEVEL,
    seed: int = DEFAULT_SEED,
) -> QuantileEstimate:
    """
    Перцентильный бутстрап-интервал для q̌(τ).

    Пары (ϑᵢ, σᵢ²) извлекаются с возвращением, h не пересчитывается.

    Args:
        sample (NoisySample): Выборка
        tau (float): Уровень квантиля
        h (float): Ширина окна
        B (int): Число бутстрап-выборок (не меньше 100)
        level (float): Доверительный уровень в (0, 1)
        seed (int): Зерно

    Returns:
        QuantileEstimate: Оценка с заполненными ci_lower и ci_upper

    Raises:
        BadTau, BadBandwidth, BadLevel, BadReplications
    """
    try:
        level = float(level)
    except (TypeError, ValueError):
        raise BadLevel(f"Уровень должен быть числом, получено {level!r}")
    if not (0.0 < level < 1.0):
        raise BadLevel(f"Доверительный уровень должен лежать в (0, 1), получено {level}")
    estimate = corrected_quantile(sample, tau, h)
    replicates = bootstrap_quantiles(sample, tau, h, B, seed)
    alpha = 1.0 - level
    lower, upper = np.percentile(replicates, [50.0 * alpha, 100.0 * (1.0 - alpha / 2.0)])
    return replace(estimate, ci_lower=float(lower), ci_upper=float(upper))
