"""
Модуль jackknife-коррекций.

Split-panel jackknife: смещение оценивается по двум непересекающимся блокам
периодов панели. λ-jackknife: к оценкам добавляется гауссов шум
относительного масштаба λ (сглаженная F̂_λ), после чего смещение
экстраполируется обратно к нулевому шуму.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import optimize

from core import (
    BadLambda,
    BadSplit,
    BracketFailure,
    CdfEstimate,
    NoisySample,
    Panel,
    QuantileEstimate,
    ThetaGrid,
    normal_cdf,
)
from empirical import (
    basis_se,
    check_tau,
    ecdf_values,
    order_statistic,
    quantile_plugin,
)

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1.0
MIN_BLOCK = 2
BRACKET_WIDTH = 10.0
BRACKET_EXPANSIONS = 2
BISECT_RELATIVE_TOL = 1e-10


@dataclass(frozen=True)
class SplitSpec:
    """
    Разбиение m периодов панели на блоки из m1 и m2 периодов.

    Attributes:
        m1 (int): Число первых периодов
        m2 (int): Число оставшихся периодов
    """

    m1: int
    m2: int

    def __post_init__(self):
        if int(self.m1) < MIN_BLOCK or int(self.m2) < MIN_BLOCK:
            raise BadSplit(
                f"Каждый блок должен содержать не меньше {MIN_BLOCK} периодов: "
                f"m1={self.m1}, m2={self.m2}"
            )
        object.__setattr__(self, "m1", int(self.m1))
        object.__setattr__(self, "m2", int(self.m2))

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @classmethod
    def default_for(cls, m: int, m1: Optional[int] = None) -> "SplitSpec":
        """Разбиение по умолчанию m1 = ⌈m/2⌉."""
        m1 = math.ceil(m / 2) if m1 is None else int(m1)
        return cls(m1, int(m) - m1)


def _block_means(
    panel: Panel, split: Optional[SplitSpec]
) -> Tuple[SplitSpec, np.ndarray, np.ndarray, np.ndarray]:
    """Средние по всем периодам, по первым m1 и по оставшимся m2 периодам."""
    split = split or SplitSpec.default_for(panel.m)
    if split.m != panel.m:
        raise BadSplit(f"m1 + m2 = {split.m} не совпадает с числом периодов панели {panel.m}")
    full = panel.data.mean(axis=1)
    first = panel.data[:, : split.m1].mean(axis=1)
    second = panel.data[:, split.m1 :].mean(axis=1)
    return split, full, first, second


def split_panel_cdf(
    panel: Panel, split: Optional[SplitSpec], grid: ThetaGrid
) -> CdfEstimate:
    """
    Split-panel jackknife для функции распределения.

    b̃_F = m1F̂_{m1} + m2F̂_{m2} − mF̂, F̃ = F̂ − b̃_F/m.

    Args:
        panel (Panel): Панель наблюдений
        split (Optional[SplitSpec]): Разбиение (по умолчанию m1 = ⌈m/2⌉)
        grid (ThetaGrid): Сетка θ

    Returns:
        CdfEstimate: Оценка с методом "split_jackknife"

    Raises:
        BadSplit: Если разбиение не согласовано с панелью
    """
    split, full, first, second = _block_means(panel, split)
    m = panel.m
    f_hat = ecdf_values(full, grid.points)
    f_first = ecdf_values(first, grid.points)
    f_second = ecdf_values(second, grid.points)
    bias = split.m1 * f_first + split.m2 * f_second - m * f_hat
    points = grid.points[None, :]
    basis = (
        2.0 * (full[:, None] <= points)
        - (split.m1 / m) * (first[:, None] <= points)
        - (split.m2 / m) * (second[:, None] <= points)
    )
    return CdfEstimate(
        grid=grid,
        f_hat=f_hat,
        bias_hat=bias,
        f_corrected=f_hat - bias / m,
        se=basis_se(basis),
        method="split_jackknife",
        m=m,
    )


def se_split_panel_cdf(panel: Panel, split: Optional[SplitSpec], theta: float) -> float:
    """Стандартная ошибка F̃(θ) по базису 2·1{ϑᵢ≤θ} − (m1/m)1{ϑᵢ,₁≤θ} − (m2/m)1{ϑᵢ,₂≤θ}."""
    grid = ThetaGrid(np.array([float(theta)]))
    return float(split_panel_cdf(panel, split, grid).se[0])


def split_panel_quantile(
    panel: Panel, split: Optional[SplitSpec], tau: float
) -> QuantileEstimate:
    """
    Split-panel jackknife для квантиля.

    b̃_q = m1ϑ_(k),m1 + m2ϑ_(k),m2 − mϑ_(k), k = ⌈τn⌉; q̃ = ϑ_(k) − b̃_q/m.

    Raises:
        BadTau: Если τ вне (0, 1)
        BadSplit: Если разбиение не согласовано с панелью
    """
    tau = check_tau(tau)
    split, full, first, second = _block_means(panel, split)
    q_hat = order_statistic(full, tau)
    bias = (
        split.m1 * order_statistic(first, tau)
        + split.m2 * order_statistic(second, tau)
        - panel.m * q_hat
    )
    return QuantileEstimate(
        tau=tau, q_naive=q_hat, q_corrected=q_hat - bias / panel.m, method="split_jackknife"
    )


def check_lambda(lam: float) -> float:
    """
    Проверяет параметр λ.

    Raises:
        BadLambda: Если λ не является конечным положительным числом
    """
    try:
        lam = float(lam)
    except (TypeError, ValueError):
        raise BadLambda(f"λ должно быть числом, получено {lam!r}")
    if not math.isfinite(lam) or lam <= 0.0:
        raise BadLambda(f"λ должно быть положительным, получено {lam}")
    return lam


def _smoothed_terms(sample: NoisySample, points: np.ndarray, lam: float) -> np.ndarray:
    """Матрица Φ((θ − ϑᵢ)/(λσᵢ/√m)) размера n × len(points)."""
    scale = lam * sample.noise_sd
    return normal_cdf((points[None, :] - sample.draws[:, None]) / scale[:, None])


def _smoothed_at(sample: NoisySample, points: np.ndarray, lam: float) -> np.ndarray:
    """F̂_λ в точках."""
    return _smoothed_terms(sample, points, lam).mean(axis=0)


def smoothed_cdf(sample: NoisySample, grid: ThetaGrid, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """
    Сглаженная функция распределения F̂_λ(θ) = n⁻¹ Σ Φ((θ−ϑᵢ)/(λσᵢ/√m)).

    Raises:
        BadLambda: Если λ ≤ 0
    """
    return _smoothed_at(sample, grid.points, check_lambda(lam))


def lambda_cdf(sample: NoisySample, grid: ThetaGrid, lam: float = DEFAULT_LAMBDA) -> CdfEstimate:
    """
    λ-jackknife для функции распределения.

    ḃ_F = m(F̂_λ − F̂)/λ², Ḟ = F̂ − ḃ_F/m = ((1+λ²)/λ²)F̂ − F̂_λ/λ².

    Args:
        sample (NoisySample): Выборка
        grid (ThetaGrid): Сетка θ
        lam (float): Относительный масштаб добавленного шума

    Returns:
        CdfEstimate: Оценка с методом "lambda_jackknife"

    Raises:
        BadLambda: Если λ ≤ 0
    """
    lam = check_lambda(lam)
    indicator = (sample.draws[:, None] <= grid.points[None, :]).astype(float)
    smoothed = _smoothed_terms(sample, grid.points, lam)
    f_hat = indicator.mean(axis=0)
    bias = sample.m * (smoothed.mean(axis=0) - f_hat) / lam**2
    return CdfEstimate(
        grid=grid,
        f_hat=f_hat,
        bias_hat=bias,
        f_corrected=f_hat - bias / sample.m,
        se=basis_se(indicator - (smoothed - indicator) / lam**2),
        method="lambda_jackknife",
        m=sample.m,
    )


def se_lambda_cdf(sample: NoisySample, theta: float, lam: float = DEFAULT_LAMBDA) -> float:
    """
    Стандартная ошибка Ḟ(θ) по базису 1{ϑᵢ≤θ} − (Φ(·) − 1{ϑᵢ≤θ})/λ².

    Raises:
        BadLambda: Если λ ≤ 0
    """
    grid = ThetaGrid(np.array([float(theta)]))
    return float(lambda_cdf(sample, grid, lam).se[0])


def smoothed_quantile(sample: NoisySample, tau: float, lam: float = DEFAULT_LAMBDA) -> float:
    """
    Левая обратная q̂_λ(τ) = min{q : F̂_λ(q) ≥ τ}, найденная бисекцией.

    Начальный интервал - [min ϑ − 10·max(σᵢ)/√m·λ, max ϑ + то же], при
    неудаче он дважды расширяется вдвое.

    Raises:
        BadTau, BadLambda, BracketFailure
    """
    tau = check_tau(tau)
    lam = check_lambda(lam)
    pad = BRACKET_WIDTH * float(sample.noise_sd.max()) * lam
    lower = float(sample.draws.min()) - pad
    upper = float(sample.draws.max()) + pad

    def excess(q: float) -> float:
        return float(_smoothed_at(sample, np.array([q]), lam)[0]) - tau

    for attempt in range(BRACKET_EXPANSIONS + 1):
        low_value, high_value = excess(lower), excess(upper)
        if low_value <= 0.0 <= high_value:
            break
        if attempt == BRACKET_EXPANSIONS:
            raise BracketFailure(
                f"τ = {tau} вне [F̂_λ({lower:.6g}), F̂_λ({upper:.6g})] после расширения интервала"
            )
        width = upper - lower
        lower, upper = lower - width / 2.0, upper + width / 2.0
    if low_value == 0.0:
        return lower
    if high_value == 0.0:
        return upper
    spread = float(np.ptp(sample.draws)) or (upper - lower)
    return float(optimize.bisect(excess, lower, upper, xtol=BISECT_RELATIVE_TOL * spread))


def lambda_quantile(sample: NoisySample, tau: float, lam: float = DEFAULT_LAMBDA) -> QuantileEstimate:
    """
    λ-jackknife для квантиля: q̇ = ((1+λ²)/λ²)q̂ − q̂_λ/λ².

    Args:
        sample (NoisySample): Выборка
        tau (float): Уровень квантиля
        lam (float): Относительный масштаб добавленного шума

    Returns:
        QuantileEstimate: Оценка с методом "lambda_jackknife"
    """
    q_hat = quantile_plugin(sample, tau)
    lam = check_lambda(lam)
    q_lam = smoothed_quantile(sample, tau, lam)
    q_dot = (1.0 + lam**2) / lam**2 * q_hat - q_lam / lam**2
    return QuantileEstimate(
        tau=float(tau), q_naive=q_hat, q_corrected=q_dot, method="lambda_jackknife"
    )
