"""
Базовый модуль пакета оценки распределений по зашумленным оценкам.

Этот модуль содержит неизменяемые типы данных (выборка зашумленных
оценок, панель наблюдений, сетка θ, оценки функции распределения и
квантилей), иерархию исключений, функции стандартного нормального
распределения, утилиты сеток, генераторы случайных потоков и эталонные
функции смещения для нормального и биномиального дизайнов.
"""

import logging
import math
import numbers
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate, special

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]
FloatOrArray = Union[float, np.ndarray]

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_SEED = 20190901
DEFAULT_GRID_POINTS = 201
GRID_NOISE_MULTIPLIER = 3.0
CDF_METHODS = ("naive", "analytic", "split_jackknife", "lambda_jackknife")
QUADRATURE_LIMIT = 500
NUMERIC_KINDS = "iuf"


# ---------------------------------------------------------------------------
# Исключения
# ---------------------------------------------------------------------------


class NoisyDrawsError(ValueError):
    """
    Базовая ошибка пакета.

    Args:
        message (str): Текст ошибки
        index (Optional[int]): Номер единицы (с нуля), к которой относится ошибка
        unit (Optional[object]): Метка единицы панели
    """

    def __init__(
        self, message: str, index: Optional[int] = None, unit: Optional[object] = None
    ):
        super().__init__(message)
        self.index = index
        self.unit = unit


class ValidationError(NoisyDrawsError):
    """Ошибка входных данных или конфигурации."""


class EstimatorError(NoisyDrawsError):
    """Ошибка оценщика."""


class LengthMismatch(ValidationError):
    """Векторы разной длины."""


class NonPositiveVariance(ValidationError):
    """Неположительная дисперсия шума."""


class NonFinite(ValidationError):
    """NaN, бесконечность или нечисловое значение во входных данных."""


class TooFewUnits(ValidationError):
    """Меньше двух единиц наблюдения."""


class BadM(ValidationError):
    """Недопустимый размер выборки на единицу m."""


class ZeroVariance(ValidationError):
    """Нулевая внутригрупповая дисперсия в строке панели."""


class BadGrid(ValidationError):
    """Некорректная сетка θ."""


class BadSpec(ValidationError):
    """Некорректное описание дизайна симуляции."""


class BadConfig(ValidationError):
    """Некорректный файл конфигурации эксперимента."""


class BadInput(ValidationError):
    """Некорректный входной файл."""


class BadTau(EstimatorError):
    """Уровень квантиля вне интервала (0, 1)."""


class BadBandwidth(EstimatorError):
    """Недопустимая ширина окна."""


class NoInteriorMinimum(EstimatorError):
    """Минимум кросс-валидационного критерия на границе окна поиска."""


class BadLevel(EstimatorError):
    """Уровень вне интервала (0, 1)."""


class BadReplications(EstimatorError):
    """Слишком мало повторений (бутстрап или Монте-Карло)."""


class BadSplit(EstimatorError):
    """Недопустимое разбиение панели."""


class BadLambda(EstimatorError):
    """Недопустимый параметр λ."""


class BracketFailure(EstimatorError):
    """Не удалось найти интервал, содержащий квантиль."""


class NonFiniteTransform(EstimatorError):
    """Функционал вернул нечисловое значение."""


class BadParams(EstimatorError):
    """Недопустимые параметры оценщика."""


# ---------------------------------------------------------------------------
# Специальные функции
# ---------------------------------------------------------------------------


def _as_output(values: np.ndarray) -> FloatOrArray:
    """Возвращает float для скаляра и массив иначе."""
    return float(values) if values.ndim == 0 else values


def normal_pdf(x: FloatOrArray) -> FloatOrArray:
    """
    Плотность стандартного нормального распределения φ(x).

    Args:
        x (FloatOrArray): Точка или массив точек

    Returns:
        FloatOrArray: exp(−x²/2)/√(2π)
    """
    x = np.asarray(x, dtype=float)
    return _as_output(np.exp(-0.5 * x * x) / SQRT_2PI)


def normal_cdf(x: FloatOrArray) -> FloatOrArray:
    """
    Функция распределения Φ(x).

    Использует scipy.special.ndtr (через erfc), абсолютная точность
    не хуже 1e−12 на всей оси.
    """
    return _as_output(special.ndtr(np.asarray(x, dtype=float)))


def normal_pdf_deriv(x: FloatOrArray) -> FloatOrArray:
    """Производная плотности φ′(x) = −xφ(x)."""
    x = np.asarray(x, dtype=float)
    return _as_output(-x * np.exp(-0.5 * x * x) / SQRT_2PI)


def normal_pdf_second_deriv(x: FloatOrArray) -> FloatOrArray:
    """Вторая производная φ″(x) = (x² − 1)φ(x)."""
    x = np.asarray(x, dtype=float)
    return _as_output((x * x - 1.0) * np.exp(-0.5 * x * x) / SQRT_2PI)


def normal_quantile(p: FloatOrArray) -> FloatOrArray:
    """
    Обратная функция распределения Φ⁻¹(p).

    Args:
        p (FloatOrArray): Вероятность в (0, 1)

    Returns:
        FloatOrArray: Квантиль стандартного нормального распределения

    Raises:
        BadLevel: Если p вне интервала (0, 1)
    """
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise BadLevel(f"Вероятность должна лежать в (0, 1), получено {p}")
    return _as_output(special.ndtri(p))


def integrate_quad(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    points: Optional[ArrayLike] = None,
) -> float:
    """
    Адаптивная квадратура на конечном отрезке.

    Args:
        func (Callable[[float], float]): Подынтегральная функция
        lower (float): Нижний предел
        upper (float): Верхний предел
        points (Optional[ArrayLike]): Точки разрыва или излома внутри отрезка

    Returns:
        float: Значение интеграла
    """
    if points is not None:
        points = [float(p) for p in np.unique(np.asarray(points, dtype=float))]
        points = [p for p in points if lower < p < upper] or None
    value, _ = integrate.quad(
        func,
        lower,
        upper,
        points=points,
        limit=QUADRATURE_LIMIT,
        epsabs=1e-13,
        epsrel=1e-12,
    )
    return float(value)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """
    Создает независимый поток случайных чисел для ключа (seed, *key).

    Используется счетчиковый генератор Philox; потоки для разных ключей
    порождаются через SeedSequence.spawn_key и не пересекаются.

    Args:
        seed (int): Неотрицательное зерно
        *key (int): Индексы потока (номер повторения, номер бутстрап-выборки)

    Returns:
        np.random.Generator: Генератор NumPy
    """
    if int(seed) < 0 or any(int(k) < 0 for k in key):
        raise ValidationError(f"Зерно и ключи потока должны быть неотрицательны: {seed}, {key}")
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


# ---------------------------------------------------------------------------
# Типы данных
# ---------------------------------------------------------------------------


def _frozen_array(values: ArrayLike, name: str) -> np.ndarray:
    """Копирует числовые данные в float-массив только для чтения; строки и bool отклоняются."""
    raw = np.asarray(values)
    if raw.dtype.kind not in NUMERIC_KINDS:
        raise NonFinite(f"Столбец {name} содержит нечисловые значения (тип {raw.dtype})")
    array = np.array(raw, dtype=float)
    array.setflags(write=False)
    return array


def _first_bad(mask: np.ndarray) -> int:
    """Индекс первого True в маске."""
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True)
class NoisySample:
    """
    Выборка зашумленных оценок ϑᵢ = θᵢ + (σᵢ/√m)εᵢ.

    Attributes:
        draws (np.ndarray): Оценки ϑ₁…ϑₙ
        noise_var (np.ndarray): Дисперсии шума σ²ᵢ (не деленные на m)
        m (float): Эффективный размер выборки на единицу
    """

    draws: np.ndarray
    noise_var: np.ndarray
    m: float

    def __post_init__(self):
        draws = _frozen_array(self.draws, "draws")
        noise_var = _frozen_array(self.noise_var, "noise_var")
        if draws.ndim != 1 or noise_var.ndim != 1:
            raise LengthMismatch("Оценки и дисперсии должны быть одномерными векторами")
        if draws.shape != noise_var.shape:
            raise LengthMismatch(
                f"Длины не совпадают: {draws.size} оценок и {noise_var.size} дисперсий"
            )
        if draws.size < 2:
            raise TooFewUnits(f"Нужно минимум 2 единицы, получено {draws.size}")
        if isinstance(self.m, bool) or not isinstance(self.m, numbers.Real):
            raise BadM(f"m должно быть числом, получено {self.m!r}")
        m = float(self.m)
        if not math.isfinite(m) or m < 1.0:
            raise BadM(f"m должно быть конечным и не меньше 1, получено {self.m}")
        for name, values in (("draws", draws), ("noise_var", noise_var)):
            bad = ~np.isfinite(values)
            if bad.any():
                i = _first_bad(bad)
                raise NonFinite(f"Нечисловое значение в {name} для единицы {i}", index=i)
        bad = noise_var <= 0.0
        if bad.any():
            i = _first_bad(bad)
            raise NonPositiveVariance(
                f"Дисперсия шума единицы {i} должна быть положительной: {noise_var[i]}",
                index=i,
            )
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "noise_var", noise_var)
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return int(self.draws.size)

    @cached_property
    def sorted_draws(self) -> np.ndarray:
        ordered = np.sort(self.draws, kind="stable")
        ordered.setflags(write=False)
        return ordered

    @property
    def noise_sd(self) -> np.ndarray:
        """Стандартные отклонения шума оценок σᵢ/√m."""
        return np.sqrt(self.noise_var / self.m)

    def take(self, indices: ArrayLike) -> "NoisySample":
        """
        Подвыборка по индексам (с повторениями для бутстрапа).

        Args:
            indices (ArrayLike): Индексы единиц

        Returns:
            NoisySample: Новая выборка с тем же m
        """
        indices = np.asarray(indices, dtype=int)
        return NoisySample(self.draws[indices], self.noise_var[indices], self.m)


def validate_sample(draws: ArrayLike, noise_var: ArrayLike, m: float) -> NoisySample:
    """
    Проверяет сырые данные и строит NoisySample без неявных преобразований.

    Args:
        draws (ArrayLike): Зашумленные оценки
        noise_var (ArrayLike): Дисперсии шума σ²ᵢ
        m (float): Эффективный размер выборки на единицу

    Returns:
        NoisySample: Проверенная выборка

    Raises:
        LengthMismatch: Если длины векторов различаются
        TooFewUnits: Если единиц меньше двух
        BadM: Если m < 1
        NonFinite: Если есть NaN или бесконечности
        NonPositiveVariance: Если есть неположительная дисперсия
    """
    return NoisySample(draws, noise_var, m)


@dataclass(frozen=True)
class Panel:
    """
    Сбалансированная панель n×m наблюдений x_it.

    Attributes:
        data (np.ndarray): Матрица наблюдений, строки - единицы, столбцы - периоды
        units (Tuple): Метки единиц для сообщений об ошибках
    """

    data: np.ndarray
    units: Tuple = field(default=())

    def __post_init__(self):
        data = _frozen_array(self.data, "data")
        if data.ndim != 2:
            raise BadInput("Панель должна быть матрицей n×m")
        n, m = data.shape
        if n < 2:
            raise TooFewUnits(f"В панели нужно минимум 2 единицы, получено {n}")
        if m < 2:
            raise BadM(f"В панели нужно минимум 2 периода, получено {m}")
        units = tuple(self.units) if len(self.units) else tuple(range(n))
        if len(units) != n:
            raise LengthMismatch(f"Меток единиц {len(units)}, строк панели {n}")
        bad_rows = ~np.isfinite(data).all(axis=1)
        if bad_rows.any():
            i = _first_bad(bad_rows)
            raise NonFinite(
                f"Нечисловое значение в строке единицы {units[i]}", index=i, unit=units[i]
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "units", units)

    @property
    def n(self) -> int:
        return int(self.data.shape[0])

    @property
    def m(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class ThetaGrid:
    """Строго возрастающая сетка значений θ."""

    points: np.ndarray

    def __post_init__(self):
        try:
            points = _frozen_array(self.points, "points")
        except NonFinite as e:
            raise BadGrid(str(e))
        if points.ndim != 1 or points.size == 0:
            raise BadGrid("Сетка θ должна быть непустым вектором")
        if not np.isfinite(points).all():
            raise BadGrid("Сетка θ содержит нечисловые значения")
        if points.size > 1 and not np.all(np.diff(points) > 0):
            raise BadGrid("Сетка θ должна строго возрастать")
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return int(self.points.size)


def make_grid(points: Union[ArrayLike, float]) -> ThetaGrid:
    """Строит сетку из значений (скаляр превращается в сетку из одной точки)."""
    return ThetaGrid(np.atleast_1d(np.asarray(points, dtype=float)))


def linear_grid(lower: float, upper: float, count: int) -> ThetaGrid:
    """
    Равномерная сетка на [lower, upper].

    Raises:
        BadGrid: Если lower ≥ upper или count < 2
    """
    if not (math.isfinite(lower) and math.isfinite(upper)) or lower >= upper:
        raise BadGrid(f"Некорректные границы сетки: {lower}, {upper}")
    if int(count) < 2:
        raise BadGrid(f"В сетке нужно минимум 2 точки, получено {count}")
    return ThetaGrid(np.linspace(lower, upper, int(count)))


def auto_grid(sample: NoisySample, count: int = DEFAULT_GRID_POINTS) -> ThetaGrid:
    """
    Сетка по умолчанию: диапазон оценок ± 3·max(σᵢ)/√m.

    Args:
        sample (NoisySample): Выборка
        count (int): Число точек

    Returns:
        ThetaGrid: Равномерная сетка
    """
    pad = GRID_NOISE_MULTIPLIER * float(np.sqrt(sample.noise_var.max() / sample.m))
    return linear_grid(float(sample.draws.min()) - pad, float(sample.draws.max()) + pad, count)


@dataclass(frozen=True)
class CdfEstimate:
    """
    Оценка функции распределения на сетке θ.

    Attributes:
        grid (ThetaGrid): Сетка
        f_hat (np.ndarray): Наивная оценка F̂
        bias_hat (np.ndarray): Оценка ведущего смещения (b̂_F или аналог)
        f_corrected (np.ndarray): Скорректированная оценка F̂ − bias_hat/m
        se (np.ndarray): Стандартные ошибки скорректированной оценки
        method (str): Метод из CDF_METHODS
        m (float): Эффективный размер выборки на единицу
    """

    grid: ThetaGrid
    f_hat: np.ndarray
    bias_hat: np.ndarray
    f_corrected: np.ndarray
    se: np.ndarray
    method: str
    m: float

    def __post_init__(self):
        if self.method not in CDF_METHODS:
            raise BadParams(f"Неизвестный метод оценки: {self.method}")
        for name in ("f_hat", "bias_hat", "f_corrected", "se"):
            values = _frozen_array(getattr(self, name), name)
            if values.shape != self.grid.points.shape:
                raise LengthMismatch(f"Длина {name} не совпадает с длиной сетки")
            object.__setattr__(self, name, values)

    def to_frame(self, clamp: bool = False) -> pd.DataFrame:
        """
        Таблица оценки: theta, f_hat, bias_hat, f_corrected, se.

        Args:
            clamp (bool): Обрезать f_corrected до [0, 1] (только для отображения)

        Returns:
            pd.DataFrame: Таблица по точкам сетки
        """
        corrected = np.clip(self.f_corrected, 0.0, 1.0) if clamp else self.f_corrected
        return pd.DataFrame(
            {
                "theta": self.grid.points,
                "f_hat": self.f_hat,
                "bias_hat": self.bias_hat,
                "f_corrected": corrected,
                "se": self.se,
            }
        )


@dataclass(frozen=True)
class QuantileEstimate:
    """Наивная и скорректированная оценки квантиля уровня tau."""

    tau: float
    q_naive: float
    q_corrected: float
    method: str
    tau_star: float = math.nan
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None

    def to_record(self) -> dict:
        return {
            "tau": self.tau,
            "q_naive": self.q_naive,
            "tau_star": self.tau_star,
            "q_corrected": self.q_corrected,
            "ci_lower": math.nan if self.ci_lower is None else self.ci_lower,
            "ci_upper": math.nan if self.ci_upper is None else self.ci_upper,
        }


@dataclass(frozen=True)
class BiasFunctions:
    """
    Теоретические характеристики дизайна: ведущие смещения и дисперсии.

    Attributes:
        b_F: θ → b_F(θ), производная β
        b_q: τ → b_q(τ) = −b_F(q(τ))/f(q(τ))
        sigma_F: (θ, θ′) → F(θ ∧ θ′) − F(θ)F(θ′)
        sigma_q2: τ → τ(1−τ)/f(q(τ))²
        beta: θ → E(σ²|θ)f(θ)/2
        f: плотность θ
        F: функция распределения θ
        q: квантильная функция θ
    """

    b_F: Callable
    b_q: Callable
    sigma_F: Callable
    sigma_q2: Callable
    beta: Callable
    f: Callable
    F: Callable
    q: Callable


def normal_bias_functions(eta: float, psi2: float, sigma2: float) -> BiasFunctions:
    """
    Эталонные функции для θ ~ N(η, ψ²) и гомоскедастичного шума σ².

    b_F(θ) = −(σ²/ψ²)·z·φ(z)/2 при z = (θ−η)/ψ, то есть
    −((θ−η)/2)(σ²/ψ³)φ(z); b_q(τ) = (σ²/ψ²)(q(τ)−η)/2.
    """
    if psi2 <= 0 or sigma2 <= 0:
        raise BadParams(f"ψ² и σ² должны быть положительны: {psi2}, {sigma2}")
    psi = math.sqrt(psi2)

    def F(theta):
        return normal_cdf((np.asarray(theta, dtype=float) - eta) / psi)

    def f(theta):
        return normal_pdf((np.asarray(theta, dtype=float) - eta) / psi) / psi

    def q(tau):
        return eta + psi * normal_quantile(tau)

    def beta(theta):
        return sigma2 * f(theta) / 2.0

    def b_F(theta):
        z = (np.asarray(theta, dtype=float) - eta) / psi
        return -0.5 * sigma2 * z * normal_pdf(z) / psi2

    def b_q(tau):
        return sigma2 * (q(tau) - eta) / (2.0 * psi2)

    def sigma_F(theta1, theta2):
        return F(np.minimum(theta1, theta2)) - F(theta1) * F(theta2)

    def sigma_q2(tau):
        return tau * (1.0 - tau) / f(q(tau)) ** 2

    return BiasFunctions(b_F, b_q, sigma_F, sigma_q2, beta, f, F, q)


def binomial_bias_functions() -> BiasFunctions:
    """Эталонные функции для θ ~ U[0, 1] и σ²(θ) = θ(1−θ)."""

    def F(theta):
        return np.clip(np.asarray(theta, dtype=float), 0.0, 1.0)

    def f(theta):
        theta = np.asarray(theta, dtype=float)
        return np.where((theta >= 0.0) & (theta <= 1.0), 1.0, 0.0)

    def q(tau):
        return np.asarray(tau, dtype=float)

    def beta(theta):
        theta = F(theta)
        return theta * (1.0 - theta) / 2.0

    def b_F(theta):
        theta = np.asarray(theta, dtype=float)
        return np.where((theta >= 0.0) & (theta <= 1.0), (1.0 - 2.0 * theta) / 2.0, 0.0)

    def b_q(tau):
        return -b_F(q(tau))

    def sigma_F(theta1, theta2):
        return F(np.minimum(theta1, theta2)) - F(theta1) * F(theta2)

    def sigma_q2(tau):
        return tau * (1.0 - tau)

    return BiasFunctions(b_F, b_q, sigma_F, sigma_q2, beta, f, F, q)
