"""
Модуль генерации данных для симуляций.

Три дизайна: нормальная панель (θᵢ ~ N(η, ψ²), x_it = θᵢ + N(0, σ²)),
панель со сдвинутым скошенно-нормальным шумом и доли с биномиальным
шумом. Каждое повторение использует собственный поток make_rng(seed, r).
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from core import (
    DEFAULT_SEED,
    BadSpec,
    BiasFunctions,
    NoisySample,
    Panel,
    binomial_bias_functions,
    make_rng,
    normal_bias_functions,
)
from empirical import reduce_panel

logger = logging.getLogger(__name__)

DESIGN_KINDS = ("normal", "skew_normal", "binomial")
PANEL_KINDS = ("normal", "skew_normal")
SKEW_ALPHA = 1.0
SKEW_DELTA = SKEW_ALPHA / math.sqrt(1.0 + SKEW_ALPHA**2)


@dataclass(frozen=True)
class DesignSpec:
    """
    Описание дизайна симуляции.

    Attributes:
        kind (str): "normal", "skew_normal" или "binomial"
        n (int): Число единиц
        m (int): Число наблюдений на единицу
        psi2 (float): Дисперсия θ (нормальный и скошенный дизайны)
        sigma2 (float): Дисперсия шума (нормальный и скошенный дизайны)
        eta (float): Среднее θ
        seed (int): Зерно
    """

    kind: str
    n: int
    m: int
    psi2: float = 1.0
    sigma2: float = 5.0
    eta: float = 0.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise BadSpec(f"Неизвестный дизайн {self.kind!r}; допустимы {', '.join(DESIGN_KINDS)}")
        for name in ("n", "m", "seed"):
            value = getattr(self, name)
            try:
                integral = not isinstance(value, bool) and int(value) == value
            except (TypeError, ValueError):
                integral = False
            if not integral:
                raise BadSpec(f"{name} должно быть целым, получено {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n < 2 or self.m < 2:
            raise BadSpec(f"Требуется n ≥ 2 и m ≥ 2, получено n={self.n}, m={self.m}")
        if self.seed < 0:
            raise BadSpec(f"Зерно должно быть неотрицательным, получено {self.seed}")
        for name in ("psi2", "sigma2", "eta"):
            try:
                value = float(getattr(self, name))
            except (TypeError, ValueError):
                raise BadSpec(f"{name} должно быть числом, получено {getattr(self, name)!r}")
            if not math.isfinite(value):
                raise BadSpec(f"{name} должно быть конечным, получено {value}")
            object.__setattr__(self, name, value)
        if self.kind in PANEL_KINDS and (self.psi2 <= 0.0 or self.sigma2 <= 0.0):
            raise BadSpec(f"ψ² и σ² должны быть положительны: {self.psi2}, {self.sigma2}")

    @property
    def is_panel(self) -> bool:
        return self.kind in PANEL_KINDS

    def to_dict(self) -> dict:
        return asdict(self)


class DesignDraw(NamedTuple):
    """Одно повторение дизайна: истинные θ, панель (если есть) и выборка."""

    theta: np.ndarray
    panel: Optional[Panel]
    sample: NoisySample


def _require(spec: DesignSpec, kind: str) -> None:
    if spec.kind != kind:
        raise BadSpec(f"Ожидался дизайн {kind!r}, получен {spec.kind!r}")


def skew_normal_noise(rng: np.random.Generator, size, sigma2: float) -> np.ndarray:
    """
    Сдвинутый скошенно-нормальный шум с нулевым средним и дисперсией σ².

    SN = δ|Z₁| + √(1−δ²)Z₂, e = ξ + ω·SN, ω²(1 − 2δ²/π) = σ², ξ = −ωδ√(2/π).
    """
    omega = math.sqrt(sigma2 / (1.0 - 2.0 * SKEW_DELTA**2 / math.pi))
    xi = -omega * SKEW_DELTA * math.sqrt(2.0 / math.pi)
    z1 = rng.standard_normal(size)
    z2 = rng.standard_normal(size)
    return xi + omega * (SKEW_DELTA * np.abs(z1) + math.sqrt(1.0 - SKEW_DELTA**2) * z2)


def skew_normal_skewness(alpha: float = SKEW_ALPHA) -> float:
    """Коэффициент асимметрии скошенно-нормального распределения с формой α."""
    delta = alpha / math.sqrt(1.0 + alpha**2)
    mean = delta * math.sqrt(2.0 / math.pi)
    return (4.0 - math.pi) / 2.0 * mean**3 / (1.0 - mean**2) ** 1.5


def _panel_draw(spec: DesignSpec, replication: int) -> DesignDraw:
    rng = make_rng(spec.seed, replication)
    theta = spec.eta + math.sqrt(spec.psi2) * rng.standard_normal(spec.n)
    if spec.kind == "normal":
        noise = math.sqrt(spec.sigma2) * rng.standard_normal((spec.n, spec.m))
    else:
        noise = skew_normal_noise(rng, (spec.n, spec.m), spec.sigma2)
    panel = Panel(theta[:, None] + noise)
    return DesignDraw(theta, panel, reduce_panel(panel))


def _binomial_draw(spec: DesignSpec, replication: int) -> DesignDraw:
    rng = make_rng(spec.seed, replication)
    theta = rng.uniform(size=spec.n)
    draws = rng.binomial(spec.m, theta) / spec.m
    floor = (1.0 / spec.m) * (1.0 - 1.0 / spec.m)
    noise_var = np.maximum(draws * (1.0 - draws), floor)
    return DesignDraw(theta, None, NoisySample(draws, noise_var, spec.m))


def draw_design(spec: DesignSpec, replication: int = 0) -> DesignDraw:
    """
    Генерирует повторение replication дизайна spec.

    Args:
        spec (DesignSpec): Дизайн
        replication (int): Номер повторения (ключ потока)

    Returns:
        DesignDraw: Истинные θ, панель и выборка зашумленных оценок
    """
    if spec.is_panel:
        return _panel_draw(spec, replication)
    return _binomial_draw(spec, replication)


def gen_normal(spec: DesignSpec, replication: int = 0) -> Panel:
    """
    Нормальная панель: θᵢ ~ N(η, ψ²), x_it = θᵢ + N(0, σ²).

    Raises:
        BadSpec: Если дизайн не "normal"
    """
    _require(spec, "normal")
    return _panel_draw(spec, replication).panel


def gen_skew_normal(spec: DesignSpec, replication: int = 0) -> Panel:
    """
    Панель со сдвинутым скошенно-нормальным шумом (α = 1, среднее 0, дисперсия σ²).

    Raises:
        BadSpec: Если дизайн не "skew_normal"
    """
    _require(spec, "skew_normal")
    return _panel_draw(spec, replication).panel


def gen_binomial(spec: DesignSpec, replication: int = 0) -> NoisySample:
    """
    Доли: θᵢ ~ U[0, 1], mϑᵢ ~ Binomial(m, θᵢ).

    noise_var = ϑᵢ(1−ϑᵢ), не меньше (1/m)(1−1/m) при ϑᵢ ∈ {0, 1}.

    Raises:
        BadSpec: Если дизайн не "binomial"
    """
    _require(spec, "binomial")
    return _binomial_draw(spec, replication).sample


def design_truth(spec: DesignSpec) -> BiasFunctions:
    """Истинные F, f, q и ведущие смещения для дизайна."""
    if spec.is_panel:
        return normal_bias_functions(spec.eta, spec.psi2, spec.sigma2)
    return binomial_bias_functions()
