"""
Тесты для модуля core.py

Проверяются специальные функции, потоки случайных чисел, проверка
входных данных и эталонные функции смещения.
"""

import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from core import (
    DEFAULT_SEED,
    BadGrid,
    BadInput,
    BadLevel,
    BadM,
    BadParams,
    CdfEstimate,
    LengthMismatch,
    NoisyDrawsError,
    NonFinite,
    NonPositiveVariance,
    Panel,
    QuantileEstimate,
    ThetaGrid,
    TooFewUnits,
    ValidationError,
    auto_grid,
    binomial_bias_functions,
    integrate_quad,
    linear_grid,
    make_grid,
    make_rng,
    normal_bias_functions,
    normal_cdf,
    normal_pdf,
    normal_pdf_deriv,
    normal_pdf_second_deriv,
    normal_quantile,
    validate_sample,
)


class TestSpecialFunctions:
    """Тесты функций стандартного нормального распределения."""

    def test_normal_pdf_at_zero(self):
        """φ(0) = 1/√(2π), результат для скаляра - float."""
        value = normal_pdf(0.0)
        assert isinstance(value, float)
        assert value == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), abs=1e-15)

    def test_normal_cdf_matches_scipy(self):
        """Φ совпадает с scipy.stats.norm.cdf до 1e−12 на широком отрезке."""
        x = np.linspace(-30.0, 30.0, 601)
        assert np.max(np.abs(normal_cdf(x) - stats.norm.cdf(x))) < 1e-12

    def test_normal_cdf_tails(self):
        """Хвосты не теряют точность."""
        assert normal_cdf(-40.0) == pytest.approx(0.0, abs=1e-300)
        assert normal_cdf(40.0) == 1.0
        assert normal_cdf(-10.0) == pytest.approx(stats.norm.cdf(-10.0), rel=1e-12)

    def test_derivatives(self):
        """φ′ и φ″ совпадают с конечными разностями."""
        x = np.linspace(-4.0, 4.0, 41)
        step = 1e-5
        numeric = (normal_pdf(x + step) - normal_pdf(x - step)) / (2.0 * step)
        assert np.max(np.abs(normal_pdf_deriv(x) - numeric)) < 1e-9
        numeric2 = (normal_pdf_deriv(x + step) - normal_pdf_deriv(x - step)) / (2.0 * step)
        assert np.max(np.abs(normal_pdf_second_deriv(x) - numeric2)) < 1e-8

    def test_normal_quantile(self):
        """Φ⁻¹(0.975) ≈ 1.959964 и Φ(Φ⁻¹(p)) = p."""
        assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
        p = np.array([1e-10, 0.01, 0.3, 0.5, 0.99])
        assert np.allclose(normal_cdf(normal_quantile(p)), p, rtol=1e-10, atol=0)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_normal_quantile_bad_level(self, p):
        """Вероятность вне (0, 1) отклоняется."""
        with pytest.raises(BadLevel):
            normal_quantile(p)

    def test_integrate_quad_with_breakpoints(self):
        """Квадратура ступенчатой функции с точками разрыва."""
        value = integrate_quad(lambda t: 1.0 if t > 0.5 else 0.0, 0.0, 2.0, points=[0.5, 7.0])
        assert value == pytest.approx(1.5, abs=1e-10)


class TestRandomStreams:
    """Тесты счетчиковых потоков случайных чисел."""

    def test_same_key_same_stream(self):
        """Одинаковый ключ дает одинаковую последовательность."""
        a = make_rng(DEFAULT_SEED, 3).standard_normal(5)
        b = make_rng(DEFAULT_SEED, 3).standard_normal(5)
        assert np.array_equal(a, b)

    def test_different_keys_differ(self):
        """Разные ключи дают разные потоки."""
        a = make_rng(DEFAULT_SEED, 0).standard_normal(5)
        b = make_rng(DEFAULT_SEED, 1).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_negative_seed_rejected(self):
        """Отрицательное зерно отклоняется."""
        with pytest.raises(ValidationError):
            make_rng(-1)


class TestNoisySample:
    """Тесты проверки выборки зашумленных оценок."""

    def test_valid_sample(self):
        """Корректная выборка сохраняет данные и m."""
        sample = validate_sample([0.3, -1.0, 2.0], [1.0, 2.0, 0.5], 4)
        assert sample.n == 3
        assert sample.m == 4.0
        assert np.array_equal(sample.sorted_draws, [-1.0, 0.3, 2.0])
        assert np.allclose(sample.noise_sd, np.sqrt(np.array([1.0, 2.0, 0.5]) / 4.0))

    def test_arrays_are_read_only(self):
        """Данные выборки нельзя изменить на месте."""
        sample = validate_sample([0.3, -1.0], [1.0, 2.0], 2)
        with pytest.raises(ValueError):
            sample.draws[0] = 5.0

    def test_take_with_repetitions(self):
        """Подвыборка с повторениями сохраняет пары (ϑᵢ, σᵢ²)."""
        sample = validate_sample([1.0, 2.0, 3.0], [0.1, 0.2, 0.3], 2)
        sub = sample.take([2, 2, 0])
        assert np.array_equal(sub.draws, [3.0, 3.0, 1.0])
        assert np.array_equal(sub.noise_var, [0.3, 0.3, 0.1])
        assert sub.m == sample.m

    def test_length_mismatch(self):
        """Разные длины - LengthMismatch."""
        with pytest.raises(LengthMismatch):
            validate_sample([1.0, 2.0, 3.0], [1.0, 1.0], 3)

    def test_too_few_units(self):
        """Одна единица - TooFewUnits."""
        with pytest.raises(TooFewUnits):
            validate_sample([1.0], [1.0], 3)

    @pytest.mark.parametrize("m", [0.5, 0, float("nan"), "abc"])
    def test_bad_m(self, m):
        """m < 1 или не число - BadM."""
        with pytest.raises(BadM):
            validate_sample([1.0, 2.0], [1.0, 1.0], m)

    @pytest.mark.parametrize("m", [True, "4", None])
    def test_m_is_not_coerced(self, m):
        """bool и строка вместо m не приводятся к числу."""
        with pytest.raises(BadM):
            validate_sample([1.0, 2.0], [1.0, 1.0], m)

    def test_numpy_m_accepted(self):
        assert validate_sample([1.0, 2.0], [1.0, 1.0], np.int64(3)).m == 3.0
        assert validate_sample([1.0, 2.0], [1.0, 1.0], np.float64(2.5)).m == 2.5

    @pytest.mark.parametrize(
        "draws, noise_var",
        [
            (["1", "2"], [0.5, 0.5]),
            ([1.0, 2.0], ["0.5", "0.5"]),
            ([True, False], [0.5, 0.5]),
            ([1.0, None], [0.5, 0.5]),
        ],
    )
    def test_values_are_not_coerced(self, draws, noise_var):
        """Строки, bool и None в данных отклоняются, а не приводятся к float."""
        with pytest.raises(NonFinite, match="нечисловые"):
            validate_sample(draws, noise_var, 4)

    def test_non_finite_reports_index(self):
        """NaN в оценках - NonFinite с индексом единицы."""
        with pytest.raises(NonFinite) as excinfo:
            validate_sample([1.0, 2.0, np.nan], [1.0, 1.0, 1.0], 3)
        assert excinfo.value.index == 2

    def test_non_positive_variance_reports_index(self):
        """Нулевая дисперсия - NonPositiveVariance с индексом."""
        with pytest.raises(NonPositiveVariance) as excinfo:
            validate_sample([1.0, 2.0, 3.0], [1.0, 0.0, 1.0], 3)
        assert excinfo.value.index == 1

    def test_errors_share_hierarchy(self):
        """Все ошибки проверки наследуют ValidationError и ValueError."""
        with pytest.raises(ValueError):
            validate_sample([1.0], [1.0], 3)
        assert issubclass(NonFinite, ValidationError)
        assert issubclass(ValidationError, NoisyDrawsError)


class TestPanel:
    """Тесты панели наблюдений."""

    def test_default_units(self):
        """Метки единиц по умолчанию - номера строк."""
        panel = Panel(np.arange(6.0).reshape(3, 2))
        assert (panel.n, panel.m) == (3, 2)
        assert panel.units == (0, 1, 2)

    def test_non_finite_row_names_unit(self):
        """NaN в строке - NonFinite с меткой единицы."""
        data = np.array([[1.0, 2.0], [np.nan, 1.0], [0.0, 0.5]])
        with pytest.raises(NonFinite) as excinfo:
            Panel(data, units=("a", "b", "c"))
        assert excinfo.value.unit == "b"
        assert "b" in str(excinfo.value)

    def test_shape_errors(self):
        """Неверная форма панели отклоняется."""
        with pytest.raises(BadInput):
            Panel(np.arange(4.0))
        with pytest.raises(TooFewUnits):
            Panel(np.ones((1, 3)))
        with pytest.raises(BadM):
            Panel(np.ones((3, 1)))


class TestGrids:
    """Тесты сеток θ."""

    def test_grid_must_increase(self):
        """Сетка должна строго возрастать."""
        with pytest.raises(BadGrid):
            ThetaGrid(np.array([0.0, 0.0, 1.0]))
        with pytest.raises(BadGrid):
            ThetaGrid(np.array([]))
        with pytest.raises(BadGrid):
            ThetaGrid(np.array([0.0, np.inf]))

    def test_make_grid_from_scalar(self):
        """Скаляр превращается в сетку из одной точки."""
        grid = make_grid(0.25)
        assert len(grid) == 1
        assert grid.points[0] == 0.25

    def test_linear_grid_bounds(self):
        """Равномерная сетка включает концы."""
        grid = linear_grid(-1.0, 1.0, 5)
        assert np.allclose(grid.points, [-1.0, -0.5, 0.0, 0.5, 1.0])
        with pytest.raises(BadGrid):
            linear_grid(1.0, 1.0, 5)
        with pytest.raises(BadGrid):
            linear_grid(0.0, 1.0, 1)

    def test_auto_grid_covers_noise(self):
        """Сетка по умолчанию: диапазон оценок ± 3·max σᵢ/√m, 201 точка."""
        sample = validate_sample([0.0, 1.0, 2.0], [1.0, 4.0, 1.0], 4)
        grid = auto_grid(sample)
        assert len(grid) == 201
        assert grid.points[0] == pytest.approx(-3.0)
        assert grid.points[-1] == pytest.approx(5.0)


class TestEstimateRecords:
    """Тесты записей оценок."""

    def test_cdf_estimate_frame_and_clamp(self):
        """to_frame содержит нужные столбцы, clamp обрезает только f_corrected."""
        grid = ThetaGrid(np.array([0.0, 1.0]))
        estimate = CdfEstimate(
            grid=grid,
            f_hat=np.array([0.0, 1.0]),
            bias_hat=np.array([0.3, -0.3]),
            f_corrected=np.array([-0.1, 1.1]),
            se=np.array([0.0, 0.0]),
            method="analytic",
            m=3,
        )
        frame = estimate.to_frame()
        assert list(frame.columns) == ["theta", "f_hat", "bias_hat", "f_corrected", "se"]
        assert frame["f_corrected"].tolist() == [-0.1, 1.1]
        clamped = estimate.to_frame(clamp=True)
        assert clamped["f_corrected"].tolist() == [0.0, 1.0]
        assert estimate.f_corrected[0] == -0.1

    def test_cdf_estimate_checks_shapes(self):
        """Длины векторов должны совпадать с сеткой."""
        grid = ThetaGrid(np.array([0.0, 1.0]))
        with pytest.raises(LengthMismatch):
            CdfEstimate(grid, np.zeros(3), np.zeros(2), np.zeros(2), np.zeros(2), "naive", 2)
        with pytest.raises(BadParams):
            CdfEstimate(grid, np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), "other", 2)

    def test_quantile_record(self):
        """Запись квантиля без интервала содержит NaN в границах."""
        record = QuantileEstimate(tau=0.5, q_naive=1.0, q_corrected=0.9, method="naive").to_record()
        assert list(record) == ["tau", "q_naive", "tau_star", "q_corrected", "ci_lower", "ci_upper"]
        assert math.isnan(record["ci_lower"]) and math.isnan(record["tau_star"])
        frame = pd.DataFrame.from_records([record])
        assert frame.loc[0, "q_corrected"] == 0.9


class TestBiasFunctions:
    """Тесты эталонных функций смещения."""

    @pytest.fixture
    def normal(self):
        """Нормальный дизайн с ψ² = 2, чтобы проверить масштаб."""
        return normal_bias_functions(eta=0.5, psi2=2.0, sigma2=5.0)

    def test_b_F_is_derivative_of_beta(self, normal):
        """b_F = β′."""
        theta = np.linspace(-3.0, 4.0, 15)
        step = 1e-5
        numeric = (normal.beta(theta + step) - normal.beta(theta - step)) / (2.0 * step)
        assert np.allclose(normal.b_F(theta), numeric, atol=1e-8)

    def test_b_q_relation(self, normal):
        """b_q(τ) = −b_F(q(τ))/f(q(τ))."""
        for tau in (0.1, 0.3, 0.5, 0.8):
            q = normal.q(tau)
            assert float(normal.b_q(tau)) == pytest.approx(float(-normal.b_F(q) / normal.f(q)), abs=1e-12)

    def test_general_scale_closed_form(self, normal):
        """b_F(θ) = −((θ−η)/2)(σ²/ψ³)φ((θ−η)/ψ) при ψ² = 2."""
        theta, psi = 1.7, math.sqrt(2.0)
        expected = -((theta - 0.5) / 2.0) * (5.0 / psi**3) * normal_pdf((theta - 0.5) / psi)
        assert float(normal.b_F(theta)) == pytest.approx(expected, rel=1e-12)

    def test_unit_scale_closed_form(self):
        """При ψ = 1: b_F(θ) = −(θ/2)σ²φ(θ)."""
        funcs = normal_bias_functions(0.0, 1.0, 5.0)
        assert float(funcs.b_F(1.0)) == pytest.approx(-0.5 * 5.0 * normal_pdf(1.0))
        assert float(funcs.b_q(0.5)) == pytest.approx(0.0)

    def test_sigma_F(self, normal):
        """σ_F(θ, θ) = F(1 − F)."""
        F = normal.F(0.7)
        assert float(normal.sigma_F(0.7, 0.7)) == pytest.approx(F * (1.0 - F))

    def test_bad_params(self):
        """Неположительные дисперсии отклоняются."""
        with pytest.raises(BadParams):
            normal_bias_functions(0.0, 0.0, 5.0)

    def test_binomial(self):
        """Доли: b_F(θ) = (1−2θ)/2, b_q(τ) = −(1−2τ)/2, q(τ) = τ."""
        funcs = binomial_bias_functions()
        assert float(funcs.b_F(0.2)) == pytest.approx(0.3)
        assert float(funcs.b_q(0.2)) == pytest.approx(-0.3)
        assert float(funcs.q(0.4)) == pytest.approx(0.4)
        assert float(funcs.F(1.5)) == 1.0
