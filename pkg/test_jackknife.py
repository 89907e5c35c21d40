"""
Тесты для модуля jackknife.py
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from core import (
    BadLambda,
    BadSplit,
    BadTau,
    BracketFailure,
    Panel,
    ThetaGrid,
    make_grid,
    make_rng,
    normal_cdf,
    validate_sample,
)
from empirical import ecdf_values, quantile_plugin
from jackknife import (
    SplitSpec,
    check_lambda,
    lambda_cdf,
    lambda_quantile,
    se_lambda_cdf,
    se_split_panel_cdf,
    smoothed_cdf,
    smoothed_quantile,
    split_panel_cdf,
    split_panel_quantile,
)


@pytest.fixture
def random_panel():
    """Случайная панель 30×6."""
    rng = make_rng(21)
    return Panel(rng.standard_normal(30)[:, None] + 2.0 * rng.standard_normal((30, 6)))


@pytest.fixture
def grid():
    return ThetaGrid(np.linspace(-3.0, 3.0, 25))


class TestSplitSpec:
    """Тесты разбиения панели."""

    def test_default_split(self):
        """По умолчанию m1 = ⌈m/2⌉."""
        assert SplitSpec.default_for(5) == SplitSpec(3, 2)
        assert SplitSpec.default_for(6).m == 6
        assert SplitSpec.default_for(7, m1=2) == SplitSpec(2, 5)

    def test_blocks_too_small(self):
        """Блок из одного периода - BadSplit."""
        with pytest.raises(BadSplit):
            SplitSpec(1, 3)
        with pytest.raises(BadSplit):
            SplitSpec.default_for(3)

    def test_split_must_match_panel(self, random_panel, grid):
        """m1 + m2 ≠ m - BadSplit."""
        with pytest.raises(BadSplit):
            split_panel_cdf(random_panel, SplitSpec(2, 2), grid)


class TestSplitPanel:
    """Тесты split-panel jackknife."""

    def test_constant_rows_no_correction(self, grid):
        """Постоянные строки: b̃_F = 0, F̃ = F̂."""
        panel = Panel(np.repeat(np.linspace(-2.0, 2.0, 8)[:, None], 4, axis=1))
        estimate = split_panel_cdf(panel, SplitSpec(2, 2), grid)
        assert np.all(estimate.bias_hat == 0.0)
        assert np.array_equal(estimate.f_corrected, estimate.f_hat)
        quantile = split_panel_quantile(panel, SplitSpec(2, 2), 0.4)
        assert quantile.q_corrected == quantile.q_naive

    def test_rearranged_form(self, random_panel, grid):
        """F̃ = F̂ + (F̂ − F̂_{m1})m1/m + (F̂ − F̂_{m2})m2/m."""
        split = SplitSpec(2, 4)
        estimate = split_panel_cdf(random_panel, split, grid)
        data = random_panel.data
        f_first = ecdf_values(data[:, :2].mean(axis=1), grid.points)
        f_second = ecdf_values(data[:, 2:].mean(axis=1), grid.points)
        f_hat = estimate.f_hat
        expected = f_hat + (f_hat - f_first) * 2 / 6 + (f_hat - f_second) * 4 / 6
        assert np.allclose(estimate.f_corrected, expected, atol=1e-12)

    def test_equal_halves_form(self, random_panel, grid):
        """m1 = m2: b̃_F = m[(F̂_{m1} + F̂_{m2})/2 − F̂]."""
        estimate = split_panel_cdf(random_panel, SplitSpec(3, 3), grid)
        data = random_panel.data
        f_first = ecdf_values(data[:, :3].mean(axis=1), grid.points)
        f_second = ecdf_values(data[:, 3:].mean(axis=1), grid.points)
        expected = 6 * ((f_first + f_second) / 2.0 - estimate.f_hat)
        assert np.allclose(estimate.bias_hat, expected, atol=1e-12)

    def test_hand_quantile(self):
        """n = 3, m = 4, τ = 0.5: b̃_q = 2·1 + 2·2 − 4·1.75 = −1, q̃ = 2."""
        panel = Panel(
            np.array([[0.0, 2.0, 1.0, 3.0], [4.0, 4.0, 0.0, 2.0], [-1.0, 1.0, 3.0, 4.0]])
        )
        estimate = split_panel_quantile(panel, SplitSpec(2, 2), 0.5)
        assert estimate.q_naive == pytest.approx(1.75)
        assert estimate.q_corrected == pytest.approx(2.0)
        assert estimate.method == "split_jackknife"

    def test_invariances(self, random_panel, grid):
        """Перестановка единиц и столбцов внутри блока не меняет результат."""
        split = SplitSpec(3, 3)
        base = split_panel_cdf(random_panel, split, grid)
        rng = make_rng(22)
        data = random_panel.data[rng.permutation(random_panel.n)]
        data = data[:, [2, 0, 1, 5, 3, 4]]
        moved = split_panel_cdf(Panel(data), split, grid)
        assert np.allclose(moved.f_corrected, base.f_corrected, atol=1e-12)
        assert np.allclose(moved.se, base.se, atol=1e-12)

    def test_se_matches_basis(self, random_panel):
        """SE - std базиса 2·1{full} − (m1/m)1{first} − (m2/m)1{second}, деленное на √n."""
        split = SplitSpec(2, 4)
        data = random_panel.data
        theta = 0.3
        basis = (
            2.0 * (data.mean(axis=1) <= theta)
            - (2 / 6) * (data[:, :2].mean(axis=1) <= theta)
            - (4 / 6) * (data[:, 2:].mean(axis=1) <= theta)
        )
        expected = basis.std(ddof=1) / math.sqrt(random_panel.n)
        assert se_split_panel_cdf(random_panel, split, theta) == pytest.approx(expected)
        estimate = split_panel_cdf(random_panel, split, make_grid(theta))
        assert estimate.f_corrected[0] == pytest.approx(basis.mean())

    def test_bad_tau(self, random_panel):
        """τ вне (0, 1) - BadTau."""
        with pytest.raises(BadTau):
            split_panel_quantile(random_panel, None, 0.0)


class TestLambdaJackknife:
    """Тесты λ-jackknife."""

    @pytest.fixture
    def hand_sample(self):
        """ϑ = (0, 1), σ² = 1, m = 1."""
        return validate_sample([0.0, 1.0], [1.0, 1.0], 1)

    def test_lambda_one_algebra(self, hand_sample):
        """λ = 1: Ḟ = 2F̂ − F̂₁."""
        estimate = lambda_cdf(hand_sample, ThetaGrid(np.array([0.0, 0.5])), 1.0)
        smoothed_at_zero = (0.5 + normal_cdf(-1.0)) / 2.0
        assert estimate.f_corrected[0] == pytest.approx(1.0 - smoothed_at_zero, abs=1e-14)
        assert estimate.f_corrected[1] == pytest.approx(0.5, abs=1e-14)
        assert estimate.bias_hat[0] == pytest.approx(smoothed_at_zero - 0.5, abs=1e-14)

    def test_displayed_combination(self):
        """f_corrected = ((1+λ²)/λ²)F̂ − F̂_λ/λ² для λ ≠ 1."""
        rng = make_rng(23)
        sample = validate_sample(rng.standard_normal(25), rng.uniform(0.5, 2.0, 25), 3)
        grid = ThetaGrid(np.linspace(-2.0, 2.0, 11))
        lam = 0.7
        estimate = lambda_cdf(sample, grid, lam)
        smoothed = smoothed_cdf(sample, grid, lam)
        expected = (1.0 + lam**2) / lam**2 * estimate.f_hat - smoothed / lam**2
        assert np.allclose(estimate.f_corrected, expected, atol=1e-12)

    def test_smoothed_cdf_shape(self):
        """F̂_λ непрерывна, не убывает и стремится к 0 и 1."""
        rng = make_rng(24)
        sample = validate_sample(rng.standard_normal(40), rng.uniform(0.5, 2.0, 40), 4)
        values = smoothed_cdf(sample, ThetaGrid(np.linspace(-40.0, 40.0, 801)), 1.0)
        assert np.all(np.diff(values) >= 0.0)
        assert values[0] < 1e-12
        assert values[-1] > 1.0 - 1e-12
        assert np.max(np.diff(values)) < 0.1

    def test_convolution_identity(self):
        """E F̂_λ(θ) = Φ((θ − θᵢ)/(√(1+λ²)σᵢ/√m)) при нормальном шуме."""
        n, m, lam, theta_i = 1_000_000, 4, 1.0, 0.3
        draws = theta_i + make_rng(25).standard_normal(n) / math.sqrt(m)
        sample = validate_sample(draws, np.ones(n), m)
        points = np.array([-0.5, 0.3, 1.2])
        values = smoothed_cdf(sample, ThetaGrid(points), lam)
        for theta, value in zip(points, values):
            terms = normal_cdf((theta - draws) / (lam / math.sqrt(m)))
            mc_se = terms.std(ddof=1) / math.sqrt(n)
            expected = normal_cdf((theta - theta_i) / (math.sqrt(1.0 + lam**2) / math.sqrt(m)))
            assert abs(value - expected) < 4.0 * mc_se

    def test_se_hand_sample(self):
        """n = 3, λ = 1: SE по базису 1{ϑᵢ≤θ} − (Φ − 1{ϑᵢ≤θ})."""
        draws = [0.0, 0.8, 2.0]
        noise_var = [1.0, 4.0, 0.25]
        sample = validate_sample(draws, noise_var, 1)
        theta = 1.0
        basis = []
        for x, s2 in zip(draws, noise_var):
            ind = float(x <= theta)
            basis.append(ind - (normal_cdf((theta - x) / math.sqrt(s2)) - ind))
        mean = sum(basis) / 3.0
        se = math.sqrt(sum((b - mean) ** 2 for b in basis) / 2.0 / 3.0)
        assert se_lambda_cdf(sample, theta, 1.0) == pytest.approx(se, rel=1e-12)
        assert lambda_cdf(sample, make_grid(theta), 1.0).f_corrected[0] == pytest.approx(mean)

    def test_se_zero_noise(self):
        """σᵢ² → 0: SE индикатора."""
        sample = validate_sample([0.0, 1.0, 2.0, 3.0], np.full(4, 1e-14), 2)
        expected = math.sqrt(0.25 * 4 / 3) / 2.0
        assert se_lambda_cdf(sample, 1.5, 1.0) == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("lam", [0.0, -1.0, float("inf"), "x"])
    def test_bad_lambda(self, hand_sample, lam):
        """λ ≤ 0 или не число - BadLambda."""
        with pytest.raises(BadLambda):
            check_lambda(lam)
        with pytest.raises(BadLambda):
            lambda_cdf(hand_sample, make_grid(0.0), lam)
        with pytest.raises(BadLambda):
            lambda_quantile(hand_sample, 0.5, lam)


class TestLambdaQuantile:
    """Тесты λ-jackknife для квантилей."""

    def test_symmetric_hand_case(self):
        """ϑ = 0, σ² = m = λ = 1, τ = 0.5: q̂_λ = 0, q̇ = 0."""
        sample = validate_sample([0.0, 0.0], [1.0, 1.0], 1)
        assert smoothed_quantile(sample, 0.5, 1.0) == pytest.approx(0.0, abs=1e-8)
        estimate = lambda_quantile(sample, 0.5, 1.0)
        assert estimate.q_corrected == pytest.approx(0.0, abs=1e-8)
        assert estimate.method == "lambda_jackknife"

    def test_zero_noise(self):
        """σᵢ² = 1e−12: q̂_λ ≈ q̂ и q̇ ≈ q̂."""
        rng = make_rng(26)
        sample = validate_sample(rng.standard_normal(50), np.full(50, 1e-12), 1)
        estimate = lambda_quantile(sample, 0.51, 1.0)
        assert estimate.q_naive == quantile_plugin(sample, 0.51)
        assert abs(estimate.q_corrected - estimate.q_naive) < 1e-4

    def test_smoothed_quantile_monotone(self):
        """q̂_λ(τ₁) ≤ q̂_λ(τ₂) при τ₁ < τ₂."""
        rng = make_rng(27)
        sample = validate_sample(rng.standard_normal(30), rng.uniform(0.5, 2.0, 30), 3)
        values = [smoothed_quantile(sample, tau, 1.0) for tau in (0.05, 0.2, 0.5, 0.8, 0.95)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_left_inverse(self):
        """F̂_λ(q̂_λ(τ)) = τ с точностью бисекции."""
        rng = make_rng(28)
        sample = validate_sample(rng.standard_normal(30), rng.uniform(0.5, 2.0, 30), 3)
        q = smoothed_quantile(sample, 0.3, 0.8)
        assert smoothed_cdf(sample, make_grid(q), 0.8)[0] == pytest.approx(0.3, abs=1e-8)

    def test_bracket_failure(self):
        """τ вне значений F̂_λ на расширенном интервале - BracketFailure."""
        sample = validate_sample([0.0, 1.0], [1.0, 1.0], 1)
        with patch("jackknife._smoothed_at", return_value=np.array([0.0])) as mocked:
            with pytest.raises(BracketFailure):
                smoothed_quantile(sample, 0.5, 1.0)
        assert mocked.call_count == 6

    def test_bad_tau(self):
        """τ вне (0, 1) - BadTau."""
        sample = validate_sample([0.0, 1.0], [1.0, 1.0], 1)
        with pytest.raises(BadTau):
            lambda_quantile(sample, 1.2, 1.0)
