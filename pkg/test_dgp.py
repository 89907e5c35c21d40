"""
Тесты для модуля dgp.py
"""

import math

import numpy as np
import pytest
from scipy import stats

from core import BadSpec, make_rng
from dgp import (
    DesignSpec,
    design_truth,
    draw_design,
    gen_binomial,
    gen_normal,
    gen_skew_normal,
    skew_normal_noise,
    skew_normal_skewness,
)
from empirical import reduce_panel


class TestDesignSpec:
    """Тесты проверки описания дизайна."""

    def test_defaults(self):
        spec = DesignSpec("normal", n=50, m=3)
        assert spec.psi2 == 1.0
        assert spec.sigma2 == 5.0
        assert spec.is_panel
        assert spec.to_dict()["kind"] == "normal"

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "poisson", "n": 10, "m": 3},
            {"kind": "normal", "n": 1, "m": 3},
            {"kind": "normal", "n": 10, "m": 1},
            {"kind": "normal", "n": 2.5, "m": 3},
            {"kind": "normal", "n": 10, "m": 3, "seed": -1},
            {"kind": "normal", "n": 10, "m": 3, "psi2": 0.0},
            {"kind": "skew_normal", "n": 10, "m": 3, "sigma2": -1.0},
            {"kind": "normal", "n": 10, "m": 3, "eta": float("inf")},
        ],
    )
    def test_invalid(self, kwargs):
        """Некорректный дизайн - BadSpec."""
        with pytest.raises(BadSpec):
            DesignSpec(**kwargs)

    def test_integral_float_accepted(self):
        """n = 10.0 из JSON приводится к int."""
        assert DesignSpec("binomial", n=10.0, m=5).n == 10


class TestDraws:
    """Тесты генерации повторений."""

    def test_deterministic_streams(self):
        """Одно зерно и повторение - одинаковые данные; разные повторения различаются."""
        spec = DesignSpec("normal", n=20, m=3, seed=7)
        first = gen_normal(spec, 4).data
        assert np.array_equal(first, gen_normal(spec, 4).data)
        assert not np.array_equal(first, gen_normal(spec, 5).data)

    def test_panel_sample_consistent(self):
        """Выборка - reduce_panel от панели."""
        draw = draw_design(DesignSpec("skew_normal", n=15, m=4), 2)
        assert draw.panel.data.shape == (15, 4)
        reduced = reduce_panel(draw.panel)
        assert np.array_equal(draw.sample.draws, reduced.draws)
        assert np.array_equal(draw.sample.noise_var, reduced.noise_var)
        assert draw.theta.shape == (15,)

    def test_binomial(self):
        """Доли на решетке k/m, дисперсия не ниже (1/m)(1−1/m)."""
        spec = DesignSpec("binomial", n=500, m=5, seed=9)
        draw = draw_design(spec, 0)
        assert draw.panel is None
        sample = draw.sample
        assert np.allclose(sample.draws * 5, np.round(sample.draws * 5))
        assert np.all(sample.noise_var >= 0.16 - 1e-15)
        edge = (sample.draws == 0.0) | (sample.draws == 1.0)
        assert edge.any()
        assert np.allclose(sample.noise_var[edge], 0.16)
        assert np.all((draw.theta >= 0.0) & (draw.theta <= 1.0))
        assert np.array_equal(gen_binomial(spec, 0).draws, sample.draws)

    def test_wrong_generator(self):
        """Генератор другого дизайна - BadSpec."""
        with pytest.raises(BadSpec):
            gen_skew_normal(DesignSpec("normal", n=5, m=3))
        with pytest.raises(BadSpec):
            gen_binomial(DesignSpec("normal", n=5, m=3))
        with pytest.raises(BadSpec):
            gen_normal(DesignSpec("binomial", n=5, m=3))


class TestSkewNormal:
    """Тесты скошенно-нормального шума."""

    def test_moments(self):
        """Нулевое среднее, дисперсия σ², положительная асимметрия."""
        noise = skew_normal_noise(make_rng(51), 1_000_000, 5.0)
        assert abs(noise.mean()) < 4.0 * math.sqrt(5.0 / noise.size)
        assert noise.var() == pytest.approx(5.0, rel=1e-2)
        assert stats.skew(noise) == pytest.approx(skew_normal_skewness(), abs=0.015)

    def test_skewness_value(self):
        """α = 1: асимметрия ≈ 0.137; α = 0: 0."""
        assert skew_normal_skewness(1.0) == pytest.approx(0.137, abs=1e-3)
        assert skew_normal_skewness(0.0) == 0.0


class TestDesignTruth:
    """Тесты эталонных функций дизайна."""

    def test_normal(self):
        truth = design_truth(DesignSpec("normal", n=5, m=3))
        assert float(truth.F(0.0)) == pytest.approx(0.5)
        assert float(truth.b_q(0.9)) == pytest.approx(5.0 * stats.norm.ppf(0.9) / 2.0)

    def test_binomial(self):
        truth = design_truth(DesignSpec("binomial", n=5, m=3))
        assert float(truth.F(0.3)) == pytest.approx(0.3)
        assert float(truth.b_F(0.25)) == pytest.approx(0.25)
