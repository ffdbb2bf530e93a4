import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_population
from ppcm.errors import ConfigError
from ppcm.triangular import (
    SensitivityConfig,
    TriangularPrior,
    eval_bound,
    sample_sensitivity,
    triangular_mean,
    triangular_ppf,
    triangular_var,
)

# age-quadratic bound sets used in the reference sensitivity analysis
UPPER_PE_WAVE1 = (4.8, -0.1, 5.2e-4)
UPPER_PE_WAVE2 = (11.0, -0.3, 1.9e-3)
LOWER_DROPOUT = (-8.0, -0.3, 3.9e-3)


class TestEvalBound:
    def test_constant_prior(self):
        prior = TriangularPrior(0.0, 0.15, 0.15)
        for a in (0.0, 35.0, 99.0):
            assert eval_bound(prior, a) == (0.0, 0.15, 0.15)

    def test_pe_upper_bound_at_35(self):
        prior = TriangularPrior(0.0, UPPER_PE_WAVE1, UPPER_PE_WAVE1)
        expected = 4.8 - 0.1 * 35 + 5.2e-4 * 35**2  # = 1.937
        lo, mode, hi = eval_bound(prior, 35.0)
        assert lo == 0.0
        assert mode == pytest.approx(expected)
        assert hi == pytest.approx(expected)
        assert hi == pytest.approx(1.937)

    def test_dropout_lower_bound_at_80(self):
        prior = TriangularPrior(LOWER_DROPOUT, LOWER_DROPOUT, 0.0)
        expected = -8.0 - 0.3 * 80 + 3.9e-3 * 80**2  # = -7.04
        lo, mode, hi = eval_bound(prior, 80.0)
        assert lo == pytest.approx(expected)
        assert lo == pytest.approx(-7.04)
        assert hi == 0.0

    def test_scale_applies_to_all_bounds(self):
        prior = TriangularPrior(0.0, UPPER_PE_WAVE1, UPPER_PE_WAVE1)
        lo1, mo1, hi1 = eval_bound(prior, 50.0, scale=1.0)
        lo2, mo2, hi2 = eval_bound(prior, 50.0, scale=2.0)
        assert (lo2, mo2, hi2) == (2 * lo1, 2 * mo1, 2 * hi1)

    def test_invalid_ordering_raises(self):
        # mode below the minimum at every age
        prior = TriangularPrior(1.0, 0.5, 2.0)
        with pytest.raises(ConfigError, match="min <= mode <= max"):
            eval_bound(prior, 10.0)

    def test_pe_bound_goes_invalid_at_high_age(self):
        # the wave-1 quadratic dips below zero on ages (92.3, 100) where min=0
        prior = TriangularPrior(0.0, UPPER_PE_WAVE1, UPPER_PE_WAVE1)
        eval_bound(prior, 90.0)
        assert 4.8 - 0.1 * 96 + 5.2e-4 * 96**2 < 0
        with pytest.raises(ConfigError):
            eval_bound(prior, 96.0)


class TestSampler:
    def test_degenerate_is_exactly_zero(self):
        u = np.random.default_rng(0).random(1000)
        draws = triangular_ppf(u, 0.0, 0.0, 0.0)
        assert (draws == 0.0).all()

    def test_mode_at_max_mean(self):
        # Tri(0, b, b) has mean 2b/3
        rng = np.random.default_rng(1)
        b = 0.15
        draws = triangular_ppf(rng.random(100_000), 0.0, b, b)
        assert draws.mean() == pytest.approx(0.100, abs=0.005)
        assert draws.min() >= 0.0
        assert draws.max() <= b

    def test_mode_at_min_support(self):
        # dropout-style Tri(L, L, 0) lives on [L, 0]
        rng = np.random.default_rng(2)
        draws = triangular_ppf(rng.random(50_000), -7.04, -7.04, 0.0)
        assert draws.min() >= -7.04
        assert draws.max() <= 0.0
        assert draws.mean() == pytest.approx((-7.04 * 2) / 3, abs=0.02)

    @pytest.mark.parametrize(
        "lo,mode,hi",
        [
            (0.0, 0.15, 0.15),
            (-1.0, 0.0, 2.0),
            (0.0, 1.937, 1.937),     # PE bound at age 35
            (-13.25, -13.25, 0.0),   # dropout bound at age 50
            (-7.04, -7.04, 0.0),     # dropout bound at age 80
            (0.0, 2.39, 2.39),       # second-wave PE bound at age 60
        ],
    )
    def test_moments_match_closed_form(self, lo, mode, hi):
        n = 100_000
        rng = np.random.default_rng(hash((lo, mode, hi)) % 2**32)
        draws = triangular_ppf(rng.random(n), lo, mode, hi)
        mean = triangular_mean(lo, mode, hi)
        var = triangular_var(lo, mode, hi)
        se_mean = math.sqrt(var / n)
        assert draws.mean() == pytest.approx(mean, abs=3 * se_mean + 1e-12)
        # variance of the sample variance ~ (mu4 - var^2)/n; bound mu4 <= range^4
        se_var = math.sqrt(((hi - lo) ** 4 + 1.0) / n)
        assert draws.var() == pytest.approx(var, abs=3 * se_var)

    @settings(max_examples=50, deadline=None)
    @given(
        st.floats(min_value=0.01, max_value=5.0),
        st.floats(min_value=0.0, max_value=1.0),
    )
    def test_ppf_monotone_in_bounds(self, b, u):
        # pointwise larger bounds never decrease the draw under the same u
        small = triangular_ppf(np.array([u]), 0.0, b, b)[0]
        large = triangular_ppf(np.array([u]), 0.0, 2 * b, 2 * b)[0]
        assert large >= small - 1e-12


class TestSampleSensitivity:
    def pop(self, n=50, age=None):
        covs = [np.zeros((n, 1)), np.zeros((n, 0))]
        alive = np.ones((n, 2), dtype=int)
        alive[-5:, 1] = 0
        return make_population(alive, covs, age=age)

    def test_all_zero_config(self):
        pop = self.pop()
        cfg = SensitivityConfig.zeros(1)
        gamma, delta = sample_sensitivity(cfg, pop, seed=0)
        assert (gamma == 0).all() and (delta == 0).all()

    def test_wave0_always_zero_and_dead_zero(self):
        pop = self.pop()
        cfg = SensitivityConfig(
            gamma=(TriangularPrior(-1.0, -1.0, 0.0),),
            delta=(TriangularPrior(0.0, 0.2, 0.2),),
        )
        gamma, delta = sample_sensitivity(cfg, pop, seed=1)
        assert (gamma[:, 0] == 0).all() and (delta[:, 0] == 0).all()
        dead = pop.alive[:, 1] == 0
        assert (gamma[dead, 1] == 0).all() and (delta[dead, 1] == 0).all()
        live = ~dead
        assert (gamma[live, 1] <= 0).all() and (gamma[live, 1] >= -1).all()
        assert (delta[live, 1] >= 0).all() and (delta[live, 1] <= 0.2).all()

    def test_age_dependent_needs_age(self):
        pop = self.pop(age=None)
        cfg = SensitivityConfig(
            gamma=(TriangularPrior(),),
            delta=(TriangularPrior(0.0, UPPER_PE_WAVE1, UPPER_PE_WAVE1),),
        )
        with pytest.raises(ConfigError, match="age"):
            sample_sensitivity(cfg, pop, seed=0)

    def test_age_dependent_draws_respect_bounds(self):
        n = 2000
        age = np.column_stack([np.full(n, 35.0), np.full(n, 40.0)])
        pop = self.pop(n=n, age=age)
        cfg = SensitivityConfig(
            gamma=(TriangularPrior(),),
            delta=(TriangularPrior(0.0, UPPER_PE_WAVE1, UPPER_PE_WAVE1),),
        )
        _, delta = sample_sensitivity(cfg, pop, seed=3)
        bound_40 = 4.8 - 0.1 * 40 + 5.2e-4 * 1600
        live = pop.alive[:, 1] == 1
        assert delta[live, 1].max() <= bound_40
        assert delta[live, 1].min() >= 0.0

    def test_monotone_in_scale(self):
        pop = self.pop()
        base = SensitivityConfig(
            gamma=(TriangularPrior(),), delta=(TriangularPrior(0.0, 0.1, 0.1),)
        )
        _, d1 = sample_sensitivity(base, pop, seed=5)
        _, d2 = sample_sensitivity(base.with_scale(2.0), pop, seed=5)
        assert (d2[:, 1] >= d1[:, 1]).all()

    def test_gamma_delta_streams_independent(self):
        # changing the gamma prior must not move the delta draws
        pop = self.pop()
        a = SensitivityConfig(
            gamma=(TriangularPrior(),), delta=(TriangularPrior(0.0, 0.1, 0.1),)
        )
        b = SensitivityConfig(
            gamma=(TriangularPrior(-2.0, -2.0, 0.0),),
            delta=(TriangularPrior(0.0, 0.1, 0.1),),
        )
        _, da = sample_sensitivity(a, pop, seed=6)
        _, db = sample_sensitivity(b, pop, seed=6)
        np.testing.assert_array_equal(da, db)


class TestConfig:
    def test_json_roundtrip(self, tmp_path):
        cfg = SensitivityConfig(
            gamma=(TriangularPrior(LOWER_DROPOUT, LOWER_DROPOUT, 0.0),),
            delta=(TriangularPrior(0.0, UPPER_PE_WAVE1, UPPER_PE_WAVE1),),
            scale_k=2.0,
        )
        path = tmp_path / "sens.json"
        import json

        path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
        back = SensitivityConfig.from_json(path, n_post_waves=1)
        assert back == cfg

    def test_zero_detection(self):
        assert SensitivityConfig.zeros(2).gamma_is_zero
        assert SensitivityConfig.zeros(2).delta_is_zero
        cfg = SensitivityConfig(
            gamma=(TriangularPrior(-1, -1, 0), TriangularPrior()),
            delta=(TriangularPrior(), TriangularPrior()),
        )
        assert not cfg.gamma_is_zero
        assert cfg.delta_is_zero
