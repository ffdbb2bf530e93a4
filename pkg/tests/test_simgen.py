import math

import numpy as np
import pytest
from scipy.stats import kstest, norm, skew

from ppcm.errors import ConfigError
from ppcm.rng import derive_seed, substream
from ppcm.simgen import (
    PRACTICE_EFFECT,
    ScenarioSpec,
    gen_replicate,
    sample_skew_normal,
)

SN_DELTA = 5.0 / math.sqrt(26.0)
SN_LOCATION = -1.6 * SN_DELTA * math.sqrt(2.0 / math.pi)


class TestSkewNormal:
    def test_zero_shape_is_normal(self):
        rng = substream(0, "sn")
        draws = sample_skew_normal(0.3, 1.7, 0.0, rng, size=100_000)
        stat = kstest(draws, norm(loc=0.3, scale=1.7).cdf).statistic
        assert stat < 0.02

    def test_reference_parameters_moments(self):
        rng = substream(1, "sn")
        draws = sample_skew_normal(SN_LOCATION, 1.6, 5.0, rng, size=100_000)
        assert draws.mean() == pytest.approx(0.0, abs=0.02)
        # omega^2 (1 - 2 delta^2 / pi) = 0.9934
        var_exact = 1.6**2 * (1 - 2 * SN_DELTA**2 / math.pi)
        assert var_exact == pytest.approx(0.993, abs=0.001)
        assert draws.var() == pytest.approx(var_exact, abs=0.03)

    def test_reference_parameters_skewness(self):
        # closed-form skewness (4-pi)/2 * (delta*sqrt(2/pi))^3 / (1-2 delta^2/pi)^1.5
        rng = substream(2, "sn")
        draws = sample_skew_normal(SN_LOCATION, 1.6, 5.0, rng, size=100_000)
        b = SN_DELTA * math.sqrt(2.0 / math.pi)
        skew_exact = (4 - math.pi) / 2 * b**3 / (1 - 2 * SN_DELTA**2 / math.pi) ** 1.5
        assert skew_exact == pytest.approx(0.851, abs=0.002)
        assert skew(draws) == pytest.approx(skew_exact, abs=0.05)

    def test_bad_scale(self):
        with pytest.raises(ConfigError):
            sample_skew_normal(0.0, -1.0, 0.0, substream(0, "x"), size=2)


class TestGenReplicate:
    def test_deterministic(self):
        spec = ScenarioSpec(scenario=3, n_population=2000, n_sample=200, seed=9)
        a = gen_replicate(spec)
        b = gen_replicate(spec)
        assert a.truth == b.truth
        np.testing.assert_array_equal(a.latent_outcomes, b.latent_outcomes)
        np.testing.assert_array_equal(a.cohort.responded, b.cohort.responded)
        assert a.cohort.unit_ids.tolist() == b.cohort.unit_ids.tolist()

    def test_scenario1_rates(self):
        sizes, rates = [], []
        for r in range(20):
            spec = ScenarioSpec(scenario=1, seed=derive_seed(5, "rep", r))
            rep = gen_replicate(spec)
            sizes.append(rep.cohort.n_units)
            resp = rep.cohort.responded[:, 1] == 1
            alive = rep.cohort.alive[:, 1] == 1
            rates.append(resp.sum() / alive.sum())
        assert 900 <= np.mean(sizes) <= 1100
        assert abs(np.mean(rates) - 0.75) <= 0.03

    def test_scenario1_truth(self):
        # E y1 = -1 - 0.5 + 0.5 + 0 + 0 - 0.3 * E y0 = -0.7 with E y0 = -1
        truths = []
        for r in range(200):
            spec = ScenarioSpec(
                scenario=1, n_population=10_000, seed=derive_seed(6, "rep", r)
            )
            truths.append(gen_replicate(spec).truth)
        assert np.mean(truths) == pytest.approx(-0.700, abs=0.01)

    def test_scenario5_death_rate(self):
        deaths = []
        for r in range(20):
            spec = ScenarioSpec(scenario=5, seed=derive_seed(7, "rep", r))
            rep = gen_replicate(spec)
            deaths.append(1.0 - rep.population.alive[:, 1].mean())
        assert np.mean(deaths) == pytest.approx(0.12, abs=0.02)

    def test_scenario5_truth_is_survivor_mean(self):
        spec = ScenarioSpec(scenario=5, n_population=5000, seed=3)
        rep = gen_replicate(spec)
        surv = rep.population.alive[:, 1] == 1
        assert rep.truth == pytest.approx(rep.latent_outcomes[surv, 1].mean())
        assert surv.sum() < rep.population.n_units

    def test_scenarios_1_and_2_share_outcomes_and_selection(self):
        s1 = gen_replicate(ScenarioSpec(scenario=1, n_population=4000, seed=11))
        s2 = gen_replicate(ScenarioSpec(scenario=2, n_population=4000, seed=11))
        np.testing.assert_array_equal(s1.latent_outcomes, s2.latent_outcomes)
        assert s1.cohort.unit_ids.tolist() == s2.cohort.unit_ids.tolist()
        # the response mechanisms differ
        assert not np.array_equal(s1.cohort.responded, s2.cohort.responded)

    def test_scenario4_adds_practice_effect_to_observed_only(self):
        s3 = gen_replicate(ScenarioSpec(scenario=3, n_population=4000, seed=13))
        s4 = gen_replicate(ScenarioSpec(scenario=4, n_population=4000, seed=13))
        assert s4.truth == pytest.approx(s3.truth)  # truth uses unshifted y1
        m = s4.cohort.responded[:, 1] == 1
        np.testing.assert_allclose(
            s4.cohort.outcome[m, 1], s3.cohort.outcome[m, 1] + PRACTICE_EFFECT
        )
        np.testing.assert_allclose(s4.cohort.outcome[:, 0], s3.cohort.outcome[:, 0])

    def test_covariate_moments(self):
        spec = ScenarioSpec(scenario=1, n_population=100_000, seed=17)
        rep = gen_replicate(spec)
        x = rep.population.covariates[0]
        for j in range(2, 8):
            assert x[:, j].mean() == pytest.approx(0.0, abs=0.01)
            assert x[:, j].var() == pytest.approx(1.0 / 3.0, abs=0.01)
        for j in range(2):
            assert x[:, j].mean() == pytest.approx(0.5, abs=0.01)

    def test_frames_validate_by_construction(self):
        # constructing the frames runs the full invariant validation
        for scenario in (1, 2, 3, 4, 5):
            rep = gen_replicate(
                ScenarioSpec(scenario=scenario, n_population=3000, n_sample=300, seed=19)
            )
            assert rep.population.n_units == 3000
            assert (rep.cohort.responded[:, 0] == 1).all()

    def test_bad_spec(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(scenario=9)
        with pytest.raises(ConfigError):
            ScenarioSpec(scenario=1, n_population=10, n_sample=100)

    def test_literal_intercepts_mode(self):
        # calibration off restores the stated intercepts: the sample
        # shrinks to ~700 and response collapses for scenario 3
        spec = ScenarioSpec(scenario=3, seed=23, calibrate_intercepts=False)
        rep = gen_replicate(spec)
        assert rep.cohort.n_units < 850
        resp_rate = rep.cohort.responded[:, 1].mean()
        assert resp_rate < 0.3
