import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from perrkit.simulate import (dependence_effect, draw_frailty, draw_treatment_time,
                              simulate_cohort, thinning_simulate,
                              treatment_time_from_exponential)
from perrkit.types import DependenceSpec, ScenarioConfig

NONE = DependenceSpec()


class TestDrawFrailty:
    def test_zero_variance_is_degenerate(self, rng):
        assert draw_frailty(0.0, rng) == 1.0

    def test_negative_variance_rejected(self, rng):
        with pytest.raises(ValueError):
            draw_frailty(-0.1, rng)

    @pytest.mark.parametrize("variance", [0.5, 0.1])
    def test_moments(self, variance):
        rng = np.random.default_rng(42)
        draws = np.array([draw_frailty(variance, rng) for _ in range(100_000)])
        n = draws.size
        se_mean = draws.std(ddof=1) / math.sqrt(n)
        assert abs(draws.mean() - 1.0) < 3 * se_mean
        # SE of the sample variance from the fourth central moment
        m4 = np.mean((draws - draws.mean()) ** 4)
        s2 = draws.var(ddof=1)
        se_var = math.sqrt((m4 - s2 ** 2) / n)
        assert abs(s2 - variance) < 3 * se_var


class TestTreatmentTime:
    def test_closed_form_inversion(self):
        # cumulative hazard t^0.5 exp(-2) hits 1 at t = e^4
        t = treatment_time_from_exponential(1.0, u=1.0, x=0.0, z=0.0, c0=-2.0)
        assert t == pytest.approx(math.exp(4.0), rel=1e-12)

    def test_zero_exponential_gives_zero(self):
        assert treatment_time_from_exponential(0.0, 1.3, 1.0, 0.0, -2.0) == 0.0

    def test_nonpositive_frailty_rejected(self):
        with pytest.raises(ValueError):
            treatment_time_from_exponential(1.0, 0.0, 0.0, 0.0, -2.0)

    def test_uptake_fraction_matches_default_design(self):
        # Monte Carlo oracle for P(treated before tau) under the defaults.
        rng = np.random.default_rng(7)
        n = 100_000
        tau = rng.uniform(1, 3, n)
        hit = 0
        for i in range(n):
            x = float(rng.integers(0, 2))
            z = float(rng.integers(0, 2))
            u = draw_frailty(0.1, rng)
            hit += draw_treatment_time(x, z, u, -2.0, rng) < tau[i]
        assert hit / n == pytest.approx(0.27, abs=0.02)


class TestDependenceEffect:
    def test_constant_single_prior_event(self):
        spec = DependenceSpec(kind="constant", value=1.0)
        assert dependence_effect([0.3], 1.0, spec) == pytest.approx(math.log(2.0))

    def test_empty_history_is_zero(self):
        for spec in (DependenceSpec(kind="constant", value=1.0),
                     DependenceSpec(kind="transient", value=-1.0), NONE):
            assert dependence_effect([], 5.0, spec) == 0.0

    def test_transient_decay(self):
        spec = DependenceSpec(kind="transient", value=-1.0)
        assert dependence_effect([0.5], 1.5, spec) == pytest.approx(-math.exp(-0.5))

    def test_future_events_ignored(self):
        spec = DependenceSpec(kind="constant", value=2.0)
        assert dependence_effect([0.5, 1.4], 1.0, spec) == pytest.approx(2.0 * math.log(2))

    def test_inhibitory_transient_accumulates(self):
        spec = DependenceSpec(kind="transient", value=-1.0)
        got = dependence_effect([0.2, 0.9], 1.0, spec)
        assert got == pytest.approx(-(math.exp(-0.5 * 0.8) + math.exp(-0.5 * 0.1)))

    def test_excitatory_transient_uses_most_recent_event(self):
        spec = DependenceSpec(kind="transient", value=1.0)
        got = dependence_effect([0.2, 0.9], 1.0, spec)
        assert got == pytest.approx(math.exp(-0.5 * 0.1))

    @given(st.floats(0.1, 5.0), st.integers(0, 6))
    @settings(max_examples=50, deadline=None)
    def test_excitatory_transient_bounded_by_value(self, t_query, n_events):
        # the fading effect never exceeds the fresh-event maximum
        spec = DependenceSpec(kind="transient", value=1.0)
        history = sorted(np.linspace(0.01, t_query * 0.99, n_events)) if n_events else []
        assert dependence_effect(history, t_query, spec) <= spec.value + 1e-12

    @given(st.lists(st.floats(0.01, 0.99), max_size=8), st.integers(0, 5))
    @settings(max_examples=60, deadline=None)
    def test_inhibitory_transient_additive_over_history(self, times, split):
        spec = DependenceSpec(kind="transient", value=-0.7)
        history = sorted(set(times))
        a, b = history[: split % (len(history) + 1)], history[split % (len(history) + 1):]
        whole = dependence_effect(history, 1.0, spec)
        parts = dependence_effect(a, 1.0, spec) + dependence_effect(b, 1.0, spec)
        assert whole == pytest.approx(parts, abs=1e-12)


class TestThinning:
    def test_homogeneous_poisson_moments(self):
        # k=1, w=1, exp(beta0) = 2, tau=1: counts are Poisson(2)
        rng = np.random.default_rng(11)
        n = 10_000
        counts = np.array([
            len(thinning_simulate(1.0, math.log(2.0), 0.0, 0.0, 0.0, 1.0,
                                  None, 1.0, NONE, rng))
            for _ in range(n)
        ], dtype=float)
        se_mean = counts.std(ddof=1) / math.sqrt(n)
        assert abs(counts.mean() - 2.0) < 3 * se_mean
        m4 = np.mean((counts - counts.mean()) ** 4)
        s2 = counts.var(ddof=1)
        se_var = math.sqrt((m4 - s2 ** 2) / n)
        assert abs(s2 - 2.0) < 3 * se_var

    def test_null_treatment_effect_is_inert(self):
        # with log_hr = 0 the same seed gives identical events either way
        a = thinning_simulate(0.8, -0.3, 0.0, 1.0, 0.0, 1.2, 0.7, 2.5, NONE,
                              np.random.default_rng(5))
        b = thinning_simulate(0.8, -0.3, 0.0, 1.0, 0.0, 1.2, None, 2.5, NONE,
                              np.random.default_rng(5))
        assert a == b

    def test_exponential_gaps_kolmogorov_smirnov(self):
        # k=1, no frailty spread, no dependence: complete gaps are Exp(rate).
        # tau is far beyond the gap scale so censoring truncation is negligible.
        rng = np.random.default_rng(3)
        rate = math.exp(0.4)
        gaps = []
        while len(gaps) < 10_000:
            ev = thinning_simulate(1.0, 0.4, 0.0, 0.0, 0.0, 1.0, None, 40.0, NONE, rng)
            gaps.extend(np.diff(np.asarray(ev)))
        gaps = np.asarray(gaps[:10_000])
        d = stats.kstest(gaps, "expon", args=(0.0, 1.0 / rate)).statistic
        assert d < 1.628 / math.sqrt(gaps.size)

    @pytest.mark.parametrize("k", [0.8, 1.0, 1.2])
    @pytest.mark.parametrize("spec", [
        NONE,
        DependenceSpec(kind="constant", value=1.0),
        DependenceSpec(kind="constant", value=-1.0),
        DependenceSpec(kind="transient", value=1.0),
        DependenceSpec(kind="transient", value=-1.0),
    ], ids=lambda s: f"{s.kind}{s.value:+.0f}" if s.kind != "none" else "none")
    def test_envelope_never_fires_smoke(self, k, spec):
        # the envelope bound is asserted inside thinning_simulate itself
        rng = np.random.default_rng(17)
        for _ in range(300):
            tau = float(rng.uniform(1, 3))
            w = draw_frailty(0.5, rng)
            ttrt = float(rng.uniform(0.1, tau)) if rng.uniform() < 0.3 else None
            thinning_simulate(k, -0.8, math.log(2.0), float(rng.integers(0, 2)),
                              float(rng.integers(0, 2)), w, ttrt, tau, spec, rng)

    def test_rejects_bad_params(self, rng):
        with pytest.raises(ValueError):
            thinning_simulate(0.0, 0.0, 0.0, 0, 0, 1.0, None, 1.0, NONE, rng)
        with pytest.raises(ValueError):
            thinning_simulate(1.0, 0.0, 0.0, 0, 0, 0.0, None, 1.0, NONE, rng)


def _default_config(**kw):
    base = dict(k=0.8, beta0=-0.5, log_hr=math.log(2.0), dependence=NONE,
                master_seed=99)
    base.update(kw)
    return ScenarioConfig(**base)


class TestSimulateCohort:
    def test_size_and_determinism(self):
        cfg = _default_config()
        a = simulate_cohort(cfg, 3)
        b = simulate_cohort(cfg, 3)
        assert len(a) == 600
        assert a == b

    def test_replicates_differ(self):
        cfg = _default_config()
        assert simulate_cohort(cfg, 0) != simulate_cohort(cfg, 1)

    def test_treated_fraction(self):
        cfg = _default_config()
        subs = [s for r in range(10) for s in simulate_cohort(cfg, r)]
        frac = sum(s.treated for s in subs) / len(subs)
        assert frac == pytest.approx(0.27, abs=0.05)

    def test_end_times_in_tau_range(self):
        cfg = _default_config()
        for s in simulate_cohort(cfg, 0):
            assert 1.0 < s.end_time < 3.0
            assert set(s.covariates) == {"x", "z"}
