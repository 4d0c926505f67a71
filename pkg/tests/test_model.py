import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvdelay.model import (SQRT3_PI, ConfigurationError, DelayProfile, DomainConfig, GainConfig,
                            SystemState, alpha_lower_bound, check_gain_feasibility,
                            critical_lengths, is_critical_length, validate_delay_profile)


class TestGainConfig:
    def test_negative_alpha_rejected(self):
        with pytest.raises(ConfigurationError):
            GainConfig(-0.1, 0.0)

    def test_zero_alpha_needs_zero_beta(self):
        with pytest.raises(ConfigurationError):
            GainConfig(0.0, 0.3)
        assert GainConfig(0.0, 0.0).conservative

    def test_feasible_shortcut(self):
        assert GainConfig(1.0, 0.5).feasible(0.5)


class TestDomain:
    def test_certified_flag(self):
        assert DomainConfig(5.0).certified
        assert not DomainConfig(6.0).certified
        assert not DomainConfig(SQRT3_PI).certified

    def test_positive_length(self):
        with pytest.raises(ConfigurationError):
            DomainConfig(0.0)


class TestFeasibility:
    def test_figure_parameters(self):
        assert check_gain_feasibility(1.0, 0.5, 0.5)

    @pytest.mark.parametrize("d", [0.0, 0.3, 0.99])
    def test_beta_zero(self, d):
        assert check_gain_feasibility(0.7, 0.0, d)
        assert not check_gain_feasibility(0.0, 0.0, d)

    def test_zero_margin_is_infeasible(self):
        assert not check_gain_feasibility(0.5, 1.0, 0.0)
        # exact tie at the lower bound
        assert not check_gain_feasibility(0.75, 0.5, 0.5)

    @pytest.mark.parametrize("d", [-0.1, 1.0, 1.5])
    def test_d_outside_range(self, d):
        with pytest.raises(ConfigurationError):
            check_gain_feasibility(1.0, 0.5, d)
        with pytest.raises(ConfigurationError):
            alpha_lower_bound(0.5, d)

    @pytest.mark.parametrize("beta,d,expected", [(0.5, 0.5, 0.75), (0.0, 0.7, 0.0), (1.0, 0.0, 1.0)])
    def test_alpha_lower_bound(self, beta, d, expected):
        assert alpha_lower_bound(beta, d) == pytest.approx(expected, abs=1e-15)

    @settings(max_examples=500, deadline=None)
    @given(st.floats(0, 10), st.floats(-5, 5), st.floats(0, 0.999))
    def test_lower_bound_equivalence(self, alpha, beta, d):
        lb = alpha_lower_bound(beta, d)
        # both sides are exact rearrangements; skip round-off ties
        if abs(alpha - lb) > 1e-9 * max(1.0, lb):
            assert check_gain_feasibility(alpha, beta, d) == (alpha > lb)


class TestDelayProfile:
    def test_constant(self):
        p = DelayProfile.constant(1.0)
        assert p.tau(3.0) == 1.0 and p.tau_dot(3.0) == 0.0
        assert validate_delay_profile(p, 10.0).passed

    def test_sinusoidal_figure_bounds(self):
        p = DelayProfile.sinusoidal(2.0, 0.5, 1.0, M=3.0, d=0.5)
        rep = validate_delay_profile(p, 20.0)
        assert rep.passed
        assert rep.tau_dot_max == pytest.approx(0.5, abs=1e-6)
        assert p.tau0 == 1.5

    def test_sinusoidal_derivative_violation(self):
        p = DelayProfile.sinusoidal(1.0, 0.9, 2.0, M=2.0, d=0.5)
        rep = validate_delay_profile(p, 20.0)
        assert not rep.passed
        assert rep.tau_dot_max == pytest.approx(1.8, rel=1e-6)
        assert any("tau'(t) <= d" in v for v in rep.violations)

    def test_sinusoidal_must_stay_positive(self):
        with pytest.raises(ConfigurationError):
            DelayProfile.sinusoidal(1.0, 1.0, 1.0)

    def test_tau_dot_matches_difference_quotient(self):
        p = DelayProfile.sinusoidal(2.0, 0.5, 1.3)
        t = np.linspace(0, 5, 11)
        h = 1e-6
        fd = (p.tau(t + h) - p.tau(t - h)) / (2 * h)
        assert np.allclose(p.tau_dot(t), fd, atol=1e-8)

    def test_tabulated_nonmonotone_time(self):
        with pytest.raises(ConfigurationError):
            DelayProfile.tabulated([0, 2, 1], [1, 1, 1], M=1, d=0)

    def test_tabulated_interpolation(self):
        t = np.linspace(0, 10, 201)
        p = DelayProfile.tabulated(t, 2 + 0.5 * np.sin(t), M=3, d=0.5)
        s = np.linspace(0.3, 9.7, 37)
        assert np.allclose(p.tau(s), 2 + 0.5 * np.sin(s), atol=1e-6)
        assert np.allclose(p.tau_dot(s), 0.5 * np.cos(s), atol=1e-4)
        lin = DelayProfile.tabulated([0, 1, 2], [1, 2, 2], M=2, d=1 - 1e-9, interpolation="linear")
        assert lin.tau(0.5) == 1.5 and lin.tau_dot(0.5) == 1.0

    def test_validation_reports_upper_bound(self):
        p = DelayProfile.sinusoidal(2.0, 0.5, 1.0, M=2.2, d=0.5)
        rep = validate_delay_profile(p, 20.0)
        assert not rep.passed and "tau(t) <= M" in rep.violations[0]

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.5, 3), st.floats(0, 0.4), st.floats(0.1, 2), st.floats(0, 1), st.floats(0, 0.5))
    def test_validation_monotone_in_bounds(self, mean, amp, freq, dM, dd):
        amp = min(amp, 0.9 * mean)
        p = DelayProfile.sinusoidal(mean, amp, freq, M=mean + 0.8 * amp, d=min(0.98, 0.8 * amp * freq))
        q = DelayProfile.sinusoidal(mean, amp, freq, M=p.M + dM, d=min(0.99, p.d + dd))
        if validate_delay_profile(p, 10.0, 2001).passed:
            assert validate_delay_profile(q, 10.0, 2001).passed


class TestCriticalLengths:
    def test_two_pi_is_critical(self):
        assert is_critical_length(2 * math.pi, 5, 1e-9)

    @pytest.mark.parametrize("L", [5.0, 1.0])
    def test_certified_examples(self, L):
        assert not is_critical_length(L, 100, 1e-6)

    def test_smallest_element(self):
        assert critical_lengths(10)[0] == pytest.approx(2 * math.pi, rel=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, SQRT3_PI - 1e-6), st.integers(1, 40))
    def test_certified_range_never_critical(self, L, k_max):
        assert not is_critical_length(L, k_max, 1e-6)


class TestSystemState:
    def test_arrays_are_read_only(self):
        s = SystemState(0.0, np.zeros(5), np.zeros(5), np.zeros(3))
        with pytest.raises(ValueError):
            s.eta[0] = 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            SystemState(0.0, np.zeros(5), np.zeros(4), np.zeros(3))
