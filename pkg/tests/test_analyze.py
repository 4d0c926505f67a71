import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdvdelay.analyze import (AnalysisError, DecayRateRegressor, dissipation_residual, energy,
                              fit_decay_rate, instantaneous_phi, kato_constant,
                              kato_smoothing_report, lyapunov_decay_check, lyapunov_V, safe_rate,
                              verify_bound)
from kdvdelay.certify import optimal_certificate, rate_f
from kdvdelay.model import DelayProfile, GainConfig, SystemState
from kdvdelay.simulate import InitialCondition, SchemeConfig, SimulationConfig, run_simulation

FIG_PROFILE = DelayProfile.sinusoidal(2.0, 0.5, 1.0, M=3.0, d=0.5)
CERT = optimal_certificate(1.0, 0.5, 0.5, 5.0, 3.0)


def _record(t, E):
    return SimpleNamespace(t=np.asarray(t, float), E=np.asarray(E, float))


def _run(nx=16, horizon=2.0, gains=GainConfig(1.0, 0.5), **kw):
    snap = kw.pop("snapshot_every", None)
    ic = kw.pop("ic", InitialCondition("sine"))
    cfg = SimulationConfig(5.0, nx, nx, gains, FIG_PROFILE, SchemeConfig(0.25 * 5 / nx, horizon, **kw),
                           ic, certificate=CERT, snapshot_every=snap)
    return run_simulation(cfg)


class TestEnergy:
    def test_sine_energy(self):
        n = 400
        x = np.linspace(0, 5.0, n + 1)
        s = SystemState(0.0, np.sin(np.pi * x / 5), np.zeros_like(x), np.zeros(5))
        assert energy(s, FIG_PROFILE, 0.0, 5.0) == pytest.approx(5.0 / 4, rel=1e-12)

    def test_delay_term(self):
        x = np.linspace(0, 5.0, 11)
        s = SystemState(0.0, np.zeros_like(x), np.zeros_like(x), np.full(9, 2.0))
        # |beta|/2 * tau(0) * 4 with tau(0) = 2
        assert energy(s, FIG_PROFILE, -0.5, 5.0) == pytest.approx(2.0, rel=1e-14)

    def test_v1_sine(self):
        x = np.linspace(0, 5.0, 2001)
        u = np.sin(np.pi * x / 5)
        s = SystemState(0.0, u, u, np.zeros(3))
        _, V1, V2 = lyapunov_V(s, FIG_PROFILE, 0.5, 5.0, 0.01, 0.01)
        assert V1 == pytest.approx(25.0 / 8, rel=1e-6) and V2 == 0.0

    def test_sandwich_random_states(self):
        rng = np.random.default_rng(3)
        m = max(5.0 * CERT.mu1, CERT.mu2)
        for _ in range(1000):
            nx, nz = rng.integers(8, 64, 2)
            eta = rng.standard_normal(nx + 1) * rng.uniform(0.01, 10)
            om = rng.standard_normal(nx + 1) * rng.uniform(0.01, 10)
            eta[[0, -1]] = om[[0, -1]] = 0.0
            s = SystemState(rng.uniform(0, 50), eta, om, rng.standard_normal(nz + 1))
            E = energy(s, FIG_PROFILE, 0.5, 5.0)
            V = lyapunov_V(s, FIG_PROFILE, 0.5, 5.0, CERT.mu1, CERT.mu2)[0]
            assert (1 - m) * E <= V * (1 + 1e-12) and V <= (1 + m) * E * (1 + 1e-12)


class TestDecayFit:
    def test_exact_exponential(self):
        t = np.arange(0, 50.0001, 0.1)
        f = fit_decay_rate(_record(t, 3 * np.exp(-0.2 * t)))
        assert f.lambda_fit == pytest.approx(0.2, abs=1e-12)
        assert f.t_a == pytest.approx(25.0) and f.t_b == pytest.approx(50.0) and f.residual < 1e-12

    def test_constant_is_zero(self):
        assert fit_decay_rate((np.arange(10.0), np.full(10, 4.0))).lambda_fit == pytest.approx(0, abs=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-6, 1e6), st.floats(0.0, 1.0))
    def test_rescaling_invariance(self, c, lam):
        t = np.linspace(0, 20, 101)
        E = np.exp(-lam * t) * (1 + 0.1 * np.sin(t))
        assert fit_decay_rate((t, c * E)).lambda_fit == pytest.approx(fit_decay_rate((t, E)).lambda_fit,
                                                                    abs=1e-10)

    def test_nonpositive_energy(self):
        with pytest.raises(AnalysisError):
            fit_decay_rate((np.arange(5.0), np.zeros(5)))

    def test_window_validation(self):
        with pytest.raises(AnalysisError):
            fit_decay_rate((np.arange(5.0), np.ones(5)), window=0.0)

    def test_estimator_predict(self):
        t = np.linspace(0, 4, 9)[:, None]
        reg = DecayRateRegressor(window=1.0).fit(t, 2 * np.exp(-t[:, 0]))
        assert np.allclose(reg.predict(t), 2 * np.exp(-t[:, 0]), rtol=1e-12)
        assert reg.get_params() == {"window": 1.0}


class TestVerifyBound:
    def test_monotone_record_passes_trivial_certificate(self):
        t = np.linspace(0, 10, 50)
        assert verify_bound(_record(t, 1 / (1 + t)), (0.0, 1.0)).passed

    def test_constant_energy_fails(self):
        t = np.linspace(0, 100, 201)
        rep = verify_bound(_record(t, np.ones_like(t)), (0.01, 1.2))
        assert not rep.passed and rep.max_ratio == pytest.approx(math.exp(1.0) / 1.2, rel=1e-12)

    def test_vacuous(self):
        rep = verify_bound(_record([0, 1], [0, 0]), (0.1, 1.0))
        assert rep.passed and rep.vacuous

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 0.2), st.floats(1, 3), st.floats(0, 0.5), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_slack_and_zeta(self, lam, zeta, slack, dz, ds):
        t = np.linspace(0, 30, 61)
        rec = _record(t, np.exp(-0.05 * t) * (1.3 + np.cos(t)))
        if verify_bound(rec, (lam, zeta), slack).passed:
            assert verify_bound(rec, (lam, zeta + dz), slack + ds).passed

    def test_safe_rate(self):
        assert safe_rate(CERT) == min(CERT.lam, rate_f(CERT.mu1, 5.0, "theorem"))
        assert verify_bound(_record([0, 1], [1, 1]), CERT).lam == safe_rate(CERT)


class TestResidual:
    def test_phi_at_tau_dot_bound(self):
        q = instantaneous_phi(1.0, 0.5, 0.5)
        assert (q.a11, q.a12, q.a22) == (-1.5, 0.5, -0.25)

    def test_zero_run(self):
        rep = dissipation_residual(_run(ic=InitialCondition("zero")), GainConfig(1, 0.5), FIG_PROFILE)
        assert rep.max_abs == 0.0

    def test_quadratic_term_nonpositive(self):
        rep = dissipation_residual(_run(), GainConfig(1, 0.5), FIG_PROFILE)
        assert rep.quad_term.max() <= 1e-12

    def test_refinement(self):
        r = [dissipation_residual(_run(nx, 3.0), GainConfig(1, 0.5), FIG_PROFILE, t_min=1.0).max_abs
             for nx in (16, 32)]
        assert r[0] / r[1] > 1.8

    def test_needs_every_step(self):
        rec = _run()
        rec.t = rec.t[::2]
        with pytest.raises(AnalysisError, match="missing snapshots"):
            dissipation_residual(rec, GainConfig(1, 0.5), FIG_PROFILE)


class TestLyapunovDecay:
    def test_synthetic(self):
        t = np.linspace(0, 10, 101)
        rec = SimpleNamespace(t=t, V=np.exp(-0.3 * t))
        assert lyapunov_decay_check(rec, 0.3).passed
        assert not lyapunov_decay_check(rec, 0.4).passed

    def test_missing_series(self):
        with pytest.raises(AnalysisError):
            lyapunov_decay_check(SimpleNamespace(t=np.arange(3.0), V=np.full(3, np.nan)), 0.1)


class TestKato:
    def test_constant(self):
        assert kato_constant(5.0, 50.0, 1.0) == 55.0
        assert kato_constant(5.0, 0.1, 2.0) == 22.5

    def test_short_run_ratio(self):
        rep = kato_smoothing_report(_run(32, 5.0, snapshot_every=0.05), 5.0)
        assert 0 < rep.ratio <= 1 and not rep.vacuous

    def test_vacuous_and_conservative_note(self):
        rep = kato_smoothing_report(_run(ic=InitialCondition("zero"), snapshot_every=1e-3), 2.0)
        assert rep.vacuous
        rep = kato_smoothing_report(_run(gains=GainConfig(0, 0), snapshot_every=1e-3), 2.0)
        assert "bookkeeping" in rep.note

    def test_uncovered_window(self):
        with pytest.raises(AnalysisError):
            kato_smoothing_report(_run(snapshot_every=0.5), 10.0)
