"""Reduced energy, schedules, bump construction, perturbed potentials."""

import math

import numpy as np
import pytest

from blowup_lab.geometry import CapacityError, ManifoldModel
from blowup_lab.reduced import (
    BumpFunction,
    DegenerateError,
    ReducedEnergyParams,
    ScheduleParams,
    audit_bumps,
    build_H,
    delta_eps,
    expansion_predict,
    F_n_critical,
    F_n_eval,
    h_eps_field,
    mu_eps,
    reduced_constants,
    schedule_configuration,
)

RNG = np.random.default_rng(5)


class TestConstants:
    def test_closed_forms(self):
        # c1 = 2(n-1)/((n-2)(n-4)), d_6 = 1/64, d_n = 1/(24(n-4)(n-6))
        assert reduced_constants(6) == pytest.approx((1.25, 1.0 / 64.0))
        assert reduced_constants(7) == pytest.approx((0.8, 1.0 / 72.0))
        assert reduced_constants(8) == pytest.approx((7.0 / 12.0, 1.0 / 192.0))

    def test_low_dimension_rejected(self):
        with pytest.raises(ValueError):
            reduced_constants(5)


class TestReducedEnergy:
    def test_F_eval_n6(self):
        p = ReducedEnergyParams(n=6, weyl_sq=14.4, H=None)
        # 1.25 * 1 - (1/64) * 14.4 = 1.025
        assert F_n_eval(p, 1.0, H_value=1.0) == pytest.approx(1.025)

    def test_critical_point_closed_form(self):
        Hb = build_H(1, 6, seed=0)
        p = ReducedEnergyParams(n=6, weyl_sq=14.4, H=Hb)
        t_star, p_star, value = F_n_critical(p)
        h = float(Hb.peak_values()[0])
        assert t_star == pytest.approx(
            math.sqrt(1.25 * h / (2.0 * 14.4 / 64.0)), rel=1e-14)
        assert value == pytest.approx(
            1.25**2 * h**2 / (4.0 * 14.4 / 64.0), rel=1e-14)
        np.testing.assert_array_equal(p_star, Hb.maxima[0])

    def test_critical_point_vs_grid_maximization(self):
        # brute-force maximization over t agrees with the closed form
        rng = np.random.default_rng(123)
        for _ in range(50):
            n = int(rng.integers(6, 11))
            weyl = float(rng.uniform(0.5, 30.0))
            Hb = build_H(int(rng.integers(1, 4)), 6, seed=int(rng.integers(1e6)))
            params = ReducedEnergyParams(n=n, weyl_sq=weyl, H=Hb)
            i = int(rng.integers(0, Hb.k))
            t_star, _, value = F_n_critical(params, i=i)
            h = float(Hb.peak_values()[i])
            ts = np.linspace(0.5 * t_star, 1.5 * t_star, 2001)
            vals = F_n_eval(params, ts, H_value=h)
            t_ref = ts[int(np.argmax(vals))]
            # parabolic polish: vertex of a local quadratic fit; unlike
            # golden section this is not limited to sqrt(eps) accuracy
            for width in (1e-3, 1e-6):
                tw = t_ref + width * t_star * np.linspace(-1.0, 1.0, 9)
                coef = np.polyfit(tw - t_ref, F_n_eval(params, tw,
                                                       H_value=h), 2)
                t_ref = t_ref - coef[1] / (2.0 * coef[0])
            assert abs(t_star - t_ref) < 1e-8 * max(1.0, t_star)
            assert abs(value - float(F_n_eval(params, t_ref, H_value=h))) \
                < 1e-8 * max(1.0, abs(value))

    def test_degenerate_cases(self):
        Hb = build_H(1, 6, seed=0)
        with pytest.raises(DegenerateError):
            F_n_critical(ReducedEnergyParams(n=6, weyl_sq=0.0, H=Hb))
        flat = BumpFunction(dim=6, maxima=np.zeros((1, 6)),
                            amplitudes=np.array([1.0]), sigma=0.1,
                            r_tilde=0.05)
        # amplitude 1 gives peak value a - 1 = 0: no interior maximum
        with pytest.raises(DegenerateError):
            F_n_critical(ReducedEnergyParams(n=6, weyl_sq=14.4, H=flat))

    def test_expansion_predict(self):
        p = ReducedEnergyParams(n=6, weyl_sq=14.4, H=None)
        from blowup_lab.functional import single_bubble_energy_constant
        e1 = single_bubble_energy_constant(6)
        d = 1e-2
        want = e1 * (1.0 + 1.25 * 0.5 * d**2
                     - 14.4 * d**4 * math.log(1.0 / d) / 64.0)
        assert expansion_predict(p, d, 0.5) == pytest.approx(want, rel=1e-14)


class TestSchedules:
    def test_delta_eps_n6_back_substitution(self):
        rng = np.random.default_rng(9)
        for eps in rng.uniform(1e-12, 0.15, size=100):
            d = delta_eps(6, float(eps))
            assert abs(d * d * math.log(1.0 / d) - eps) <= 1e-14 * eps

    def test_delta_eps_n6_value(self):
        assert delta_eps(6, 1e-3) == pytest.approx(0.015490308804935113,
                                                   rel=1e-12)

    def test_delta_eps_high_dim_is_sqrt(self):
        assert delta_eps(7, 1e-8) == pytest.approx(1e-4, rel=1e-14)
        assert delta_eps(9, 4e-6) == pytest.approx(2e-3, rel=1e-14)

    def test_delta_eps_domain_n6(self):
        # d^2 ln(1/d) cannot exceed 1/(2e) on the valid branch
        with pytest.raises(ValueError):
            delta_eps(6, 1.0 / (2.0 * math.e) + 1e-3)

    def test_mu_n6_log_power(self):
        # mu = |ln eps|^(-1/8); eps = e^-16 gives 16^(-1/8) = 2^(-1/2)
        sch = ScheduleParams(n=6, eps=math.exp(-16.0), r=0)
        mu, _ = mu_eps(sch)
        assert mu == pytest.approx(2.0**-0.5, rel=1e-14)

    def test_mu_high_dim_power(self):
        # theta = min((n-6)/(2(n-2)), 1/max(r,1))/2; n=7, r=1: theta = 1/20
        sch = ScheduleParams(n=7, eps=1e-10, r=1)
        assert sch.theta == pytest.approx(0.05)
        mu, _ = mu_eps(sch)
        assert mu == pytest.approx(10.0**-0.5, rel=1e-14)

    def test_margins_decrease_along_eps(self):
        prev = None
        for j in range(4, 13):
            sch = ScheduleParams(n=7, eps=10.0**-j, r=1)
            mu, margins = mu_eps(sch)
            assert all(v < 1.0 for v in margins.values())
            if prev is not None:
                for key in margins:
                    assert margins[key] <= prev[key] + 1e-15
            prev = margins


class TestBumps:
    def test_single_bump_at_origin(self):
        Hb = build_H(1, 6, seed=1)
        assert Hb.k == 1
        np.testing.assert_allclose(Hb.maxima[0], 0.0, atol=1e-14)
        # background level is -1, peak value a_i - 1
        far = 10.0 * np.ones((1, 6))
        assert Hb(far)[0] == pytest.approx(-1.0)
        assert Hb.peak_values()[0] == pytest.approx(Hb.amplitudes[0] - 1.0)

    def test_audit_invariants(self):
        for k in (1, 2, 3, 5):
            Hb = build_H(k, 6, seed=k)
            rep = audit_bumps(Hb)
            assert rep["passed"], rep
            assert rep["n_maxima_found"] == k

    def test_maxima_separation(self):
        Hb = build_H(5, 6, seed=2)
        for i in range(Hb.k):
            for j in range(i + 1, Hb.k):
                gap = np.linalg.norm(Hb.maxima[i] - Hb.maxima[j])
                assert gap >= 3.0 * Hb.r_tilde - 1e-12

    def test_compact_support_radius(self):
        Hb = build_H(3, 6, seed=4)
        for i in range(Hb.k):
            ring = Hb.maxima[i].copy()
            ring[0] += 1.5 * Hb.r_tilde
            assert Hb(ring[None, :])[0] == pytest.approx(-1.0)


class TestPerturbedPotential:
    def _model(self):
        return ManifoldModel.product_spheres(3, 3)

    def _xi0(self, m):
        x = np.zeros(m.ambient_dim)
        x[0] = 1.0
        x[m.p + 1] = 1.0
        return x

    def test_value_at_peak(self):
        m = self._model()
        xi0 = self._xi0(m)
        eps, mu = 1e-4, 0.2
        Hb = build_H(1, 6, seed=3)
        h = h_eps_field(m, xi0, eps, mu, Hb)
        c6 = 0.2 * 12.0  # c_n R_g on S^3 x S^3
        got = h(xi0[None, :])[0]
        want = c6 + eps * float(Hb.peak_values()[0])
        assert got == pytest.approx(want, rel=1e-12)

    def test_far_field_depression(self):
        m = self._model()
        xi0 = self._xi0(m)
        eps, mu = 1e-4, 0.01
        Hb = build_H(1, 6, seed=3)
        h = h_eps_field(m, xi0, eps, mu, Hb)
        v = m.random_tangent(RNG, xi0)
        far = m.exp(xi0, 2.0 * v / np.linalg.norm(v))
        assert h(far[None, :])[0] == pytest.approx(0.2 * 12.0 - eps,
                                                   rel=1e-12)

    def test_sup_norm_meta(self):
        m = self._model()
        Hb = build_H(2, 6, seed=5)
        h = h_eps_field(m, self._xi0(m), 1e-3, 0.1, Hb)
        assert h.meta["sup_norm_perturbation"] == pytest.approx(
            1e-3 * float(np.max(Hb.amplitudes)))


class TestScheduleConf04:
    def test_configuration_geometry(self):
        m = ManifoldModel.product_spheres(3, 3)
        xi0 = np.zeros(8)
        xi0[0] = 1.0
        xi0[4] = 1.0
        Hb = build_H(2, 6, seed=6)
        eps = 1e-5
        cfg, sch = schedule_configuration(m, xi0, [1.0, 1.0],
                                          list(Hb.maxima), eps)
        assert cfg.k == 2
        for b, p in zip(cfg.bubbles, Hb.maxima):
            assert b.delta == pytest.approx(sch.delta_eps)
            want = sch.mu_eps * float(np.linalg.norm(p))
            assert m.distance(b.center, xi0) == pytest.approx(want, rel=1e-10)
