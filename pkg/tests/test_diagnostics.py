from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chemorad.diagnostics import (
    CSV_COLUMNS,
    Diagnostics,
    DiagnosticsRecord,
    MonitorConfig,
    blowup_evidence,
    mass_accumulation,
    monitor_barriers,
    monitor_logv_gradient,
    monitor_v0_bound,
    monitor_vgrad_bounds,
    monitor_vmax,
    phi,
    psi,
    record_row,
    worst_residuals,
)
from chemorad.elliptic import RadialGrid, solve_v, v_at_origin
from chemorad.errors import ConfigError
from chemorad.model import (
    DerivedConstants,
    ExponentChoice,
    InitialProfile,
    ProblemParams,
    choose_exponents,
    derive_constants,
    initial_mass,
)


def sinh_v(s):
    return np.sinh(s) / (s * math.sinh(1.0))


def sinh_dv(s):
    return (s * np.cosh(s) - np.sinh(s)) / (s**2 * math.sinh(1.0))


class TestFunctionals:
    def test_U_constant(self):
        g = RadialGrid(64, 1.0, 3)
        U = mass_accumulation(np.full(64, 2.0), g)
        np.testing.assert_allclose(U, 2.0 * g.faces**3 / 3, rtol=1e-13, atol=1e-300)
        assert U[0] == 0.0

    def test_U_matches_initial_mass(self, bump):
        params = ProblemParams()
        g = RadialGrid.for_problem(128, params)
        U = mass_accumulation(g.cell_averages(bump), g)
        assert U[-1] == pytest.approx(initial_mass(bump, params), rel=1e-12)

    @given(u=arrays(np.float64, 32, elements=st.floats(0.0, 100.0)))
    def test_U_prefix_structure(self, u):
        g = RadialGrid(32, 1.0, 3)
        U = mass_accumulation(u, g)
        assert np.all(np.diff(U) >= 0)
        np.testing.assert_allclose(np.diff(U), g.vol * u, rtol=0, atol=8 * np.finfo(float).eps * max(U[-1], 1e-300))

    @pytest.mark.parametrize("N", [16, 64, 257])
    def test_phi_psi_exact_for_constants(self, N):
        g = RadialGrid(N, 1.0, 3)
        U = mass_accumulation(np.full(N, 3.0), g)
        assert phi(U, 0.4, g) == pytest.approx(3.0 / (3 * 3.6), rel=1e-12)
        assert psi(U, g) == pytest.approx(3.0 / 6, rel=1e-12)
        assert 1.0 / (3 * 3.6) == pytest.approx(0.0925926, abs=1e-7)

    def test_zero_field(self):
        g = RadialGrid(32, 1.0, 3)
        U = mass_accumulation(np.zeros(32), g)
        assert phi(U, 0.4, g) == 0.0
        assert psi(U, g) == 0.0

    def test_convergence_against_fine_quadrature(self, bump):
        from scipy.integrate import quad

        alpha = 0.3
        Uexact = lambda s: bump.mass_within(np.array([s]), 3)[0]
        ref_phi = quad(lambda s: s**-alpha * Uexact(s), 0, 1, limit=200)[0]
        ref_psi = quad(lambda s: s**-2 * Uexact(s), 0, 1, limit=200)[0]
        errs = []
        for N in (32, 64, 128):
            g = RadialGrid(N, 1.0, 3)
            U = mass_accumulation(g.cell_averages(bump), g)
            errs.append((abs(phi(U, alpha, g) - ref_phi), abs(psi(U, g) - ref_psi)))
        errs = np.array(errs)
        assert np.all(errs[1:] <= 0.55 * errs[:-1])

    @settings(max_examples=50)
    @given(u=arrays(np.float64, 48, elements=st.floats(0.0, 100.0)), alpha=st.floats(0.0, 0.99), R=st.floats(0.5, 3.0))
    def test_psi_dominates_phi(self, u, alpha, R):
        g = RadialGrid(48, R, 3)
        U = mass_accumulation(u, g)
        assert psi(U, g) >= R ** (alpha - 2) * phi(U, alpha, g) * (1 - 1e-12)

    def test_nonintegrable_weight(self):
        g = RadialGrid(16, 1.0, 3)
        with pytest.raises(ConfigError):
            phi(mass_accumulation(np.ones(16), g), 4.5, g)


class TestMonitors:
    def test_v0_bound_cases(self):
        assert monitor_v0_bound(2.0, 0.0, 2.0) == 0.0
        r = monitor_v0_bound(1.0 / math.sinh(1.0), 1.0 / 6.0, 1.0)
        assert r == pytest.approx(1 / math.sinh(1.0) - 6 / 7)
        assert r == pytest.approx(-0.0062, abs=1e-4)

    def test_v0_bound_discrete(self):
        params = ProblemParams(n=3, M=1.0)
        g = RadialGrid.for_problem(256, params)
        u = np.ones(256)
        v = solve_v(u, params, g)
        r = monitor_v0_bound(v_at_origin(v), psi(mass_accumulation(u, g), g), 1.0)
        assert r == pytest.approx(-0.0062, abs=1e-4)

    def test_logv_zero_field(self):
        g = RadialGrid(32, 1.0, 3)
        u = np.zeros(32)
        v = solve_v(u, ProblemParams(), g)
        res, _ = monitor_logv_gradient(u, v, mass_accumulation(u, g), g)
        assert res == pytest.approx(0.0, abs=1e-12)

    def test_logv_closed_form(self):
        for N in (64, 128):
            g = RadialGrid(N, 1.0, 3)
            u = np.ones(N)
            res, _ = monitor_logv_gradient(u, sinh_v(g.centers), mass_accumulation(u, g), g)
            assert res <= 5 * g.h

    def test_vgrad_zero_field(self):
        params = ProblemParams(M=1.0)
        g = RadialGrid.for_problem(32, params)
        u = np.zeros(32)
        ex = choose_exponents(params, derived=derive_constants(params, InitialProfile.constant(1.0)))
        derived = DerivedConstants(L=1 / 3, sigma_n=4 * math.pi, u0_sup=1.0)
        v = solve_v(u, params, g)
        out = monitor_vgrad_bounds(v, mass_accumulation(u, g), g, ex, derived, params)
        assert out["far"][0] == pytest.approx(-(ex.delta0**-2) * derived.L, abs=1e-12)
        f_near = g.faces[1:][g.faces[1:] <= ex.near_cutoff(params) * (1 + 1e-14)]
        assert out["near"][0] == pytest.approx(-np.min(ex.c_star / f_near), abs=1e-12)
        assert out["U"][0] == pytest.approx(0.0, abs=1e-12)

    def test_vgrad_near_closed_form(self):
        s = np.linspace(1e-3, 0.5, 1000)
        assert np.all(sinh_dv(s) - 2.0 / s <= 0)
        params = ProblemParams(n=3, M=1.0, m=0.5)
        g = RadialGrid.for_problem(128, params)
        u = np.ones(128)
        ex = ExponentChoice(c_star=2.0, delta0=0.5)
        derived = derive_constants(params, InitialProfile.constant(1.0))
        out = monitor_vgrad_bounds(solve_v(u, params, g), mass_accumulation(u, g), g, ex, derived, params)
        assert out["near"][0] <= 0.0
        assert out["near"][1] <= 0.5
        assert out["far"][0] <= 0.0

    def test_vmax(self):
        assert monitor_vmax(np.full(8, 3.0), 3.0) == (0.0, -3.0)
        v = np.full(8, 0.5)
        v[3] = 1.1
        assert monitor_vmax(v, 1.0)[0] > 0

    def test_barriers_at_t0(self, bump):
        params = ProblemParams(n=3, m=0.5, M=1.0)
        g = RadialGrid.for_problem(128, params)
        ex = choose_exponents(params)
        derived = derive_constants(params, bump, ex.gamma, g.faces)
        U = mass_accumulation(g.cell_averages(bump), g)
        assert monitor_barriers(U, g, ex, derived, params, "W")[0] <= 1e-15

        params1 = ProblemParams(n=3, m=1.0, M=1.0)
        d1 = derive_constants(params1, bump)
        ex1 = choose_exponents(params1, derived=d1)
        assert monitor_barriers(U, g, ex1, d1, params1, "Z")[0] <= 0.0

    def test_barrier_outside_regime(self, bump):
        params = ProblemParams(n=3, m=0.5, M=1e3)
        g = RadialGrid.for_problem(32, params)
        ex = choose_exponents(params)
        derived = derive_constants(params, bump, ex.gamma)
        U = mass_accumulation(g.cell_averages(bump), g)
        with pytest.raises(ConfigError):
            monitor_barriers(U, g, ex, derived, params, "W")
        with pytest.raises(ConfigError):
            monitor_barriers(U, g, ex, derived, params, "Z")
        with pytest.raises(ConfigError):
            Diagnostics(params, g, derived, MonitorConfig(ex), barrier="W")


class TestRecords:
    def make(self, params, u0, N=64):
        g = RadialGrid.for_problem(N, params)
        ex = choose_exponents(params, derived=derive_constants(params, u0), strict=False)
        derived = derive_constants(params, u0, ex.gamma, g.faces)
        return Diagnostics(params, g, derived, MonitorConfig(ex), Diagnostics.auto_barrier(params, ex, derived)), g

    def test_tolerance_model(self, bump):
        params = ProblemParams(M=3.0)
        diag, g = self.make(params, bump)
        assert diag.tolerance("logv") == pytest.approx(15 * g.h + 50 * g.h**2)
        assert diag.tolerance("vmax") == pytest.approx(3e-12)
        assert MonitorConfig(diag.exponents, c1=1.0, c2=0.0).tolerance("psi", 0.1, params, diag.derived) == 0.1
        with pytest.raises(ConfigError):
            MonitorConfig(diag.exponents, enabled=frozenset({"nope"}))
        with pytest.raises(ConfigError):
            MonitorConfig(diag.exponents, c2=-1.0)

    def test_auto_barrier(self, bump):
        assert self.make(ProblemParams(m=1.0, M=1.0), bump)[0].barrier == "Z"
        assert self.make(ProblemParams(m=0.5, M=1.0), bump)[0].barrier == "W"
        assert self.make(ProblemParams(m=1.5, M=1.0), bump)[0].barrier is None
        assert self.make(ProblemParams(m=1.0, M=5.0), bump)[0].barrier is None

    def test_record_and_row(self, bump):
        params = ProblemParams(m=0.5, M=1.0)
        diag, g = self.make(params, bump)
        u = g.cell_averages(bump)
        rec = diag.evaluate(0.0, 1e-3, u, solve_v(u, params, g))
        again = diag.evaluate(0.0, 1e-3, u, solve_v(u, params, g))
        assert rec == again
        row = record_row(rec)
        assert len(row) == len(CSV_COLUMNS)
        assert CSV_COLUMNS[:7] == ("t", "dt", "mass", "u_max", "v0", "phi", "psi")
        assert row[2] == pytest.approx(4 * math.pi * initial_mass(bump, params), rel=1e-12)
        assert all(v <= 0 for v in diag.violations([rec]).values())

    def test_disabled_monitor_is_nan(self, bump):
        params = ProblemParams(m=1.5)
        diag, g = self.make(params, bump)
        u = g.cell_averages(bump)
        rec = diag.evaluate(0.0, 0.0, u, solve_v(u, params, g))
        assert math.isnan(record_row(rec)[-1])

    def test_worst(self):
        recs = [DiagnosticsRecord(0, 0, 1, 1, 1, 1, 1, {"a": (-1.0, 0.1)}), DiagnosticsRecord(0, 0, 1, 1, 1, 1, 1, {"a": (0.5, 0.2), "b": (math.nan, 0)})]
        assert worst_residuals(recs) == {"a": 0.5}


class TestEvidence:
    def records(self, phis, psis=None, t=None):
        t = np.arange(len(phis)) if t is None else t
        psis = phis if psis is None else psis
        return [DiagnosticsRecord(float(ti), 0.1, 1.0, 1.0 + ti, 1.0, float(p), float(q)) for ti, p, q in zip(t, phis, psis)]

    def test_insufficient(self):
        params = ProblemParams(m=0.5)
        ev = blowup_evidence(self.records(np.ones(5)), 0.25, DerivedConstants(1, 1, 1), params)
        assert ev["insufficient_data"]

    def test_stationary_slope_zero(self):
        params = ProblemParams(m=0.5, M=0.0)
        ev = blowup_evidence(self.records(np.full(30, 0.01)), 0.25, DerivedConstants(0.1, 1, 1), params)
        assert ev["phi_slope"] == 0.0
        assert not ev["phi_increasing"]

    def test_linear_growth(self):
        params = ProblemParams(m=0.5)
        phis = 0.01 + 0.002 * np.arange(40)
        ev = blowup_evidence(self.records(phis), 0.25, DerivedConstants(1.0, 1, 1), params)
        assert ev["phi_slope"] == pytest.approx(0.002)
        assert ev["phi_increasing"]
        assert ev["C_star"] == pytest.approx(0.5 * 0.01)
        assert ev["psi_above_cstar"]
        assert ev["phi_bound"] == pytest.approx(1.0 / 0.75)
        assert ev["phi_bound_excess"] < 0

    def test_alpha_one_in_three_dimensions(self):
        with pytest.raises(ConfigError):
            blowup_evidence(self.records(np.ones(30)), 1.0, DerivedConstants(1, 1, 1), ProblemParams())


class TestStationaryProperty:
    @settings(max_examples=40, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        M=st.floats(0.1, 20.0),
        n=st.integers(3, 5),
        N=st.sampled_from([64, 128]),
    )
    def test_monitors_within_tolerance(self, seed, M, n, N):
        rng = np.random.default_rng(seed)
        params = ProblemParams(n=n, m=0.5, M=M)
        g = RadialGrid.for_problem(N, params)
        u = rng.uniform(0.0, 10.0, N) * (rng.uniform() < 0.5 or np.exp(-((g.centers - rng.uniform()) ** 2) / 0.02))
        if not u.max() > 0:
            return
        derived = DerivedConstants(L=g.total(u), sigma_n=1.0, u0_sup=float(u.max()))
        ex = choose_exponents(params)
        diag = Diagnostics(params, g, derived, MonitorConfig(ex))
        rec = diag.evaluate(0.0, 0.0, u, solve_v(u, params, g))
        for name, (val, _) in rec.residuals.items():
            assert val <= diag.tolerance(name), name
