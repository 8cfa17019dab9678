from __future__ import annotations

import math
from dataclasses import replace

import mpmath as mp
import numpy as np
import pytest
from scipy.integrate import dblquad, solve_ivp

from blowup_lab import boundary_layer as bl
from blowup_lab.errors import BlowupDetected, ConfigError, DomainError

INIT = bl.InitialData(0.01, 50.0)
# J'(0) = iint y1 y2 phi(y1) eta(y2) / |y|^4 dy, by scipy dblquad with the
# support split at the kinks of phi and eta (absolute error ~1e-9)
J_PRIME_0 = 208.084219431588


def advance(grid, gq, t_end, dt=1e-3, init=INIT):
    while gq.t < t_end - 1e-15:
        grid, gq = bl.step(grid, gq, init, min(dt, t_end - gq.t))
    return grid, gq


@pytest.fixture(scope="module")
def short_run():
    return bl.run(INIT, 64, 64, bl.StepControl(), Q_max=1e6, t_max=0.3)


class TestInitialData:
    @pytest.mark.parametrize("delta,L", [(0.0, 50.0), (1.0, 10.0), (0.3, 5.0), (0.01, 4.0),
                                         (0.02, 49.5)])
    def test_rejects_invalid(self, delta, L):
        with pytest.raises(ConfigError):
            bl.InitialData(delta, L)

    def test_phi_shape(self):
        d = INIT.delta
        assert INIT.phi(0.5 * d) == 0.0
        assert INIT.phi(d) == pytest.approx(1.0 / d)
        assert INIT.phi(25 * d) == 1.0 / d
        assert INIT.phi(51 * d) == 0.0
        x = np.linspace(0.5 * d, d, 200)
        assert np.all(np.diff(INIT.phi(x)) >= 0)

    def test_eta_shape(self):
        assert INIT.eta(0.5) == 1.0 and INIT.eta(1.0) == 1.0
        assert INIT.eta(2.0) == 0.0
        assert np.all(np.diff(INIT.eta(np.linspace(1, 2, 50))) <= 0)

    def test_phi_prime_matches_difference_quotient(self):
        d = INIT.delta
        for x in (0.6 * d, 0.9 * d, 50.3 * d, 50.8 * d):
            h = 1e-9
            fd = (INIT.phi(x + h) - INIT.phi(x - h)) / (2 * h)
            assert INIT.phi_prime(x) == pytest.approx(fd, rel=1e-5)


class TestRampPrimitive:
    @pytest.mark.parametrize("a,b", [(0.1, 0.9), (0.01, 1.0), (0.5, 0.51), (1e-3, 2e-3)])
    def test_matches_quadrature(self, a, b):
        mp.mp.dps = 30
        ref = mp.quad(lambda w: 1 / (w**3 * (6 * w**2 - 15 * w + 10)), [a, b])
        got = float(bl._ramp_primitive(b) - bl._ramp_primitive(a))
        assert got == pytest.approx(float(ref), rel=1e-12)

    def test_inverse(self):
        w = np.geomspace(1e-150, 1.0, 400)
        back = bl._invert_ramp_primitive(bl._ramp_primitive(w))
        assert np.allclose(back, w, rtol=1e-13, atol=0)


class TestFlow:
    @pytest.mark.parametrize("x0", [0.0051, 0.006, 0.0099, 0.01, 0.3, 0.5, 0.505, 0.5099])
    @pytest.mark.parametrize("s", [1e-9, 1e-6, 1e-4, 5e-3, 1.0])
    def test_matches_ode(self, x0, s):
        sol = solve_ivp(lambda _, u: INIT.phi(u), (0.0, s), [x0], method="DOP853",
                        rtol=1e-12, atol=1e-15)
        got = float(INIT.flow(x0, s))
        assert got == pytest.approx(sol.y[0, -1], rel=1e-9, abs=1e-13)

    def test_plateau_is_affine(self):
        x0 = np.array([0.01, 0.1, 0.2])
        s = 1e-3
        assert np.allclose(INIT.flow(x0, s), x0 + s / INIT.delta, rtol=1e-15)

    def test_fixed_points_and_order(self):
        x0 = bl.graded_x1(INIT, 200)
        for s in (0.0, 1e-12, 1e-5, 1e-2, 10.0, 1e8):
            U = INIT.flow(x0, s)
            assert U[0] == x0[0] and U[-1] == x0[-1]
            assert np.all(np.diff(U) >= 0)
            assert np.all(U >= x0)

    def test_jacobian_ode_cross_check(self):
        # dU/dx1_0 from the variational equation equals phi(U)/phi(x1_0)
        def rhs(_, y):
            return [INIT.phi(y[0]), INIT.phi_prime(y[0]) * y[1]]

        for x0, s in [(0.007, 2e-5), (0.2, 3e-3), (0.506, 1e-5)]:
            sol = solve_ivp(rhs, (0.0, s), [x0, 1.0], method="DOP853", rtol=1e-11, atol=1e-14)
            U, jac = sol.y[:, -1]
            assert float(INIT.flow(x0, s)) == pytest.approx(U, rel=1e-9)
            assert jac == pytest.approx(float(INIT.phi(U) / INIT.phi(x0)), rel=1e-7)


class TestGrid:
    def test_initial_state(self):
        g = bl.build_grid(INIT, 32, 32)
        assert np.all(g.U == g.x1[None, :])
        assert np.all(g.omega == 0)
        assert g.x1[0] == pytest.approx(0.005) and g.x1[-1] == pytest.approx(0.51)
        assert g.x2[0] == 0.0 and g.x2[-1] == 2.0
        assert g.x2[1] <= 1e-4

    def test_forcing_plateau_value(self):
        d = INIT.delta
        assert INIT.phi(2 * d) * INIT.eta(0.5) == pytest.approx(1.0 / d)
        g = bl.build_grid(INIT, 32, 32)
        assert np.allclose(g.rho0, g.x1[None, :] * g.forcing)

    def test_uniform_option(self):
        g = bl.build_grid(INIT, 32, 32, rise_fraction=0.0)
        assert np.allclose(np.diff(g.x1), np.diff(g.x1)[0])

    def test_graded_grid(self):
        x1 = bl.graded_x1(INIT, 64)
        assert np.all(np.diff(x1) > 0)
        assert x1[1] - x1[0] == pytest.approx(0.5 * INIT.delta * bl.X1_RISE_MIN)
        assert np.sum(x1 < INIT.delta) == 16

    def test_rejects_bad_sizes(self):
        with pytest.raises(ConfigError):
            bl.build_grid(INIT, 8, 32)
        with pytest.raises(ConfigError):
            bl.build_grid(INIT, 32, 32, rise_fraction=0.7)

    def test_geometric_x2(self):
        x2 = bl.geometric_x2(50, 2.0, 1e-8)
        ratios = np.diff(x2)[1:] / np.diff(x2)[:-1]
        assert np.allclose(ratios, ratios[0], rtol=1e-9)
        assert x2[1] == pytest.approx(1e-8, rel=1e-6)


class TestComputeJ:
    def test_zero_vorticity(self):
        assert bl.compute_J(bl.build_grid(INIT, 16, 16), 1.0) == 0.0

    def test_hand_quadrature_2x2(self):
        g = bl.ParticleGrid(x1=np.array([1.0, 2.0]), x2=np.array([0.5, 1.5]),
                            U=np.array([[1.0, 2.0], [1.0, 2.0]]),
                            omega=np.array([[1.0, 2.0], [3.0, 4.0]]),
                            rho0=np.zeros((2, 2)), forcing=np.zeros((2, 2)))
        D = 2.0

        def f(y1, y2, w):
            return y1 * y2 * w / (y1 * y1 + y2 * y2) ** 2

        row0 = 0.5 * (f(0.5, 0.5, 1.0) + f(1.0, 0.5, 2.0)) * 0.5
        row1 = 0.5 * (f(0.5, 1.5, 3.0) + f(1.0, 1.5, 4.0)) * 0.5
        expected = 0.5 * (row0 + row1) * 1.0
        assert bl.compute_J(g, D) == pytest.approx(expected, rel=1e-15)

    def test_axis_row_contributes_nothing(self):
        g = bl.build_grid(INIT, 16, 16)
        w = np.zeros(g.shape)
        w[0] = 1e9
        assert bl.compute_J(g, 1.0, omega=w) == 0.0

    def test_initial_slope_oracle(self):
        # omega = t * phi * eta to first order, so J / t -> J'(0)
        g = bl.build_grid(INIT, 256, 256)
        J1 = bl.compute_J(g, 1.0, omega=g.forcing)
        assert J1 == pytest.approx(J_PRIME_0, rel=1e-2)

    def test_initial_slope_converges(self):
        errs = []
        for nx in (64, 256):
            g = bl.build_grid(INIT, nx, 512)
            errs.append(abs(bl.compute_J(g, 1.0, omega=g.forcing) - J_PRIME_0))
        assert errs[1] < errs[0] / 4

    def test_small_time_run(self):
        g, q = advance(bl.build_grid(INIT, 128, 128), bl.initial_quantities(INIT), 2e-3, 1e-4)
        assert q.J / q.t == pytest.approx(J_PRIME_0, rel=0.03)

    def test_workers_bit_identical(self, short_run):
        g, q = short_run.grid, short_run.gq
        values = {bl.compute_J(g, q.D, workers=w) for w in (1, 2, 3, 8)}
        assert len(values) == 1

    def test_rejects_small_d(self):
        with pytest.raises(ConfigError):
            bl.compute_J(bl.build_grid(INIT, 16, 16), 0.5)

    def test_label_quadrature_agrees_while_resolved(self):
        g, q = advance(bl.build_grid(INIT, 128, 128), bl.initial_quantities(INIT), 0.1)
        assert bl.compute_J_label(g, q, INIT) == pytest.approx(q.J, rel=1e-3)


class TestStep:
    def test_small_time_expansion(self):
        # J = J1 t + O(t^2) gives D = 1 + J1 t^2 / 2 and Q = t + J1 t^3 / 6
        g0 = bl.build_grid(INIT, 32, 32)
        J1 = bl.compute_J(g0, 1.0, omega=g0.forcing)
        t = 5e-3
        g, q = advance(g0, bl.initial_quantities(INIT), t, 1e-4)
        assert q.D - 1.0 == pytest.approx(0.5 * J1 * t * t, rel=0.02)
        assert q.Q - t == pytest.approx(J1 * t**3 / 6.0, rel=0.02)
        assert q.H == q.Q * q.Q

    def test_axis_row_fixed(self):
        g, q = advance(bl.build_grid(INIT, 32, 32), bl.initial_quantities(INIT), 0.05)
        assert np.array_equal(g.U[0], g.x1)

    def test_plateau_formula(self):
        g, q = advance(bl.build_grid(INIT, 64, 64), bl.initial_quantities(INIT), 0.05)
        mask = bl.plateau_mask(g, INIT)
        assert mask.sum() > 100
        assert bl.plateau_error(g, q, INIT) <= 1e-12

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ConfigError):
            bl.step(bl.build_grid(INIT, 16, 16), bl.initial_quantities(INIT), INIT, 0.0)

    def test_d_cap_signal(self):
        g, q = advance(bl.build_grid(INIT, 32, 32), bl.initial_quantities(INIT), 0.05)
        with pytest.raises(BlowupDetected) as info:
            bl.step(g, q, INIT, 1e-3, D_cap=1.0)
        assert info.value.gq.t == pytest.approx(q.t + 1e-3)


class TestOracleOmega:
    def test_small_y2_limit(self):
        assert bl.oracle_omega(0.1, 0.0, 3.0, INIT) == pytest.approx(3.0 / INIT.delta)

    def test_arctan_one(self):
        d, Q, x1 = INIT.delta, 2.0, 0.2
        x2 = 2 * d * x1 / Q**2  # delta Y2 / (2 x1) = 1
        if x2 <= d * d * INIT.L / Q**2 and 0.5 * x2 * Q**2 / d <= x1:
            assert bl.oracle_omega(x1, x2, Q, INIT) == pytest.approx(Q / d * math.pi / 4)
        assert bl.oracle_omega(x1, x2, Q, INIT, check=False) == pytest.approx(Q / d * math.pi / 4)

    def test_domain_error(self):
        with pytest.raises(DomainError):
            bl.oracle_omega(0.4, 0.0, 1.0, INIT)  # above L delta / 2
        with pytest.raises(DomainError):
            bl.oracle_omega(0.1, 1.0, 100.0, INIT)  # above delta^2 L / H

    def test_simulation_matches(self, short_run):
        assert short_run.vorticity_error <= 1e-3
        assert short_run.plateau_error <= 1e-6


class TestAudits:
    def test_box_not_applicable_at_start(self):
        g = bl.build_grid(INIT, 16, 16)
        rep = bl.audit_box_bound(g, bl.initial_quantities(INIT), INIT)
        assert not rep.applicable and not rep.violated

    def test_box_holds_on_short_run(self):
        g, q = advance(bl.build_grid(INIT, 64, 64), bl.initial_quantities(INIT), 0.05)
        rep = bl.audit_box_bound(g, q, INIT)
        assert rep.applicable
        assert rep.margin >= -1e-6

    def test_box_flags_halved_vorticity(self):
        g, q = advance(bl.build_grid(INIT, 64, 64), bl.initial_quantities(INIT), 0.05)
        rep = bl.audit_box_bound(replace(g, omega=0.5 * g.omega), q, INIT)
        assert rep.violated

    def test_j_chain_guards(self):
        rep = bl.audit_J_chain(bl.initial_quantities(INIT), INIT)
        assert not rep.applicable

    def test_j_chain_l5_bound_is_zero(self):
        init = bl.InitialData(0.1, 5.0)
        assert bl.j_chain_bound(3.0, init) == 0.0
        q = bl.GlobalQuantities(1.0, 0.7, 10.0, 1.0, init.delta)
        rep = bl.audit_J_chain(q, init)
        assert rep.applicable and rep.margin == 0.7

    def test_j_chain_value(self):
        q = bl.GlobalQuantities(1.0, 5.0, 100.0, 1.0, INIT.delta)
        rep = bl.audit_J_chain(q, INIT)
        assert rep.margin == pytest.approx(5.0 - math.pi / 48 * 100 * math.log(10))


class TestRun:
    def test_structural_invariants(self, short_run):
        s = short_run.series
        assert short_run.structural.total == 0
        assert s["D"][0] == 1.0 and s["Q"][0] == 0.0 and s["E"][0] == 0.0
        assert np.all(np.diff(s["D"]) >= 0)
        assert np.all(s["H"] == s["Q"] ** 2)
        assert short_run.box_violations == 0
        assert short_run.status == "t_max"

    def test_stops_at_q_max(self):
        r = bl.run(INIT, 32, 32, Q_max=0.05, t_max=10.0)
        assert r.status == "blowup"
        assert r.gq.Q >= 0.05

    def test_step_control_validation(self):
        with pytest.raises(ConfigError):
            bl.StepControl(dt0=0.0)
        with pytest.raises(ConfigError):
            bl.StepControl(dt0=1.0, dt_max=0.1)

    def test_summary_grid(self, short_run):
        summ = short_run.summary_grid
        assert summ["nx"] == 64 and summ["max_omega"] > 0
        assert summ["max_cell_span"] > 0 and summ["J_label"] > 0

    def test_deterministic(self):
        a = bl.run(INIT, 32, 32, t_max=0.05)
        b = bl.run(INIT, 32, 32, t_max=0.05, workers=3)
        assert np.array_equal(a.series["J"], b.series["J"])
        assert np.array_equal(a.grid.omega, b.grid.omega)


@pytest.mark.slow
def test_initial_slope_reference_value():
    d, L = INIT.delta, INIT.L
    x1_breaks = [0.5 * d, d, L * d, (L + 1) * d]
    x2_breaks = [0.0, 1.0, 2.0]

    def f(y2, y1):
        return y1 * y2 * float(INIT.phi(y1)) * float(INIT.eta(y2)) / (y1 * y1 + y2 * y2) ** 2

    total = 0.0
    for a, b in zip(x1_breaks, x1_breaks[1:]):
        for c, e in zip(x2_breaks, x2_breaks[1:]):
            total += dblquad(f, a, b, c, e, epsabs=1e-11, epsrel=1e-11)[0]
    assert total == pytest.approx(J_PRIME_0, rel=1e-8)
