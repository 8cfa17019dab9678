from __future__ import annotations

import math

import numpy as np
import pytest

from blowup_lab.errors import ConfigError, NotReached
from blowup_lab.profile_model import (ProfileState, Regime, SamplePlan, audit_grid,
                                      audit_inequalities, audit_pinching, audit_profile_bounds,
                                      audit_trajectory, classify_regime, default_k,
                                      find_transition_time, integrate, k_upper_bound,
                                      regime_sequence_ok)
from blowup_lab.quadrature import ProfileParams, rhs

B_PRIME_0 = 0.25 + math.pi / 8.0


@pytest.fixture(scope="module")
def run_k1():
    return integrate(1.0, 1e4, 1e-9)


class TestClassify:
    @pytest.mark.parametrize("A,B,K,label", [
        (0.0, 0.0, 1.0, Regime.INITIAL),
        (1.5, 4.0, 1.0, Regime.FINAL),
        (1.5, 2.9, 1.0, Regime.OUTSIDE),
        (0.9, 5.0, 1.0, Regime.INITIAL),
        (2.0, 1.0, 1.3, Regime.INITIAL),
    ])
    def test_labels(self, A, B, K, label):
        assert classify_regime(ProfileState(0.0, A, B), K) is label

    def test_regime_sequence(self):
        assert regime_sequence_ok(["InitialI", "InitialI", "FinalF", "FinalF"])
        assert not regime_sequence_ok(["InitialI", "FinalF", "InitialI"])
        assert not regime_sequence_ok(["InitialI", "Outside"])


class TestKRange:
    def test_k1_value(self):
        assert k_upper_bound(1.0) == pytest.approx(48 * (1 - math.exp(-6.0)) / 25, abs=1e-15)
        assert k_upper_bound(1.0) == pytest.approx(1.91524, abs=1e-5)

    def test_k13_value(self):
        direct = 48 * (1 - math.exp(-6 / 1.3)) / (1.3 * (1.3**2 + 4) ** 2)
        assert k_upper_bound(1.3) == pytest.approx(direct, rel=1e-15)
        assert 1.12 < k_upper_bound(1.3) < 1.14

    def test_interval_nonempty_and_below_two(self):
        for K in np.arange(1.0, 1.3 + 1e-9, 0.01):
            assert 1.0 < k_upper_bound(K) < 2.0
            assert 1.0 < default_k(K) < k_upper_bound(K)


class TestSamplePlan:
    def test_geometric_with_endpoints(self):
        ts = SamplePlan(4, 1e-2).times(10.0)
        assert ts[0] == 0.0 and ts[-1] == 10.0
        assert np.all(np.diff(ts) > 0)
        assert ts[1] == pytest.approx(1e-2)
        assert ts.size == 1 + 12 + 1

    def test_rejects_bad_plan(self):
        with pytest.raises(ConfigError):
            SamplePlan(0).times(1.0)


class TestIntegrate:
    def test_rejects_bad_parameters(self):
        with pytest.raises(ConfigError):
            integrate(0.0, 1.0)
        with pytest.raises(ConfigError):
            integrate(1.0, -1.0)
        with pytest.raises(ConfigError):
            integrate(1.0, 1.0, 0.0)

    @pytest.mark.parametrize("K", [1.0, 1.3])
    def test_early_ratio(self, K):
        run = integrate(K, 1e-6, 1e-12, SamplePlan(8, 1e-9))
        s = run.series
        assert s["A"][-1] / s["B"][-1] == pytest.approx(2 * K / (2 + math.pi), abs=1e-4)

    def test_first_order_growth(self):
        run = integrate(1.0, 1e-4, 1e-12, SamplePlan(8, 1e-6))
        A, B = run.final.A, run.final.B
        assert A == pytest.approx(0.25e-4, rel=1e-3)
        assert B == pytest.approx(B_PRIME_0 * 1e-4, rel=1e-3)

    def test_monotone_and_below_ratio_line(self, run_k1):
        s = run_k1.series
        assert np.all(np.diff(s["A"]) > 0) and np.all(np.diff(s["B"]) > 0)
        assert run_k1.nonmonotone_steps == []
        t = s.t > 0
        assert np.all(s["A"][t] < 0.5 * s["B"][t])

    def test_samples_carry_derivatives(self, run_k1):
        s = run_k1.series
        j = len(s) // 2
        dA, dB = rhs(ProfileParams(s["A"][j], s["B"][j], 1.0), 1e-13)
        assert s["dA"][j] == pytest.approx(dA, rel=1e-12)
        assert s["dB"][j] == pytest.approx(dB, rel=1e-12)

    def test_transition_recorded_as_sample(self, run_k1):
        t0 = run_k1.transition.t0
        assert t0 in set(run_k1.series.t)
        assert regime_sequence_ok(run_k1.series["regime"])

    def test_deterministic(self):
        a = integrate(1.15, 100.0, 1e-8)
        b = integrate(1.15, 100.0, 1e-8)
        assert np.array_equal(a.series["B"], b.series["B"])


class TestTransition:
    @pytest.mark.parametrize("K", [1.0, 1.3])
    def test_reaches_a_equals_one(self, K):
        t0, st = find_transition_time(K, 1e-9)
        assert math.isfinite(t0) and t0 > 0
        assert abs(st.A - 1.0) <= 1e-9
        assert st.B > 2.0 / K

    def test_stable_under_refinement(self):
        t_coarse, _ = find_transition_time(1.0, 1e-9)
        t_fine, _ = find_transition_time(1.0, 1e-11)
        assert abs(t_coarse - t_fine) <= 1e-6 * t_fine

    def test_horizon(self):
        with pytest.raises(NotReached):
            find_transition_time(1.0, 1e-9, horizon=1.0)

    def test_rejects_k_outside_zero_two(self):
        with pytest.raises(ConfigError):
            find_transition_time(2.5)


class TestProfileBounds:
    def test_origin_core_margin_is_zero(self):
        reps = audit_profile_bounds(ProfileState(0.0, 0.0, 0.0), 1.0)
        core = reps[0]
        assert core.check_name == "core"
        assert core.margin == 0.0 and not core.violated

    def test_trajectory_state_passes(self):
        st = ProfileState(1.0, 1.0, 4.0)
        reps = audit_profile_bounds(st, 1.0, grid=np.linspace(0, 1, 101))
        assert all(not r.violated for r in reps)

    def test_off_trajectory_state_fails_core(self):
        reps = audit_profile_bounds(ProfileState(0.0, 3.0, 1.0), 1.0)
        assert reps[0].violated

    def test_final_region_bounds_only_in_final(self):
        reps = {r.check_name: r for r in audit_profile_bounds(ProfileState(0.0, 0.5, 1.0), 1.0)}
        assert not reps["bound_1"].applicable and reps["initial_layer"].applicable

    def test_grid_contains_minimisers(self):
        st = ProfileState(0.0, 3.0, 40.0)
        y = audit_grid(st, 1.0)
        ymin = st.A / st.B + math.log(2.0 / st.B) / st.B
        assert np.any(y == ymin)


class TestInequalities:
    def test_boundary_case(self):
        eps = 1e-3
        r = audit_inequalities(ProfileState(0.0, 1.0, 2.0 + eps), 1.0, 1.5)
        assert r[0].margin == pytest.approx(math.log(1 + eps / 2), rel=1e-12)

    def test_synthetic_violation(self):
        r = audit_inequalities(ProfileState(0.0, 5.0, 3.0), 1.0, 1.5)
        assert r[0].violated
        assert r[0].margin == pytest.approx(1 - 5 + math.log(1.5))


class TestPinching:
    def test_state_a1_b2(self):
        st = ProfileState(0.0, 1.0, 2.0)
        dA, dB = rhs(st.params(1.0), 1e-12)
        assert math.exp(3.0) / 36.0 == pytest.approx(0.5579, abs=1e-4)
        reps = audit_pinching(st, dA, dB, 1.0)
        assert all(not r.violated for r in reps)

    def test_large_b_consistent(self):
        st = ProfileState(0.0, 2.0, 1e6)
        dA, dB = rhs(st.params(1.0), 1e-12)
        reps = audit_pinching(st, dA, dB, 1.0, default_k(1.0))
        assert all(not r.violated for r in reps)
        # both derivatives sit just under their upper bounds, which vanish as B grows
        assert 0.9 < dA / (math.exp(6.0) / 9e12) <= 1.0
        assert 0.9 < dB / (math.exp(6.0) / 3e6) <= 1.0


class TestAuditTrajectory:
    def test_zero_violations(self, run_k1):
        reps = audit_trajectory(run_k1)
        bad = [r for r in reps if r.violated]
        assert bad == []
        names = {r.check_name for r in reps}
        assert {"core", "ratio", "ineq1", "ineq2", "pinch_dA_upper", "pinch_dB_lower",
                "pinch_dB_upper", "bound_1", "bound_2", "initial_layer"} <= names
