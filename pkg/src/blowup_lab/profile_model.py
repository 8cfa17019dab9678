"""The (A, B) nonlocal ODE: integration, regimes, transition time and audits.

Starting from ``A = B = 0`` the state moves through the initial region
(``A <= 1`` or ``B <= 2/K``) into the final region (``1 < A <= K B / 2``)
and then grows for all time with ``e^A ~ B^{K/3}`` and ``B ~ t^{1/(2-K)}``.
Every inequality known to hold along the way is re-checked on the computed
trajectory; a negative margin beyond ``AUDIT_TOL`` is a violation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .diagnostics import TimeSeries
from .errors import ConfigError, NotReached
from .quadrature import DEFAULT_TOL, ProfileParams, rhs
from .rk45 import DormandPrince, Step, rk_step

logger = logging.getLogger(__name__)

AUDIT_TOL = 1e-12
DEFAULT_ODE_TOL = 1e-9
# derivatives reported at samples (and used by the pinching audit)
SAMPLE_QUAD_TOL = 1e-13
VALIDATED_K = (1.0, 1.3)


class Regime(str, Enum):
    INITIAL = "InitialI"
    FINAL = "FinalF"
    OUTSIDE = "Outside"


@dataclass(frozen=True)
class ProfileState:
    t: float
    A: float
    B: float

    def params(self, K: float) -> ProfileParams:
        return ProfileParams(self.A, self.B, K)


@dataclass(frozen=True)
class AuditReport:
    time: float
    check_name: str
    margin: float
    violated: bool
    applicable: bool = True


def _report(t: float, name: str, margin: float, tol: float = AUDIT_TOL) -> AuditReport:
    margin = float(margin)
    return AuditReport(float(t), name, margin, bool(not margin >= -tol))


def _not_applicable(t: float, name: str) -> AuditReport:
    return AuditReport(float(t), name, math.nan, False, applicable=False)


@dataclass(frozen=True)
class SamplePlan:
    """Geometric sampling in ``t``: ``per_decade`` points per decade from ``t_first``."""

    per_decade: int = 64
    t_first: float = 1e-8

    def times(self, t_end: float) -> np.ndarray:
        if self.per_decade < 1 or not self.t_first > 0:
            raise ConfigError("sample plan needs per_decade >= 1 and t_first > 0")
        start = math.log10(self.t_first)
        n = int(math.floor((math.log10(t_end) - start) * self.per_decade + 1e-9)) + 1
        ts = 10.0 ** (start + np.arange(max(n, 0)) / self.per_decade)
        ts = ts[ts < t_end * (1 - 1e-12)]
        return np.concatenate([[0.0], ts, [t_end]])


def classify_regime(s: ProfileState, K: float) -> Regime:
    A, B = s.A, s.B
    if (0.0 <= A <= 1.0 and B >= 2.0 / K) or (0.0 <= B <= 2.0 / K):
        return Regime.INITIAL
    if A > 1.0 and A <= K * B / 2.0:
        return Regime.FINAL
    return Regime.OUTSIDE


def k_upper_bound(K: float) -> float:
    """Upper end of the admissible exponent range ``1 < k < k_upper_bound(K)``."""
    return 48.0 * (1.0 - math.exp(-6.0 / K)) / (K * (K * K + 4.0) ** 2)


def default_k(K: float) -> float:
    return 0.5 * (1.0 + k_upper_bound(K))


@dataclass
class Transition:
    t0: float
    state: ProfileState


@dataclass
class ProfileRun:
    K: float
    ode_tol: float
    quad_tol: float
    series: TimeSeries
    transition: Optional[Transition]
    steps: int
    nfev: int
    rejected: int
    nonmonotone_steps: list[float] = field(default_factory=list)

    @property
    def final(self) -> ProfileState:
        return ProfileState(float(self.series.t[-1]), float(self.series["A"][-1]),
                            float(self.series["B"][-1]))

    @property
    def validated(self) -> bool:
        return VALIDATED_K[0] <= self.K <= VALIDATED_K[1]


def _check_params(K: float, ode_tol: float) -> None:
    if not (K > 0 and math.isfinite(K)):
        raise ConfigError(f"K must be positive (got {K})")
    if not ode_tol > 0:
        raise ConfigError(f"ode_tol must be positive (got {ode_tol})")


def _quad_tol_for(ode_tol: float) -> float:
    # two orders below the integrator tolerance
    return min(DEFAULT_TOL, ode_tol / 100.0)


class _Marcher:
    """Drives the integrator and locates the A = 1 crossing."""

    def __init__(self, K: float, ode_tol: float, quad_tol: float):
        self.K = K
        self.quad_tol = quad_tol
        self.solver = DormandPrince(self._fun, 0.0, [0.0, 0.0], ode_tol)
        self.transition: Optional[Transition] = None
        self.nonmonotone: list[float] = []
        self.steps = 0

    def _fun(self, t, y):
        p = ProfileParams(max(float(y[0]), 0.0), max(float(y[1]), 0.0), self.K)
        return np.array(rhs(p, self.quad_tol))

    def advance(self, t_bound: float) -> Step:
        step = self.solver.step(t_bound)
        self.steps += 1
        dA, dB = step.y_new - step.y
        if not (dA > 0 and dB > 0):
            self.nonmonotone.append(step.t_new)
        if self.transition is None and step.y[0] < 1.0 <= step.y_new[0]:
            self.transition = self._locate(step)
        return step

    def _locate(self, step: Step) -> Transition:
        # dense-output bracket, regula falsi (Illinois)
        lo, hi = step.t, step.t_new
        glo, ghi = step.y[0] - 1.0, step.y_new[0] - 1.0
        side = 0
        t_guess = hi
        for _ in range(200):
            t_guess = hi - ghi * (hi - lo) / (ghi - glo)
            g = float(step.dense(t_guess)[0]) - 1.0
            if g == 0.0 or hi - lo <= 1e-15 * hi:
                break
            if (g > 0) == (ghi > 0):
                hi, ghi = t_guess, g
                if side == -1:
                    glo *= 0.5
                side = -1
            else:
                lo, glo = t_guess, g
                if side == 1:
                    ghi *= 0.5
                side = 1
        # Newton on genuine partial steps so the returned state is an RK state
        tau = t_guess - step.t
        f0 = self._fun(step.t, step.y)
        y = step.y
        for _ in range(30):
            y, f_end, _ = rk_step(self._fun, step.t, step.y, f0, tau)
            resid = y[0] - 1.0
            if abs(resid) <= 1e-14:
                break
            tau -= resid / f_end[0]
        t0 = step.t + tau
        return Transition(t0, ProfileState(t0, float(y[0]), float(y[1])))


def integrate(
    K: float,
    t_end: float,
    ode_tol: float = DEFAULT_ODE_TOL,
    sample_plan: SamplePlan = SamplePlan(),
    quad_tol: Optional[float] = None,
    sample_quad_tol: float = SAMPLE_QUAD_TOL,
) -> ProfileRun:
    """Integrate from ``A = B = 0`` to ``t_end`` and sample the trajectory.

    Samples sit on ``sample_plan`` plus the transition time (if reached) and
    ``t_end``; each carries the state and its derivatives.
    """
    _check_params(K, ode_tol)
    if not t_end > 0:
        raise ConfigError(f"t_end must be positive (got {t_end})")
    quad_tol = _quad_tol_for(ode_tol) if quad_tol is None else quad_tol
    march = _Marcher(K, ode_tol, quad_tol)
    times = sample_plan.times(t_end)
    records = [(0.0, 0.0, 0.0)]
    i = 1
    while march.solver.t < t_end:
        step = march.advance(t_end)
        had = march.transition is not None and step.t < march.transition.t0 <= step.t_new
        if had:
            st = march.transition.state
            records.append((st.t, st.A, st.B))
        while i < times.size and times[i] <= step.t_new:
            ts = times[i]
            if ts == step.t_new or i == times.size - 1:
                y = step.y_new
            else:
                y = step.dense(ts)
            records.append((float(ts), float(y[0]), float(y[1])))
            i += 1
    records.sort()
    # an event can coincide with a sample time to the last bit
    dedup = [records[0]]
    for r in records[1:]:
        if r[0] > dedup[-1][0]:
            dedup.append(r)
    t, A, B = (np.array(c) for c in zip(*dedup))
    dA = np.empty_like(t)
    dB = np.empty_like(t)
    regime = []
    for j in range(t.size):
        dA[j], dB[j] = rhs(ProfileParams(A[j], B[j], K), sample_quad_tol)
        regime.append(classify_regime(ProfileState(t[j], A[j], B[j]), K).value)
    series = TimeSeries(t, A=A, B=B, dA=dA, dB=dB, regime=np.array(regime, dtype=object))
    solver = march.solver
    logger.info("K=%g: %d steps, %d rhs evaluations, %d rejected", K, march.steps,
                solver.nfev, solver.rejected)
    return ProfileRun(K, ode_tol, quad_tol, series, march.transition, march.steps,
                      solver.nfev, solver.rejected, march.nonmonotone)


def find_transition_time(
    K: float,
    ode_tol: float = DEFAULT_ODE_TOL,
    horizon: float = 1e8,
    quad_tol: Optional[float] = None,
) -> tuple[float, ProfileState]:
    """Time ``t0`` at which ``A`` first reaches 1, with the state there."""
    _check_params(K, ode_tol)
    if not 0 < K < 2:
        raise ConfigError(f"transition search needs 0 < K < 2 (got {K})")
    quad_tol = _quad_tol_for(ode_tol) if quad_tol is None else quad_tol
    march = _Marcher(K, ode_tol, quad_tol)
    while march.transition is None:
        if march.solver.t >= horizon:
            raise NotReached(f"A < 1 at the search horizon t={horizon:g} (K={K})")
        march.advance(horizon)
    tr = march.transition
    return tr.t0, tr.state


# ----------------------------------------------------------------------------
# audits


def audit_grid(s: ProfileState, K: float, k: Optional[float] = None, n: int = 101) -> np.ndarray:
    """Uniform grid on [0, 1] plus the minimisers of the audited profile bounds."""
    pts = [np.linspace(0.0, 1.0, n)]
    if s.B > 0:
        A, B = s.A, s.B
        k = default_k(K) if k is None else k
        extra = [
            A / B + math.log(2.0 / (K * B)) / B,
            A / B + math.log(1.0 / (k * B)) / (k * B),
            A / B + math.log(1.0 / B) / B,
            A / B,
        ]
        pts.append(np.clip(extra, 0.0, 1.0))
    return np.unique(np.concatenate(pts))


def _exp_neg_g(s: ProfileState, y: np.ndarray, scale: float = 1.0) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.exp(scale * (-s.A + s.B * y))


def audit_profile_bounds(s: ProfileState, K: float, k: Optional[float] = None,
                         grid: Optional[np.ndarray] = None,
                         tol: float = AUDIT_TOL) -> list[AuditReport]:
    """Pointwise profile bounds on a y-grid, each in its regime of validity.

    ``core``: e^{-G} - y (always). ``initial_layer``: e^{-G} - (2/K) y on
    y <= A/B (initial region). ``bound_1``: (K/2) e^{-G} - y and ``bound_2``:
    e^{-kG} - y (final region).
    """
    k = default_k(K) if k is None else k
    y = audit_grid(s, K, k) if grid is None else np.asarray(grid, dtype=float)
    regime = classify_regime(s, K)
    eg = _exp_neg_g(s, y)
    out = [_report(s.t, "core", np.min(eg - y), tol)]
    if regime is Regime.INITIAL:
        if s.B > 0:
            ys = y[y <= s.A / s.B]
            ys = ys if ys.size else np.array([0.0])
        else:
            ys = np.array([0.0])
        out.append(_report(s.t, "initial_layer", np.min(_exp_neg_g(s, ys) - 2.0 / K * ys), tol))
    else:
        out.append(_not_applicable(s.t, "initial_layer"))
    if regime is Regime.FINAL:
        out.append(_report(s.t, "bound_1", np.min(K / 2.0 * eg - y), tol))
        out.append(_report(s.t, "bound_2", np.min(_exp_neg_g(s, y, k) - y), tol))
    else:
        out.append(_not_applicable(s.t, "bound_1"))
        out.append(_not_applicable(s.t, "bound_2"))
    return out


def audit_inequalities(s: ProfileState, K: float, k: Optional[float] = None,
                       tol: float = AUDIT_TOL) -> list[AuditReport]:
    """1 - A + log(K B / 2) >= 0 and 1 - k A + log(k B) >= 0."""
    k = default_k(K) if k is None else k
    if s.B <= 0:
        return [_not_applicable(s.t, "ineq1"), _not_applicable(s.t, "ineq2")]
    return [
        _report(s.t, "ineq1", 1.0 - s.A + math.log(K * s.B / 2.0), tol),
        _report(s.t, "ineq2", 1.0 - k * s.A + math.log(k * s.B), tol),
    ]


def audit_pinching(s: ProfileState, dA: float, dB: float, K: float,
                   k: Optional[float] = None, tol: float = AUDIT_TOL) -> list[AuditReport]:
    """Two-sided bounds on the derivatives in the final region.

    Margins are normalised by ``e^{3A}/(9B^2)`` (for dA) and ``e^{3A}/(3KB)``
    (for dB). With ``k`` the two sharper lower bounds valid once the profile
    satisfies ``y <= e^{-kG}`` are checked as well.
    """
    A, B = s.A, s.B
    e3a = math.exp(3.0 * A)
    scale_a = e3a / (9.0 * B * B)
    scale_b = e3a / (3.0 * K * B)
    low_b = scale_b * (1.0 - math.exp(-6.0 / K)) / (K * K / 4.0 + 1.0) ** 2
    out = [
        _report(s.t, "pinch_dA_upper", (scale_a - dA) / scale_a, tol),
        _report(s.t, "pinch_dB_lower", (dB - low_b) / scale_b, tol),
        _report(s.t, "pinch_dB_upper", (scale_b - dB) / scale_b, tol),
    ]
    if k is not None:
        q = math.exp(-(k - 1.0) * A)
        h = math.exp(-1.5 * A)
        low_a_ref = scale_a * (1.0 - 1.5 * A * h - h) / (1.0 + q) ** 2
        low_b_ref = scale_b * (1.0 - h) / (1.0 + q) ** 2
        out.append(_report(s.t, "pinch_dA_lower_refined", (dA - low_a_ref) / scale_a, tol))
        out.append(_report(s.t, "pinch_dB_lower_refined", (dB - low_b_ref) / scale_b, tol))
    return out


def audit_trajectory(run: ProfileRun, k: Optional[float] = None,
                     tol: float = AUDIT_TOL) -> list[AuditReport]:
    """Every audit on every sample of ``run`` plus the step-level checks."""
    K = run.K
    k = default_k(K) if k is None else k
    s = run.series
    reports: list[AuditReport] = []
    for j in range(len(s)):
        st = ProfileState(float(s.t[j]), float(s["A"][j]), float(s["B"][j]))
        reports.extend(audit_profile_bounds(st, K, k, tol=tol))
        if st.t > 0:
            reports.append(_report(st.t, "ratio", K / 2.0 * st.B - st.A, tol))
        if s["regime"][j] == Regime.FINAL.value:
            reports.extend(audit_inequalities(st, K, k, tol))
            reports.extend(audit_pinching(st, float(s["dA"][j]), float(s["dB"][j]), K, k, tol))
    t_last = float(s.t[-1])
    reports.append(_report(t_last, "monotone_steps", -float(len(run.nonmonotone_steps)), 0.0))
    reports.append(_report(t_last, "regime_progression",
                           0.0 if regime_sequence_ok(s["regime"]) else -1.0, 0.0))
    return reports


def regime_sequence_ok(labels) -> bool:
    """True when the labels read InitialI* FinalF* with no Outside."""
    seen_final = False
    for lab in labels:
        if lab == Regime.OUTSIDE.value:
            return False
        if lab == Regime.FINAL.value:
            seen_final = True
        elif seen_final:
            return False
    return True


def sample_margins(run: ProfileRun, reports: list[AuditReport]) -> dict[str, np.ndarray]:
    """Per-sample columns (core, ratio, ineq1, ineq2) for the time-series file."""
    t = run.series.t
    index = {float(v): j for j, v in enumerate(t)}
    cols = {name: np.full(t.size, math.nan) for name in ("core", "ratio", "ineq1", "ineq2")}
    for r in reports:
        if r.check_name in cols and r.applicable and r.time in index:
            cols[r.check_name][index[r.time]] = r.margin
    return cols
