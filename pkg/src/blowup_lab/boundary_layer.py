"""Lagrangian simulation of the boundary-layer model with mean-field forcing.

Particles carry labels ``(x1_0, x2)``; only the horizontal coordinate moves.
Writing ``U = D * Phi^1`` (the back-to-label coordinate) closes the system
on per-particle ``(U, omega)`` and the scalars ``D, Q``::

    dU/dt     = x2 * phi(U) * Q * D          # = (x2/2) phi(U) dH/dt
    domega/dt = rho0 * D / U
    dD/dt     = J * D
    dQ/dt     = D

with ``H = Q**2``, ``E = H / (delta D)`` and ``J`` the Biot-Savart coefficient
integrated over current positions ``(U/D, x2)``.

The U equation only sees time through ``H``: with ``Psi' = 1/phi`` it
integrates to ``Psi(U) = Psi(x1_0) + x2 H / 2``. An explicit step cannot
follow it through the shoulders of ``phi`` (the local rate ``x2 Q D phi'`` is
far beyond any affordable step near blow-up, and particles overtake one
another), so U is evaluated from this closed form and the Runge-Kutta step
advances ``(omega, D, Q)`` only.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .diagnostics import TimeSeries
from .errors import BlowupDetected, ConfigError, DomainError

logger = logging.getLogger(__name__)

D_CAP = 1e12
DT_FLOOR = 1e-15
X2_MIN_CELL = 1e-20
ROW_CHUNK = 16
BOX_TOL = 1e-6
X1_RISE_FRACTION = 0.25
X1_RISE_MIN = 1e-6
DT_MAX = 10.0
T_MAX = 1e4


def smoothstep(u):
    """Quintic 0 -> 1 ramp on [0, 1] with vanishing first and second derivatives."""
    u = np.clip(u, 0.0, 1.0)
    # rounding can push the polynomial a few ulps past 1
    return np.minimum(u * u * u * (u * (6.0 * u - 15.0) + 10.0), 1.0)


# Primitive of 1/(w^3 (6w^2 - 15w + 10)), i.e. 1/s(w), by partial fractions.
_SQ15 = math.sqrt(15.0)


def _ramp_primitive(w):
    w = np.asarray(w, dtype=float)
    return (-0.05 / (w * w) - 0.15 / w + 0.165 * np.log(w)
            - 0.0825 * np.log((6.0 * w - 15.0) * w + 10.0)
            + 0.675 / _SQ15 * np.arctan((12.0 * w - 15.0) / _SQ15))


_P1 = float(_ramp_primitive(1.0))


def _invert_ramp_primitive(c: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """w in (0, 1] with ``_ramp_primitive(w) = c`` (requires ``c <= P(1)``).

    Newton on ``z = 1/w``, where the primitive is close to the quadratic
    ``-0.05 z^2 - 0.15 z``; that quadratic (shifted to be exact at w = 1)
    supplies the starting point.
    """
    c = np.asarray(c, dtype=float)
    z = (-0.15 + np.sqrt(0.0225 + 0.2 * (_P1 - c + 0.2))) / 0.1
    z = np.maximum(z, 1.0)
    for _ in range(max_iter):
        w = 1.0 / z
        f = _ramp_primitive(w) - c
        z_new = np.maximum(1.0, z + f * w * ((6.0 * w - 15.0) * w + 10.0))
        converged = np.all(np.abs(z_new - z) <= 1e-15 * z)
        z = z_new
        if converged:
            break
    return 1.0 / z


def smoothstep_prime(u):
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    return np.where(inside, 30.0 * u * u * (u - 1.0) ** 2, 0.0)


@dataclass(frozen=True)
class InitialData:
    """Plateau data: ``phi = 1/delta`` on ``[delta, L delta]``, ``eta = 1`` on ``[0, 1]``."""

    delta: float = 0.01
    L: float = 50.0
    smoothing: str = "quintic"
    x2_cut: float = 2.0

    def __post_init__(self):
        d, L = self.delta, self.L
        if not 0.0 < d < 1.0:
            raise ConfigError(f"delta must lie in (0, 1) (got {d})")
        if not L >= 5.0:
            raise ConfigError(f"L must be at least 5 (got {L})")
        if not (L + 1.0) * d < 1.0:
            raise ConfigError(f"need (L+1)*delta < 1 (got {(L + 1.0) * d:g})")
        if self.smoothing != "quintic":
            raise ConfigError(f"unknown smoothing {self.smoothing!r}")
        if not self.x2_cut > 1.0:
            raise ConfigError("x2_cut must exceed 1")

    @property
    def x1_support(self) -> tuple[float, float]:
        return 0.5 * self.delta, (self.L + 1.0) * self.delta

    def phi(self, x):
        d, L = self.delta, self.L
        x = np.asarray(x, dtype=float)
        rise = smoothstep((x - 0.5 * d) / (0.5 * d))
        fall = 1.0 - smoothstep((x - L * d) / d)
        return np.where(x <= L * d, rise, fall) / d

    def phi_prime(self, x):
        d, L = self.delta, self.L
        x = np.asarray(x, dtype=float)
        rise = smoothstep_prime((x - 0.5 * d) / (0.5 * d)) / (0.5 * d)
        fall = -smoothstep_prime((x - L * d) / d) / d
        return np.where(x <= L * d, rise, fall) / d

    def psi(self, x):
        """Primitive of ``1/phi`` normalised to 0 at ``delta``; infinite where phi = 0."""
        d, L = self.delta, self.L
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, np.nan)
        rise = (x > 0.5 * d) & (x < d)
        flat = (x >= d) & (x <= L * d)
        fall = (x > L * d) & (x < (L + 1.0) * d)
        out[x <= 0.5 * d] = -np.inf
        out[x >= (L + 1.0) * d] = np.inf
        out[rise] = 0.5 * d * d * (_ramp_primitive((x[rise] - 0.5 * d) / (0.5 * d)) - _P1)
        out[flat] = d * (x[flat] - d)
        out[fall] = d * d * (L - 1.0 + _P1 - _ramp_primitive(1.0 - (x[fall] - L * d) / d))
        return out

    def flow(self, x1_0, s):
        """Solution at ``s`` of ``dU/ds = phi(U)``, ``U(0) = x1_0``.

        With ``s = x2 H / 2`` this is the back-to-label coordinate. Labels
        where phi vanishes do not move.
        """
        d, L = self.delta, self.L
        x1_0, s = np.broadcast_arrays(np.asarray(x1_0, dtype=float), np.asarray(s, dtype=float))
        U = x1_0.copy()
        moving = (x1_0 > 0.5 * d) & (x1_0 < (L + 1.0) * d) & (s > 0)
        if not np.any(moving):
            return U
        x0 = x1_0[moving]
        s_m = s[moving]
        out = np.empty_like(x0)
        # For short flows the primitive round trip loses more than the flow
        # moves; one RK4 step in s is then accurate to (s |phi'|)^5.
        short = s_m * (3.75 / (d * d)) <= 1e-3
        if np.any(short):
            x, h = x0[short], s_m[short]
            k1 = self.phi(x)
            k2 = self.phi(x + 0.5 * h * k1)
            k3 = self.phi(x + 0.5 * h * k2)
            k4 = self.phi(x + h * k3)
            out[short] = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        long_ = ~short
        x0, s_m = x0[long_], s_m[long_]
        target = self.psi(x0) + s_m
        sub = np.empty_like(target)
        top = d * d * (L - 1.0)
        rise = target < 0.0
        flat = (target >= 0.0) & (target <= top)
        fall = target > top
        if np.any(rise):
            w = _invert_ramp_primitive(_P1 + 2.0 * target[rise] / (d * d))
            sub[rise] = 0.5 * d + 0.5 * d * w
        # on the plateau psi is affine, so the start point is used directly
        sub[flat] = np.where(x0[flat] >= d, x0[flat] + s_m[flat] / d, d + target[flat] / d)
        if np.any(fall):
            v = _invert_ramp_primitive(_P1 - (target[fall] - top) / (d * d))
            sub[fall] = L * d + d * (1.0 - v)
        out[long_] = np.maximum(sub, x0)
        U[moving] = out
        return U

    def eta(self, x2):
        x2 = np.asarray(x2, dtype=float)
        return 1.0 - smoothstep((x2 - 1.0) / (self.x2_cut - 1.0))


@dataclass(frozen=True)
class ParticleGrid:
    """Tensor grid of labels; 2-D arrays are indexed ``[row (x2), column (x1_0)]``."""

    x1: np.ndarray
    x2: np.ndarray
    U: np.ndarray
    omega: np.ndarray
    rho0: np.ndarray
    forcing: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        X1, X2 = np.meshgrid(self.x1, self.x2)
        return np.stack([X1, X2], axis=-1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape

    def positions(self, D: float) -> np.ndarray:
        return self.U / D


@dataclass(frozen=True)
class GlobalQuantities:
    t: float
    J: float
    D: float
    Q: float
    delta: float

    @property
    def H(self) -> float:
        return self.Q * self.Q

    @property
    def E(self) -> float:
        return self.H / (self.delta * self.D)


def geometric_x2(ny: int, top: float, first_cell: float) -> np.ndarray:
    """``ny`` points on [0, top] whose cells grow by a constant ratio from ``first_cell``."""
    n = ny - 1
    if first_cell * n >= top:
        return np.linspace(0.0, top, ny)

    def total(r):
        return first_cell * math.expm1(n * math.log(r)) / (r - 1.0)

    lo, hi = 1.0 + 1e-12, 2.0
    while total(hi) < top:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) < top:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    cells = first_cell * r ** np.arange(n)
    x2 = np.concatenate([[0.0], np.cumsum(cells)])
    x2 *= top / x2[-1]
    x2[-1] = top
    return x2


def graded_x1(init: InitialData, nx: int, rise_fraction: float = X1_RISE_FRACTION,
              rise_min: float = X1_RISE_MIN) -> np.ndarray:
    """Labels on ``[delta/2, (L+1) delta]``, geometric toward ``delta/2`` inside the rise.

    ``phi`` vanishes to third order at ``delta/2``: labels there barely move
    while their neighbours are swept across the plateau, so a uniform grid
    leaves a gap in which the trapezoid interpolates vorticity that is not
    there. With ``rise_fraction = 0`` the grid is uniform.
    """
    lo, hi = init.x1_support
    n_rise = int(round(rise_fraction * nx))
    if n_rise < 2:
        return np.linspace(lo, hi, nx)
    d = init.delta
    u = np.geomspace(rise_min, 1.0, n_rise)[:-1]
    rise = np.concatenate([[lo], lo + 0.5 * d * u])
    rest = np.linspace(d, hi, nx - rise.size)
    return np.concatenate([rise, rest])


def build_grid(init: InitialData, nx: int, ny: int, x2_min_cell: float = X2_MIN_CELL,
               rise_fraction: float = X1_RISE_FRACTION) -> ParticleGrid:
    """Labels over the support of the initial density, at rest with zero vorticity."""
    if nx < 16 or ny < 16:
        raise ConfigError(f"need nx, ny >= 16 (got {nx}, {ny})")
    if not 0.0 < x2_min_cell <= 1e-4:
        raise ConfigError(f"x2_min_cell must lie in (0, 1e-4] (got {x2_min_cell})")
    if not 0.0 <= rise_fraction <= 0.5:
        raise ConfigError(f"rise_fraction must lie in [0, 0.5] (got {rise_fraction})")
    x1 = graded_x1(init, nx, rise_fraction)
    x2 = geometric_x2(ny, init.x2_cut, x2_min_cell)
    forcing = init.eta(x2)[:, None] * init.phi(x1)[None, :]
    rho0 = x1[None, :] * forcing
    U = np.broadcast_to(x1, (ny, nx)).copy()
    return ParticleGrid(x1, x2, U, np.zeros((ny, nx)), rho0, forcing)


def _row_integrals(y1: np.ndarray, x2: np.ndarray, omega: np.ndarray) -> np.ndarray:
    y2 = x2[:, None]
    r2 = y1 * y1 + y2 * y2
    f = y1 * y2 * omega / (r2 * r2)
    return 0.5 * np.sum((f[:, 1:] + f[:, :-1]) * np.diff(y1, axis=1), axis=1)


def compute_J(grid: ParticleGrid, D: float, U: Optional[np.ndarray] = None,
              omega: Optional[np.ndarray] = None, workers: int = 1) -> float:
    """Trapezoidal ``J = iint y1 y2 omega / |y|^4 dy`` over current positions.

    Rows are reduced in fixed chunks and then combined in a fixed order, so
    the value does not depend on ``workers``.
    """
    if not D >= 1.0:
        raise ConfigError(f"D must be >= 1 (got {D})")
    U = grid.U if U is None else U
    omega = grid.omega if omega is None else omega
    y1 = U / D
    ny = y1.shape[0]
    chunks = [slice(s, min(s + ROW_CHUNK, ny)) for s in range(0, ny, ROW_CHUNK)]

    def work(sl):
        return _row_integrals(y1[sl], grid.x2[sl], omega[sl])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(sl) for sl in chunks]
    rows = np.concatenate(parts)
    return float(0.5 * np.sum((rows[1:] + rows[:-1]) * np.diff(grid.x2)))


def initial_quantities(init: InitialData) -> GlobalQuantities:
    return GlobalQuantities(0.0, 0.0, 1.0, 0.0, init.delta)


def back_to_label(grid: ParticleGrid, init: InitialData, Q: float) -> np.ndarray:
    """U for every label once ``H`` has reached ``Q**2``."""
    return init.flow(grid.x1[None, :], 0.5 * grid.x2[:, None] * (Q * Q))


def step(grid: ParticleGrid, gq: GlobalQuantities, init: InitialData, dt: float,
         workers: int = 1, D_cap: float = D_CAP) -> tuple[ParticleGrid, GlobalQuantities]:
    """One classical RK4 step of ``(omega, D, Q)``.

    Each stage evaluates U from its stage value of ``Q`` and recomputes ``J``
    from the stage state. Raises BlowupDetected (carrying the new state) once
    ``D`` exceeds ``D_cap``.
    """
    if not dt > 0:
        raise ConfigError(f"dt must be positive (got {dt})")
    w0, D0, Q0 = grid.omega, gq.D, gq.Q

    def stage(w, D, Q, U=None, J=None):
        if U is None:
            U = back_to_label(grid, init, Q)
        if J is None:
            J = compute_J(grid, D, U, w, workers)
        return grid.rho0 * D / U, J * D, D

    k1 = stage(w0, D0, Q0, grid.U, gq.J)
    k2 = stage(w0 + 0.5 * dt * k1[0], D0 + 0.5 * dt * k1[1], Q0 + 0.5 * dt * k1[2])
    k3 = stage(w0 + 0.5 * dt * k2[0], D0 + 0.5 * dt * k2[1], Q0 + 0.5 * dt * k2[2])
    k4 = stage(w0 + dt * k3[0], D0 + dt * k3[1], Q0 + dt * k3[2])
    sixth = dt / 6.0
    w = w0 + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    D = D0 + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    Q = Q0 + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    new_grid = replace(grid, U=back_to_label(grid, init, Q), omega=w)
    J = compute_J(new_grid, D, workers=workers)
    new_gq = GlobalQuantities(gq.t + dt, J, D, Q, gq.delta)
    if D > D_cap:
        raise BlowupDetected(f"D={D:.3e} exceeds cap {D_cap:.1e} at t={new_gq.t:.9g}",
                             new_grid, new_gq, new_gq.t)
    return new_grid, new_gq


def max_cell_span(grid: ParticleGrid, init: InitialData) -> float:
    """Widest gap between x1-neighbours in back-to-label units of ``delta``.

    Neighbours that straddle the pile-up at the fall edge leave an empty
    stretch of plateau between them, which the trapezoid fills by linear
    interpolation of omega.
    """
    return float(np.max(np.diff(grid.U, axis=1)) / init.delta)


def compute_J_label(grid: ParticleGrid, gq: GlobalQuantities, init: InitialData) -> float:
    """``J`` as a label-space integral with the exact Jacobian.

    ``dU/dx1_0 = phi(U) / phi(x1_0)`` follows from the closed form of the
    flow, and ``omega / phi(x1_0)`` stays finite, so the integrand
    ``K(y) * x1_0 * eta * phi(U) * int D/U`` has no 0/0 at the ends of the
    support. Used as a cross-check of :func:`compute_J`: the two agree while
    the pile-up at the fall edge is resolved by the label grid and part ways
    once it is not.
    """
    D = gq.D
    y1 = grid.U / D
    y2 = grid.x2[:, None]
    r2 = y1 * y1 + y2 * y2
    phi0 = init.phi(grid.x1)[None, :]
    safe = np.where(phi0 > 0, phi0, 1.0)
    weight = np.where(phi0 > 0, grid.omega * init.phi(grid.U) / safe, 0.0)
    f = y1 * y2 * weight / (r2 * r2) / D
    rows = 0.5 * np.sum((f[:, 1:] + f[:, :-1]) * np.diff(grid.x1), axis=1)
    return float(0.5 * np.sum((rows[1:] + rows[:-1]) * np.diff(grid.x2)))


# ----------------------------------------------------------------------------
# closed forms and audits


def oracle_omega(x1_0, x2, Q: float, init: InitialData, check: bool = True):
    """Vorticity of a plateau label while its back-to-label coordinate stays on the plateau.

    ``(Q/delta) * arctan(sqrt(z)) / sqrt(z)`` with ``z = x2 Q^2 / (2 delta x1_0)``.
    """
    x1_0 = np.asarray(x1_0, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    d, L = init.delta, init.L
    H = Q * Q
    Y2 = x2 * H / (d * d)
    if check:
        ok = (np.maximum(0.5 * Y2 * d, d) <= x1_0) & (x1_0 <= 0.5 * L * d) & (x2 >= 0)
        if H > 0:
            ok &= x2 <= d * d * L / H
        if not np.all(ok):
            raise DomainError("label outside the plateau domain of the closed form")
    z = d * Y2 / (2.0 * x1_0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sz = np.sqrt(z)
        ratio = np.where(z > 0, np.arctan(sz) / np.where(sz > 0, sz, 1.0), 1.0)
    out = Q / d * ratio
    return float(out) if out.ndim == 0 else out


def domain_mask(grid: ParticleGrid, gq: GlobalQuantities, init: InitialData) -> np.ndarray:
    """Labels where the closed-form vorticity applies (and eta = 1)."""
    d, L = init.delta, init.L
    H = gq.H
    X1 = grid.x1[None, :]
    X2 = grid.x2[:, None]
    Y2 = X2 * H / (d * d)
    ok = (np.maximum(0.5 * Y2 * d, d) <= X1) & (X1 <= 0.5 * L * d) & (X2 <= 1.0)
    if H > 0:
        ok = ok & (X2 <= d * d * L / H)
    return np.broadcast_to(ok, grid.shape)


def plateau_mask(grid: ParticleGrid, init: InitialData) -> np.ndarray:
    """Labels whose back-to-label coordinate has never left [delta, L delta].

    U is nondecreasing in time, so checking the current value suffices.
    """
    d, L = init.delta, init.L
    start = (grid.x1 >= d)[None, :]
    return start & (grid.U <= L * d)


def plateau_error(grid: ParticleGrid, gq: GlobalQuantities, init: InitialData) -> float:
    """Max relative deviation of U from ``x1_0 + x2 H / (2 delta)`` on plateau labels."""
    mask = plateau_mask(grid, init)
    if not np.any(mask):
        return 0.0
    exact = grid.x1[None, :] + grid.x2[:, None] * gq.H / (2.0 * init.delta)
    rel = np.abs(grid.U - exact) / grid.U
    return float(np.max(rel[mask]))


def vorticity_oracle_error(grid: ParticleGrid, gq: GlobalQuantities, init: InitialData) -> float:
    """Max relative deviation of omega from the closed form on the domain labels."""
    if gq.Q <= 0:
        return 0.0
    mask = domain_mask(grid, gq, init)
    if not np.any(mask):
        return 0.0
    X1 = np.broadcast_to(grid.x1[None, :], grid.shape)[mask]
    X2 = np.broadcast_to(grid.x2[:, None], grid.shape)[mask]
    ref = oracle_omega(X1, X2, gq.Q, init, check=False)
    return float(np.max(np.abs(grid.omega[mask] - ref) / ref))


@dataclass(frozen=True)
class AuditReport:
    time: float
    check_name: str
    margin: float
    violated: bool
    applicable: bool = True


def audit_box_bound(grid: ParticleGrid, gq: GlobalQuantities, init: InitialData,
                    tol: float = BOX_TOL) -> AuditReport:
    """omega >= (pi/4) Q / delta for particles currently inside the box.

    The box is ``y2 <= delta^2 L / H`` and, row by row, ``y1`` between the
    images of ``max(Y2 delta / 2, delta)`` and ``L delta / 2``. Rows above
    ``x2 = 1`` are left out since the closed form behind the bound needs
    ``eta = 1``. The margin is reported in units of ``Q / delta``.
    """
    d, L = init.delta, init.L
    H, D, Q = gq.H, gq.D, gq.Q
    if H <= 0:
        return AuditReport(gq.t, "box", math.nan, False, applicable=False)
    rows = grid.x2 <= min(1.0, d * d * L / H)
    if not np.any(rows):
        return AuditReport(gq.t, "box", math.nan, False, applicable=False)
    x2 = grid.x2[rows][:, None]
    shift = x2 * H / (2.0 * d * D)
    Y2 = x2 * H / (d * d)
    lo = np.maximum(0.5 * Y2 * d, d) / D + shift
    up = 0.5 * L * d / D + shift
    y1 = grid.U[rows] / D
    inside = (y1 >= lo) & (y1 <= up)
    if not np.any(inside):
        return AuditReport(gq.t, "box", math.nan, False, applicable=False)
    margin = float(np.min(grid.omega[rows][inside]) - 0.25 * math.pi * Q / d) / (Q / d)
    return AuditReport(gq.t, "box", margin, margin < -tol)


def j_chain_bound(Q: float, init: InitialData) -> float:
    return math.pi / 48.0 * (Q / init.delta) * math.log(init.L / 5.0)


def audit_J_chain(gq: GlobalQuantities, init: InitialData, Q_measured: Optional[float] = None,
                  J_measured: Optional[float] = None) -> AuditReport:
    """J >= (pi/48)(Q/delta) log(L/5), evaluated only where its hypotheses hold.

    The sign is recorded, not asserted: the hypotheses also restrict labels,
    which moderate (delta, L) need not satisfy.
    """
    Q = gq.Q if Q_measured is None else Q_measured
    J = gq.J if J_measured is None else J_measured
    H = Q * Q
    guards = H > 0 and gq.E <= 2.0 and init.delta**2 * init.L / H <= 1.0 and init.L >= 5.0
    if not guards:
        return AuditReport(gq.t, "j_chain", math.nan, False, applicable=False)
    margin = J - j_chain_bound(Q, init)
    return AuditReport(gq.t, "j_chain", margin, False)


# ----------------------------------------------------------------------------
# driver


@dataclass
class StructuralCounts:
    D_decrease: int = 0
    omega_decrease: int = 0
    omega_negative: int = 0
    U_decrease: int = 0
    axis_moved: int = 0
    H_mismatch: int = 0

    @property
    def total(self) -> int:
        return (self.D_decrease + self.omega_decrease + self.omega_negative
                + self.U_decrease + self.axis_moved + self.H_mismatch)


@dataclass
class BoundaryRun:
    init: InitialData
    nx: int
    ny: int
    series: TimeSeries
    grid: ParticleGrid
    gq: GlobalQuantities
    status: str
    steps: int
    rejected: int
    plateau_error: float
    vorticity_error: float
    box_violations: int
    structural: StructuralCounts = field(default_factory=StructuralCounts)

    @property
    def summary_grid(self) -> dict:
        g = self.grid
        return {
            "nx": self.nx, "ny": self.ny,
            "max_omega": float(np.max(g.omega)),
            "U_min": float(np.min(g.U)), "U_max": float(np.max(g.U)),
            "x2_first_cell": float(g.x2[1]),
            "max_cell_span": max_cell_span(g, self.init),
            "J_label": compute_J_label(g, self.gq, self.init),
        }


@dataclass(frozen=True)
class StepControl:
    """Step halving on the relative change of D per step.

    A step whose relative changes of both D and Q stay below
    ``threshold * grow_below`` doubles dt for the next step, up to ``dt_max``.
    Setting ``dt_max = dt0`` gives pure halving.
    """

    dt0: float = 1e-3
    threshold: float = 0.1
    dt_floor: float = DT_FLOOR
    dt_max: float = DT_MAX
    grow_below: float = 0.25

    def __post_init__(self):
        if not (self.dt0 > 0 and self.threshold > 0 and self.dt_floor > 0):
            raise ConfigError("dt0, threshold and dt_floor must be positive")
        if not (self.dt_max >= self.dt0 and 0.0 <= self.grow_below < 1.0):
            raise ConfigError("need dt_max >= dt0 and grow_below in [0, 1)")


SERIES_COLUMNS = ("J", "D", "Q", "H", "E", "max_omega", "box_margin", "jchain_margin",
                  "jchain_applicable")


def run(init: InitialData, nx: int = 256, ny: int = 256,
        dt_controls: StepControl = StepControl(), Q_max: float = 1e6, t_max: float = T_MAX,
        D_cap: float = D_CAP, workers: int = 1, x2_min_cell: float = X2_MIN_CELL,
        rise_fraction: float = X1_RISE_FRACTION) -> BoundaryRun:
    """Advance until ``Q >= Q_max``, ``t >= t_max`` or blow-up is detected.

    Every accepted step is sampled. Status is ``"blowup"`` when ``Q_max`` is
    reached, ``D`` passes ``D_cap`` or the step floor is hit, ``"t_max"``
    otherwise.
    """
    if not Q_max > 0 or not t_max > 0:
        raise ConfigError("Q_max and t_max must be positive")
    grid = build_grid(init, nx, ny, x2_min_cell, rise_fraction)
    gq = initial_quantities(init)
    dt = dt_controls.dt0
    rows = []
    counts = StructuralCounts()
    plateau_err = 0.0
    vort_err = 0.0
    box_viol = 0
    steps = rejected = 0
    status = "t_max"

    def record(g, q):
        nonlocal plateau_err, vort_err, box_viol
        box = audit_box_bound(g, q, init)
        jc = audit_J_chain(q, init)
        box_viol += int(box.violated)
        plateau_err = max(plateau_err, plateau_error(g, q, init))
        vort_err = max(vort_err, vorticity_oracle_error(g, q, init))
        rows.append((q.t, q.J, q.D, q.Q, q.H, q.E, float(np.max(g.omega)), box.margin,
                     jc.margin, float(jc.applicable)))

    def check(old_g, old_q, g, q):
        counts.D_decrease += int(q.D < old_q.D)
        counts.omega_decrease += int(np.any(g.omega < old_g.omega))
        counts.omega_negative += int(np.any(g.omega < 0))
        counts.U_decrease += int(np.any(g.U < old_g.U))
        counts.axis_moved += int(np.any(g.U[0] != g.x1)) if g.x2[0] == 0.0 else 0
        counts.H_mismatch += int(q.H != q.Q * q.Q)

    record(grid, gq)
    while gq.t < t_max:
        dt = min(dt, t_max - gq.t)
        try:
            new_grid, new_gq = step(grid, gq, init, dt, workers, D_cap)
        except BlowupDetected as exc:
            if abs(exc.gq.D / gq.D - 1.0) > dt_controls.threshold:
                new_grid, new_gq = None, None
            else:
                check(grid, gq, exc.grid, exc.gq)
                grid, gq = exc.grid, exc.gq
                steps += 1
                record(grid, gq)
                status = "blowup"
                logger.info("blow-up: %s", exc)
                break
        if new_gq is None or abs(new_gq.D / gq.D - 1.0) > dt_controls.threshold:
            rejected += 1
            dt *= 0.5
            if dt < dt_controls.dt_floor:
                status = "blowup"
                logger.info("step floor reached at t=%.12g", gq.t)
                break
            continue
        calm = dt_controls.threshold * dt_controls.grow_below
        grow = (abs(new_gq.D / gq.D - 1.0) < calm
                and (gq.Q == 0.0 or abs(new_gq.Q / gq.Q - 1.0) < calm))
        check(grid, gq, new_grid, new_gq)
        grid, gq = new_grid, new_gq
        steps += 1
        record(grid, gq)
        if grow:
            dt = min(2.0 * dt, dt_controls.dt_max)
        if gq.Q >= Q_max:
            status = "blowup"
            break

    cols = list(zip(*rows))
    series = TimeSeries(cols[0], **{name: np.array(c) for name, c in zip(SERIES_COLUMNS, cols[1:])})
    return BoundaryRun(init, nx, ny, series, grid, gq, status, steps, rejected,
                       plateau_err, vort_err, box_viol, counts)
