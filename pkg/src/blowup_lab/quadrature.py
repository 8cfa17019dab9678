"""Integrals driving the nonlocal profile ODE.

The profile is affine, ``G(y) = A - B*y``, and both time derivatives are
integrals over ``y in [0, 1]`` of kernels built from ``exp(-G)``:

    dA/dt = int y e^{-G} / (y^2 + e^{-2G})^2 dy
    dB/dt = (1/K) int e^{-G} / (y^2 + e^{-2G})^2 dy

For large ``B`` nearly all of the mass sits in a layer of width ``~1/B`` at
``y = 0`` while ``e^{-G(1)}`` overflows, so the kernels are evaluated in log
space and the adaptive rule is seeded with breakpoints that bracket the layer.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NonConvergence, SaturationError

__all__ = [
    "ProfileParams",
    "QuadratureResult",
    "integrand_a",
    "integrand_b",
    "peak_split",
    "breakpoints",
    "adaptive_integrate",
    "rhs",
    "oracle_rhs_b0",
    "DEFAULT_TOL",
    "DEFAULT_MAX_PANELS",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_PANELS = 10_000

# exp() overflows just above 709.78
_LOG_CEILING = 700.0

# Gauss-Kronrod 15/7 abscissae on [-1, 1] (non-negative half) and weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

# Full 15-node layout: -x0..-x6, 0, x6..x0
_NODES = np.concatenate([-_XGK[:-1], [0.0], _XGK[-2::-1]])
_KW = np.concatenate([_WGK[:-1], [_WGK[-1]], _WGK[-2::-1]])
_GW = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes x1, x3, x5 and the centre.
for _j, _w in zip((1, 3, 5), _WG[:3]):
    _GW[_j] = _w
    _GW[14 - _j] = _w
_GW[7] = _WG[3]


@dataclass(frozen=True)
class ProfileParams:
    """Affine profile ``G(y) = A - B*y`` together with the depletion parameter."""

    A: float
    B: float
    K: float = 1.0

    def __post_init__(self):
        if not (self.A >= 0.0 and self.B >= 0.0):
            raise ConfigError(f"profile needs A, B >= 0 (got A={self.A}, B={self.B})")
        if not self.K > 0.0:
            raise ConfigError(f"K must be positive (got {self.K})")
        if not (math.isfinite(self.A) and math.isfinite(self.B) and math.isfinite(self.K)):
            raise ConfigError("profile parameters must be finite")

    def G(self, y):
        return self.A - self.B * np.asarray(y, dtype=float)


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_estimate: float
    evaluations: int
    panels: int = 1


def _log_kernel(p: ProfileParams, y: np.ndarray) -> np.ndarray:
    """log of e^{-G}/(y^2 + e^{-2G})^2, finite for every y in [0, 1]."""
    g = p.A - p.B * y
    with np.errstate(divide="ignore"):
        log_y2 = 2.0 * np.log(y)
    out = -g - 2.0 * np.logaddexp(log_y2, -2.0 * g)
    top = float(np.max(out)) if out.size else -np.inf
    if top > _LOG_CEILING:
        raise SaturationError(
            f"integrand exceeds floating-point range (log value {top:.1f} at A={p.A:g})"
        )
    return out


def integrand_b(p: ProfileParams, y):
    """e^{-G(y)} / (y^2 + e^{-2G(y)})^2 (no 1/K factor)."""
    arr = np.asarray(y, dtype=float)
    val = np.exp(_log_kernel(p, np.atleast_1d(arr)))
    return val.reshape(arr.shape) if arr.ndim else float(val[0])


def integrand_a(p: ProfileParams, y):
    """y e^{-G(y)} / (y^2 + e^{-2G(y)})^2."""
    arr = np.asarray(y, dtype=float)
    flat = np.atleast_1d(arr)
    val = flat * np.exp(_log_kernel(p, flat))
    return val.reshape(arr.shape) if arr.ndim else float(val[0])


def peak_split(p: ProfileParams, xtol: float = 1e-14) -> Optional[float]:
    """Interior root of ``y = exp(-A + B*y)`` on (0, 1), or None.

    ``h(y) = y - exp(-A + B*y)`` is negative at 0; a root is reported only when
    ``h(1) > 0`` so that bisection has a genuine sign change.
    """

    def h(y: float) -> float:
        arg = -p.A + p.B * y
        if arg > _LOG_CEILING:
            return -math.inf
        return y - math.exp(arg)

    if not h(1.0) > 0.0:
        return None
    lo, hi = 0.0, 1.0
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if h(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def breakpoints(p: ProfileParams) -> list[float]:
    """Panel edges used to seed the adaptive rule."""
    pts = {0.0, 1.0}
    ystar = peak_split(p)
    if ystar is not None:
        pts.add(ystar)
    if p.B < 1.0:
        pts.add(min(1.0, 3.0 * math.exp(-p.A)))
    else:
        # boundary layer of width ~1/(3B) at y = 0
        for c in (1.0, 4.0, 16.0, 64.0, 256.0):
            pts.add(min(1.0, c / (3.0 * p.B)))
    return sorted(x for x in pts if 0.0 <= x <= 1.0)


def _panels_eval(f, p, a: np.ndarray, b: np.ndarray):
    half = 0.5 * (b - a)
    centre = 0.5 * (b + a)
    y = centre[:, None] + half[:, None] * _NODES[None, :]
    fy = f(p, y.ravel()).reshape(y.shape)
    kron = half * (fy @ _KW)
    gauss = half * (fy @ _GW)
    return kron, np.abs(kron - gauss)


def adaptive_integrate(
    f: Callable,
    p: ProfileParams,
    tol: float = DEFAULT_TOL,
    max_panels: int = DEFAULT_MAX_PANELS,
) -> QuadratureResult:
    """Globally adaptive Gauss-Kronrod 15/7 quadrature of ``f(p, y)`` over [0, 1].

    The panel with the largest error estimate is bisected until the summed
    estimate drops below ``tol * max(1, |value|)``.
    """
    if not tol > 0.0:
        raise ConfigError(f"tol must be positive (got {tol})")
    edges = np.array(breakpoints(p))
    a, b = edges[:-1], edges[1:]
    vals, errs = _panels_eval(f, p, a, b)
    evaluations = 15 * len(a)

    # panel id -> (a, b, value, error); ids keep heap ties deterministic
    panels = {i: (float(a[i]), float(b[i]), float(vals[i]), float(errs[i])) for i in range(len(a))}
    heap = [(-panels[i][3], i) for i in panels]
    heapq.heapify(heap)
    next_id = len(a)

    def totals():
        return (math.fsum(v[2] for v in panels.values()),
                math.fsum(v[3] for v in panels.values()))

    value, error = totals()
    while error > tol * max(1.0, abs(value)):
        if len(panels) >= max_panels:
            raise NonConvergence(
                f"panel budget {max_panels} exhausted (error {error:.3e}, A={p.A:g}, B={p.B:g})"
            )
        _, pid = heapq.heappop(heap)
        lo, hi, _, _ = panels.pop(pid)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise NonConvergence(f"panel [{lo!r}, {hi!r}] cannot be bisected further")
        cv, ce = _panels_eval(f, p, np.array([lo, mid]), np.array([mid, hi]))
        evaluations += 30
        for (l, r), v, e in zip(((lo, mid), (mid, hi)), cv, ce):
            panels[next_id] = (l, r, float(v), float(e))
            heapq.heappush(heap, (-float(e), next_id))
            next_id += 1
        value, error = totals()

    ordered = sorted(panels.values())
    value = math.fsum(v[2] for v in ordered)
    return QuadratureResult(value, error, evaluations, len(panels))


def rhs(p: ProfileParams, tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """Time derivatives (dA/dt, dB/dt) of the profile model at ``p``."""
    da = adaptive_integrate(integrand_a, p, tol).value
    db = adaptive_integrate(integrand_b, p, tol).value / p.K
    return da, db


def oracle_rhs_b0(A: float, K: float = 1.0) -> tuple[float, float]:
    """Closed-form (dA, dB) on the slice B = 0, where e^{-G} = a is constant."""
    if A < 0.0:
        raise ConfigError("oracle needs A >= 0")
    a = math.exp(-A)
    da = 1.0 / (2.0 * a) - a / (2.0 * (1.0 + a * a))
    db = (1.0 / (2.0 * a * (1.0 + a * a)) + math.atan(1.0 / a) / (2.0 * a * a)) / K
    return da, db
