"""Dormand-Prince 5(4) integrator with PI step control and dense output.

Small and explicit on purpose: the profile model needs per-step access
(monotonicity audits, event location by partial steps), which library
drivers do not expose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import StepFloor

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th-order minus embedded 4th-order weights (7th stage is the FSAL one)
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension: y(t + th) = y + h * K^T P [th, th^2, th^3, th^4]
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
# PI exponents (Hairer-Wanner dopri5 defaults)
ALPHA = 0.17
BETA = 0.04


def rk_step(fun: Callable, t: float, y: np.ndarray, f: np.ndarray, h: float):
    """One Dormand-Prince step. Returns (y_new, f_new, stages)."""
    K = np.empty((7, y.size))
    K[0] = f
    for s in range(1, 6):
        dy = h * (np.asarray(A[s]) @ K[:s])
        K[s] = fun(t + C[s] * h, y + dy)
    y_new = y + h * (B @ K[:6])
    f_new = fun(t + h, y_new)
    K[6] = f_new
    return y_new, f_new, K


@dataclass
class Step:
    """An accepted step with enough data to interpolate inside it."""

    t: float
    h: float
    y: np.ndarray
    y_new: np.ndarray
    K: np.ndarray

    @property
    def t_new(self) -> float:
        return self.t + self.h

    def dense(self, t) -> np.ndarray:
        theta = (np.asarray(t, dtype=float) - self.t) / self.h
        powers = np.stack([theta, theta**2, theta**3, theta**4])
        Q = self.K.T @ P
        return (self.y[:, None] + self.h * (Q @ powers.reshape(4, -1))).reshape(
            (self.y.size,) + np.shape(theta)
        )


class DormandPrince:
    """Adaptive integrator for ``y' = fun(t, y)``.

    ``tol`` is used as both absolute and relative tolerance and the error is
    measured in the max norm, so each accepted step satisfies
    ``|err_i| <= tol * (1 + max(|y_i|, |y_new_i|))``.
    """

    def __init__(self, fun: Callable, t0: float, y0, tol: float, h0: float | None = None,
                 step_floor: float = 1e-14):
        self.fun = fun
        self.t = float(t0)
        self.y = np.array(y0, dtype=float)
        self.f = np.asarray(fun(self.t, self.y), dtype=float)
        self.tol = float(tol)
        self.step_floor = step_floor
        if h0 is None:
            # seeded from the initial slope
            h0 = self.tol / max(float(np.max(np.abs(self.f))), 1e-300)
        self.h = float(h0)
        self.err_prev = 1.0
        self.nfev = 1
        self.rejected = 0

    def _error_norm(self, K, h, y_new) -> float:
        err = h * (E @ K)
        scale = self.tol * (1.0 + np.maximum(np.abs(self.y), np.abs(y_new)))
        return float(np.max(np.abs(err) / scale))

    def step(self, t_bound: float) -> Step:
        """Advance by one accepted step, never past ``t_bound``."""
        h = min(self.h, t_bound - self.t)
        while True:
            if h < self.step_floor * max(1.0, abs(self.t)):
                raise StepFloor(f"step size {h:.3e} below floor at t={self.t:.6e}")
            y_new, f_new, K = rk_step(self.fun, self.t, self.y, self.f, h)
            self.nfev += 6
            err = self._error_norm(K, h, y_new)
            if err <= 1.0:
                break
            self.rejected += 1
            h *= max(MIN_FACTOR, SAFETY * err ** (-1 / 5))
        if err == 0.0:
            factor = MAX_FACTOR
        else:
            factor = SAFETY * err ** (-ALPHA) * self.err_prev**BETA
            factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
        self.err_prev = max(err, 1e-4)
        step = Step(self.t, h, self.y.copy(), y_new, K)
        self.t = self.t + h
        if t_bound - self.t <= 1e-15 * max(1.0, abs(t_bound)):
            self.t = t_bound
        self.y = y_new
        self.f = f_new
        self.h = h * factor
        return step
