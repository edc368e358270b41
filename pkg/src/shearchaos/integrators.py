"""Time steppers that carry tangent vectors along with the state.

``rk4_step`` and ``rk4_flow_with_variational`` accept arbitrary vector fields
on numpy arrays. ``em_step`` is the Ito Euler-Maruyama step for the shear SDEs.
The compiled ``osc_*`` functions integrate the oscillator pair in bulk.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from numba import njit

from .models import CylinderState, SDEFields, OscParams, _osc_field, _osc_jac

Tangent2 = np.ndarray  # shape (2,)
Mat2 = np.ndarray  # shape (2, 2), row-major d(output)/d(input)


def rk4_step(field: Callable[[np.ndarray], np.ndarray], s: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of the autonomous ODE ``s' = field(s)``."""
    s = np.asarray(s, dtype=float)
    k1 = field(s)
    k2 = field(s + 0.5 * dt * k1)
    k3 = field(s + 0.5 * dt * k2)
    k4 = field(s + dt * k3)
    return s + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def rk4_flow_with_variational(field, jacobian, s, v, t: float, dt: float):
    """Integrate the state and the variational equation ``J' = Df(x(t)) J`` jointly.

    Args:
        field: ``s -> ds/dt``.
        jacobian: ``s -> Df(s)`` as a 2x2 array.
        s: initial state.
        v: a tangent vector, or a 2x2 matrix (pass the identity to get the
            Jacobian of the time-``t`` flow).
        t: total time, split into ``ceil(t / dt)`` equal steps.
        dt: maximal step.

    Returns:
        ``(state, propagated v)``.
    """
    if t < 0 or dt <= 0:
        raise ValueError("need t >= 0 and dt > 0")
    s = np.asarray(s, dtype=float).copy()
    v = np.asarray(v, dtype=float).copy()
    n = int(math.ceil(t / dt - 1e-12)) if t > 0 else 0
    if n == 0:
        return s, v
    h = t / n
    for _ in range(n):
        k1 = field(s)
        l1 = jacobian(s) @ v
        s2 = s + 0.5 * h * k1
        k2 = field(s2)
        l2 = jacobian(s2) @ (v + 0.5 * h * l1)
        s3 = s + 0.5 * h * k2
        k3 = field(s3)
        l3 = jacobian(s3) @ (v + 0.5 * h * l2)
        s4 = s + h * k3
        k4 = field(s4)
        l4 = jacobian(s4) @ (v + h * l3)
        s = s + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        v = v + h * (l1 + 2 * l2 + 2 * l3 + l4) / 6.0
    return s, v


def em_step(fields: Callable[[CylinderState], SDEFields], s: CylinderState, v: Tangent2,
            dt: float, rng: np.random.Generator | None = None,
            increments: np.ndarray | None = None) -> tuple[CylinderState, Tangent2]:
    """One Ito Euler-Maruyama step for state and tangent with shared increments.

    The Brownian increments are ``sqrt(dt) * rng.standard_normal(m)`` unless
    given explicitly through ``increments``.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    f = fields(s)
    m = len(f.columns)
    if increments is None:
        increments = math.sqrt(dt) * rng.standard_normal(m)
    x = s.as_array()
    v = np.asarray(v, dtype=float)
    x_new = x + f.drift * dt
    v_new = v + (f.drift_jacobian @ v) * dt
    for k in range(m):
        x_new = x_new + f.columns[k] * increments[k]
        v_new = v_new + (f.column_jacobians[k] @ v) * increments[k]
    return CylinderState(x_new[0], x_new[1]), v_new


# --------------------------------------------------------------------------
# compiled oscillator flow

@njit(cache=True, nogil=True)
def _osc_rk4_var_step(x1, x2, v1, v2, h, nu1, nu2, c1, c2, hw):
    a1, a2 = _osc_field(x1, x2, nu1, nu2, c1, c2, hw, 0.0)
    j11, j12, j21, j22 = _osc_jac(x1, x2, nu1, nu2, c1, c2, hw, 0.0)
    a3 = j11 * v1 + j12 * v2
    a4 = j21 * v1 + j22 * v2

    y1 = x1 + 0.5 * h * a1
    y2 = x2 + 0.5 * h * a2
    w1 = v1 + 0.5 * h * a3
    w2 = v2 + 0.5 * h * a4
    b1, b2 = _osc_field(y1, y2, nu1, nu2, c1, c2, hw, 0.0)
    j11, j12, j21, j22 = _osc_jac(y1, y2, nu1, nu2, c1, c2, hw, 0.0)
    b3 = j11 * w1 + j12 * w2
    b4 = j21 * w1 + j22 * w2

    y1 = x1 + 0.5 * h * b1
    y2 = x2 + 0.5 * h * b2
    w1 = v1 + 0.5 * h * b3
    w2 = v2 + 0.5 * h * b4
    c1_, c2_ = _osc_field(y1, y2, nu1, nu2, c1, c2, hw, 0.0)
    j11, j12, j21, j22 = _osc_jac(y1, y2, nu1, nu2, c1, c2, hw, 0.0)
    c3 = j11 * w1 + j12 * w2
    c4 = j21 * w1 + j22 * w2

    y1 = x1 + h * c1_
    y2 = x2 + h * c2_
    w1 = v1 + h * c3
    w2 = v2 + h * c4
    d1, d2 = _osc_field(y1, y2, nu1, nu2, c1, c2, hw, 0.0)
    j11, j12, j21, j22 = _osc_jac(y1, y2, nu1, nu2, c1, c2, hw, 0.0)
    d3 = j11 * w1 + j12 * w2
    d4 = j21 * w1 + j22 * w2

    return (x1 + h * (a1 + 2.0 * b1 + 2.0 * c1_ + d1) / 6.0,
            x2 + h * (a2 + 2.0 * b2 + 2.0 * c2_ + d2) / 6.0,
            v1 + h * (a3 + 2.0 * b3 + 2.0 * c3 + d3) / 6.0,
            v2 + h * (a4 + 2.0 * b4 + 2.0 * c4 + d4) / 6.0)


@njit(cache=True, nogil=True)
def _osc_rk4_step(x1, x2, h, nu1, nu2, c1, c2, hw):
    a1, a2 = _osc_field(x1, x2, nu1, nu2, c1, c2, hw, 0.0)
    b1, b2 = _osc_field(x1 + 0.5 * h * a1, x2 + 0.5 * h * a2, nu1, nu2, c1, c2, hw, 0.0)
    e1, e2 = _osc_field(x1 + 0.5 * h * b1, x2 + 0.5 * h * b2, nu1, nu2, c1, c2, hw, 0.0)
    d1, d2 = _osc_field(x1 + h * e1, x2 + h * e2, nu1, nu2, c1, c2, hw, 0.0)
    return (x1 + h * (a1 + 2.0 * b1 + 2.0 * e1 + d1) / 6.0,
            x2 + h * (a2 + 2.0 * b2 + 2.0 * e2 + d2) / 6.0)


@njit(cache=True, nogil=True)
def _osc_flow_points(pts, t, dt, nu1, nu2, c1, c2, hw):
    out = pts.copy()
    if t <= 0.0:
        return out
    n = int(math.ceil(t / dt - 1e-12))
    h = t / n
    for i in range(pts.shape[0]):
        x1 = pts[i, 0]
        x2 = pts[i, 1]
        for _ in range(n):
            x1, x2 = _osc_rk4_step(x1, x2, h, nu1, nu2, c1, c2, hw)
        out[i, 0] = x1
        out[i, 1] = x2
    return out


@njit(cache=True, nogil=True)
def _osc_flow_jacobians(pts, t, dt, nu1, nu2, c1, c2, hw):
    n_pts = pts.shape[0]
    jac = np.empty((n_pts, 2, 2))
    n = max(1, int(math.ceil(t / dt - 1e-12)))
    h = t / n
    for i in range(n_pts):
        for col in range(2):
            x1 = pts[i, 0]
            x2 = pts[i, 1]
            v1 = 1.0 if col == 0 else 0.0
            v2 = 1.0 - v1
            for _ in range(n):
                x1, x2, v1, v2 = _osc_rk4_var_step(x1, x2, v1, v2, h, nu1, nu2, c1, c2, hw)
            jac[i, 0, col] = v1
            jac[i, 1, col] = v2
    return jac


def _osc_args(p: OscParams):
    return p.nu1, p.nu2, p.drive_coupling, p.return_coupling, p.pulse_halfwidth


def osc_flow(points: np.ndarray, t: float, p: OscParams, dt: float = 1e-3) -> np.ndarray:
    """Flow an ``(n, 2)`` array of lifted points under the unforced oscillator pair."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    return _osc_flow_points(pts, float(t), float(dt), *_osc_args(p))


def osc_flow_jacobians(points: np.ndarray, t: float, p: OscParams, dt: float = 1e-3) -> np.ndarray:
    """Jacobians ``D Phi_t`` at each of ``points``; shape ``(n, 2, 2)``."""
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    return _osc_flow_jacobians(pts, float(t), float(dt), *_osc_args(p))
