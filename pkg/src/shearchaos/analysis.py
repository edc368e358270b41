"""Geometric diagnostics: singular-limit circle maps, rotation numbers,
kicked-curve evolution and finite-time stable foliations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, TextIO

import numpy as np
from numba import njit
from scipy.optimize import brentq, minimize_scalar

from .integrators import _osc_rk4_step, osc_flow, osc_flow_jacobians
from .models import (TWO_PI, OscParams, ShearParams, _osc_kick, shear_flow_jacobian,
                     shear_flow_lifted, wrap_phase)

INVERTIBLE = "invertible"
WEAK = "weak-expansion"
STRONG = "strong-expansion"


def _sin_profile(x):
    return np.sin(TWO_PI * x)


def _sin_profile_deriv(x):
    return TWO_PI * np.cos(TWO_PI * x)


@dataclass(frozen=True)
class CircleMapProfile:
    """``f(theta) = theta + drift + gain * H(theta)`` mod 1.

    For the kicked shear flow ``gain = (sigma / lam) * A``.
    """

    drift: float
    gain: float
    profile: Callable = _sin_profile
    profile_deriv: Callable = _sin_profile_deriv

    def __post_init__(self):
        if self.gain < 0:
            raise ValueError("gain must be >= 0")

    @classmethod
    def from_shear(cls, p: ShearParams, drift: float = 0.0) -> "CircleMapProfile":
        return cls(drift, p.sigma / p.lam * p.A)

    def derivative(self, theta):
        return 1.0 + self.gain * self.profile_deriv(theta)


def singular_limit_map(theta, prof: CircleMapProfile):
    """Infinite-relaxation limit of kick-then-flow, as a circle map."""
    out = np.mod(np.asarray(theta, dtype=float) + prof.drift + prof.gain * prof.profile(theta), 1.0)
    out = np.where(out >= 1.0, 0.0, out)
    return out if out.ndim else float(out)


def _min_derivative(prof: CircleMapProfile, n_grid: int) -> float:
    xs = np.arange(n_grid) / n_grid
    d = prof.derivative(xs)
    i = int(np.argmin(d))
    h = 1.0 / n_grid
    res = minimize_scalar(lambda x: float(prof.derivative(x)), bounds=(xs[i] - h, xs[i] + h),
                          method="bounded", options={"xatol": 1e-13})
    return min(float(d[i]), float(res.fun))


def critical_points(prof: CircleMapProfile, n_grid: int = 4096) -> np.ndarray:
    """Zeros of ``f'`` on the circle, located by sign change and refined."""
    xs = np.arange(n_grid + 1) / n_grid
    d = prof.derivative(xs)
    roots = []
    for i in range(n_grid):
        if d[i] == 0.0:
            roots.append(xs[i])
        elif d[i] * d[i + 1] < 0:
            roots.append(brentq(lambda x: float(prof.derivative(x)), xs[i], xs[i + 1], xtol=1e-14))
    return np.mod(np.array(roots), 1.0)


def expansion_statistic(prof: CircleMapProfile, critical_radius: float = 0.05,
                        n_grid: int = 8192) -> float:
    """Mean of ``log|f'|`` over the circle minus neighborhoods of the critical points."""
    xs = (np.arange(n_grid) + 0.5) / n_grid
    crit = critical_points(prof)
    keep = np.ones(n_grid, dtype=bool)
    for c in crit:
        dist = np.abs(xs - c)
        dist = np.minimum(dist, 1.0 - dist)
        keep &= dist > critical_radius
    if not keep.any():
        return float("-inf")
    return float(np.mean(np.log(np.abs(prof.derivative(xs[keep])))))


def classify_regime(prof: CircleMapProfile, expansion_threshold: float = 0.5,
                    critical_radius: float = 0.05, n_grid: int = 4096) -> str:
    """Sort a singular-limit map into one of three regimes.

    ``invertible`` when ``f'`` stays positive (the attractor is an invariant
    circle); otherwise ``strong-expansion`` if the expansion away from the
    critical points exceeds ``expansion_threshold``, else ``weak-expansion``.
    """
    if _min_derivative(prof, n_grid) > 0.0:
        return INVERTIBLE
    stat = expansion_statistic(prof, critical_radius)
    return STRONG if stat > expansion_threshold else WEAK


# --------------------------------------------------------------------------
# rotation number

@njit(cache=True, nogil=True)
def _rotation_kernel(x1, x2, n_returns, dt, transient, max_time, nu1, nu2, c1, c2, hw):
    t = 0.0
    while t < transient:
        x1, x2 = _osc_rk4_step(x1, x2, dt, nu1, nu2, c1, c2, hw)
        t += dt
    count = 0
    first = 0.0
    last = 0.0
    t = 0.0
    while count <= n_returns:
        if t > max_time:
            return np.nan, count
        n1, n2 = _osc_rk4_step(x1, x2, dt, nu1, nu2, c1, c2, hw)
        if math.floor(n2) > math.floor(x2):
            target = math.floor(n2)
            lo = 0.0
            hi = dt
            while hi - lo > 1e-10:
                mid = 0.5 * (lo + hi)
                m1, m2 = _osc_rk4_step(x1, x2, mid, nu1, nu2, c1, c2, hw)
                if m2 >= target:
                    hi = mid
                else:
                    lo = mid
            c_1, _ = _osc_rk4_step(x1, x2, hi, nu1, nu2, c1, c2, hw)
            if count == 0:
                first = c_1
            last = c_1
            count += 1
        x1 = n1
        x2 = n2
        t += dt
    return (last - first) / n_returns, count


def rotation_number(p: OscParams, n_returns: int = 1000, dt: float = 1e-3,
                    transient: float = 200.0, start=(0.3, 0.1)) -> float:
    """Mean advance of theta1 per return of the unforced flow to ``theta2 = 0``.

    Crossings are located by bisection on the RK4 substep to 1e-10 in time.
    """
    if n_returns < 100:
        raise ValueError("n_returns must be >= 100")
    max_time = 50.0 * n_returns / max(p.nu2, 1e-12)
    rho, count = _rotation_kernel(float(start[0]), float(start[1]), n_returns, dt, transient,
                                  max_time, p.nu1, p.nu2, p.drive_coupling, p.return_coupling,
                                  p.pulse_halfwidth)
    if not math.isfinite(rho):
        raise RuntimeError(f"trajectory returned to theta2 = 0 only {count} times")
    return float(rho)


# --------------------------------------------------------------------------
# curves

@dataclass(frozen=True)
class Polyline:
    """Ordered lifted points (no mod-1 reduction) at a given time."""

    points: np.ndarray
    time: float = 0.0
    truncated: bool = False
    terminated: str = ""

    def __len__(self):
        return len(self.points)

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


def _flow_points(p, pts: np.ndarray, t: float, dt: float) -> np.ndarray:
    if isinstance(p, ShearParams):
        return shear_flow_lifted(pts, t, p)
    return osc_flow(pts, t, p, dt)


def _kick_points(p, pts: np.ndarray, A: float) -> np.ndarray:
    out = np.array(pts, dtype=float)
    if isinstance(p, ShearParams):
        out[:, 1] += A * np.sin(TWO_PI * out[:, 0])
    else:
        for i in range(len(out)):
            out[i, 0] = _osc_kick(out[i, 0], A)[0]
    return out


def _refined_image(src: np.ndarray, mapping: Callable, tol: float, max_vertices: int):
    src = np.array(src, dtype=float)
    img = mapping(src)
    truncated = False
    while True:
        gaps = np.linalg.norm(np.diff(img, axis=0), axis=1)
        bad = np.flatnonzero(gaps > tol)
        if bad.size == 0:
            break
        room = max_vertices - len(src)
        if room <= 0:
            truncated = True
            break
        if bad.size > room:
            bad = bad[:room]
            truncated = True
        mids = 0.5 * (src[bad] + src[bad + 1])
        new = mapping(mids)
        src = np.insert(src, bad + 1, mids, axis=0)
        img = np.insert(img, bad + 1, new, axis=0)
        if truncated:
            break
    return src, img, truncated


def evolve_curve(c: Polyline, t: float, p, refine_tol: float, max_vertices: int = 50_000,
                 dt: float = 1e-3) -> Polyline:
    """Flow every vertex for time ``t``, inserting preimage midpoints until
    adjacent image vertices are within ``refine_tol``.

    If the vertex budget runs out the partial result comes back with
    ``truncated=True``.
    """
    if refine_tol <= 0:
        raise ValueError("refine_tol must be > 0")
    if t == 0:
        return c
    _, img, trunc = _refined_image(c.points, lambda q: _flow_points(p, q, t, dt),
                                   refine_tol, max_vertices)
    return Polyline(img, c.time + t, trunc or c.truncated)


def kick_curve(c: Polyline, p, A: float, refine_tol: float, max_vertices: int = 50_000) -> Polyline:
    """Image of a curve under the model's instantaneous kick of strength ``A``."""
    _, img, trunc = _refined_image(c.points, lambda q: _kick_points(p, q, A), refine_tol,
                                   max_vertices)
    return Polyline(img, c.time, trunc or c.truncated)


def orbit_segment(p: OscParams, start=(0.3, 0.1), transient: float = 100.0, span: float = 1.0,
                  spacing: float = 0.01, dt: float = 1e-3) -> Polyline:
    """Lifted orbit piece from one crossing of ``theta2 = 0`` until theta2 has advanced by ``span``.

    After a long transient in the phase-locked regime this is a lift of the
    limit cycle between ``theta2 = 0`` and ``theta2 = 1``.
    """
    x = osc_flow(np.array([start], dtype=float), transient, p, dt)[0]
    x = x - np.floor(x)
    # advance to the next theta2 crossing
    target = 1.0
    while True:
        nxt = osc_flow(x[None, :], spacing, p, dt)[0]
        if nxt[1] >= target:
            lo, hi = 0.0, spacing
            while hi - lo > 1e-12:
                mid = 0.5 * (lo + hi)
                if osc_flow(x[None, :], mid, p, dt)[0][1] >= target:
                    hi = mid
                else:
                    lo = mid
            x = osc_flow(x[None, :], hi, p, dt)[0]
            break
        x = nxt
    x = x - np.floor(x)
    pts = [x]
    end = x[1] + span
    while pts[-1][1] < end:
        pts.append(osc_flow(pts[-1][None, :], spacing, p, dt)[0])
    return Polyline(np.array(pts))


def kick_fixed_point(c: Polyline) -> np.ndarray:
    """First point on a lifted curve with theta1 an integer (unmoved by any kick)."""
    x = c.points[:, 0]
    fl = np.floor(x)
    on = np.flatnonzero(x == fl)
    if on.size:
        return c.points[on[0]].copy()
    cross = np.flatnonzero(np.diff(fl) != 0)
    if cross.size == 0:
        raise ValueError("curve never meets theta1 = 0")
    i = cross[0]
    k = max(fl[i], fl[i + 1])
    s = (k - x[i]) / (x[i + 1] - x[i])
    return c.points[i] + s * (c.points[i + 1] - c.points[i])


def to_moving_frame(c: Polyline, ref_now: np.ndarray, ref_then: np.ndarray) -> Polyline:
    """Translate so the reference trajectory stays at its initial position."""
    return replace(c, points=c.points - ref_now + ref_then)


@dataclass(frozen=True)
class Snapshot:
    time: float
    orbit: Polyline
    kicked: Polyline
    reference: np.ndarray


def kicked_snapshots(p, A: float, times: Sequence[float], curve: Polyline | None = None,
                     refine_tol: float = 0.01, moving_frame: bool = True,
                     max_vertices: int = 50_000, dt: float = 1e-3) -> list[Snapshot]:
    """A curve and its kicked image, flowed to each of ``times``.

    For the oscillator pair the default curve is an orbit segment over one lap
    of theta2; for the shear flow it is the limit cycle ``y = 0``. The
    reference trajectory is the kick-invariant point on the curve.
    """
    if curve is None:
        if isinstance(p, ShearParams):
            xs = np.linspace(0.0, 1.0, 201)
            curve = Polyline(np.column_stack([xs, np.zeros_like(xs)]))
        else:
            curve = orbit_segment(p, dt=dt)
    ref0 = kick_fixed_point(curve) if isinstance(p, OscParams) else curve.points[0].copy()
    kicked = kick_curve(curve, p, A, refine_tol, max_vertices)
    out = []
    for t in times:
        orb = evolve_curve(curve, t, p, refine_tol, max_vertices, dt)
        kic = evolve_curve(kicked, t, p, refine_tol, max_vertices, dt)
        ref = _flow_points(p, ref0[None, :], t, dt)[0] if t > 0 else ref0
        if moving_frame:
            orb = to_moving_frame(orb, ref, ref0)
            kic = to_moving_frame(kic, ref, ref0)
        out.append(Snapshot(float(t), orb, kic, ref))
    return out


# --------------------------------------------------------------------------
# finite-time stable directions

class DegenerateDirectionError(ValueError):
    """The two singular values coincide, so no unique contracted direction exists."""


def _sign_normalize(v: np.ndarray) -> np.ndarray:
    if v[1] < 0 or (v[1] == 0 and v[0] < 0):
        return -v
    return v


def most_contracted_direction(J, rtol: float = 1e-6) -> np.ndarray:
    """Unit vector ``v`` minimizing ``|J v|``, with ``v[1] >= 0``.

    Raises DegenerateDirectionError when the singular values agree to ``rtol``.
    """
    J = np.asarray(J, dtype=float)
    _, s, vt = np.linalg.svd(J)
    if s[0] < (1.0 + rtol) * s[1]:
        raise DegenerateDirectionError(f"singular values {s[0]:.6g} and {s[1]:.6g} coincide")
    v = vt[1]
    return _sign_normalize(v / np.linalg.norm(v))


def contracted_directions(jacs: np.ndarray):
    """Vectorized :func:`most_contracted_direction`; returns (directions, ratio)."""
    _, s, vt = np.linalg.svd(np.asarray(jacs, dtype=float))
    v = vt[..., 1, :]
    flip = (v[..., 1] < 0) | ((v[..., 1] == 0) & (v[..., 0] < 0))
    v = np.where(flip[..., None], -v, v)
    with np.errstate(divide="ignore"):
        ratio = s[..., 0] / s[..., 1]
    return v, ratio


@dataclass(frozen=True)
class FoliationField:
    xs: np.ndarray
    ys: np.ndarray
    t: float
    directions: np.ndarray  # (ny, nx, 2)
    ratio: np.ndarray  # (ny, nx)
    degenerate: np.ndarray  # (ny, nx) bool

    def northeast_fraction(self) -> float:
        """Share of non-degenerate nodes whose line field rises to the right."""
        ok = ~self.degenerate
        d = self.directions[ok]
        return float(np.mean(d[:, 0] * d[:, 1] > 0)) if d.size else float("nan")


def foliation_field(region, t: float, p, grid=(41, 41), dt: float = 1e-3,
                    rtol: float = 1e-6) -> FoliationField:
    """Most contracted direction of ``D Phi_t`` at every node of a grid.

    ``region`` is ``(x0, x1, y0, y1)`` in lifted coordinates.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    x0, x1, y0, y1 = region
    nx, ny = grid
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(xs, ys)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if isinstance(p, ShearParams):
        jacs = np.broadcast_to(shear_flow_jacobian(t, p), (len(pts), 2, 2))
    else:
        jacs = osc_flow_jacobians(pts, t, p, dt)
    dirs, ratio = contracted_directions(jacs)
    dirs = dirs.reshape(ny, nx, 2)
    ratio = ratio.reshape(ny, nx)
    return FoliationField(xs, ys, float(t), dirs, ratio, ratio < 1.0 + rtol)


class _LineField:
    """Bilinear interpolation of the projector ``v v^T`` between grid nodes."""

    def __init__(self, f: FoliationField):
        self.f = f
        d = f.directions
        self.pxx = d[..., 0] ** 2
        self.pxy = d[..., 0] * d[..., 1]
        self.pyy = d[..., 1] ** 2

    def __call__(self, x: float, y: float):
        f = self.f
        xs, ys = f.xs, f.ys
        if not (xs[0] <= x <= xs[-1] and ys[0] <= y <= ys[-1]):
            return None, "boundary"
        i = min(max(int(np.searchsorted(xs, x) - 1), 0), len(xs) - 2)
        j = min(max(int(np.searchsorted(ys, y) - 1), 0), len(ys) - 2)
        if f.degenerate[j:j + 2, i:i + 2].any():
            return None, "degenerate"
        u = (x - xs[i]) / (xs[i + 1] - xs[i])
        w = (y - ys[j]) / (ys[j + 1] - ys[j])
        wts = np.array([[(1 - u) * (1 - w), u * (1 - w)], [(1 - u) * w, u * w]])
        a = float((self.pxx[j:j + 2, i:i + 2] * wts).sum())
        b = float((self.pxy[j:j + 2, i:i + 2] * wts).sum())
        c = float((self.pyy[j:j + 2, i:i + 2] * wts).sum())
        evals, evecs = np.linalg.eigh(np.array([[a, b], [b, c]]))
        return evecs[:, 1], ""


def _trace_one(lf: _LineField, seed, step: float, max_steps: int, sign: float):
    x = np.array(seed, dtype=float)
    d0, why = lf(*x)
    if d0 is None:
        return [x], why
    prev = sign * _sign_normalize(d0)
    pts = [x.copy()]
    for _ in range(max_steps):
        d1, why = lf(*x)
        if d1 is None:
            return pts, why
        if d1 @ prev < 0:
            d1 = -d1
        mid = x + 0.5 * step * d1
        d2, why = lf(*mid)
        if d2 is None:
            return pts, why
        if d2 @ d1 < 0:
            d2 = -d2
        x = x + step * d2
        prev = d2
        pts.append(x.copy())
    return pts, "max_steps"


def trace_stable_foliation(region, t: float, p, grid=(41, 41), seeds=(), step: float = 0.005,
                           max_steps: int = 4000, dt: float = 1e-3,
                           field: FoliationField | None = None) -> list[Polyline]:
    """Time-``t`` stable manifolds through each seed point.

    Curves follow the most contracted direction of ``D Phi_t`` with a
    midpoint rule at fixed arclength ``step``, in both directions from the
    seed, and stop at the region boundary or at a degenerate node. The stop
    reasons are joined in ``Polyline.terminated`` as ``"backward|forward"``.
    """
    if field is None:
        field = foliation_field(region, t, p, grid, dt)
    lf = _LineField(field)
    out = []
    for s in seeds:
        back, why_b = _trace_one(lf, s, step, max_steps, -1.0)
        fwd, why_f = _trace_one(lf, s, step, max_steps, 1.0)
        pts = np.array(back[::-1] + fwd[1:])
        out.append(Polyline(pts, float(t), truncated="degenerate" in (why_b, why_f),
                            terminated=f"{why_b}|{why_f}"))
    return out


# --------------------------------------------------------------------------
# plain-text tables

def write_polylines(fh: TextIO, curves: Sequence[Polyline], header: Sequence[str] = ()) -> None:
    """One point per line: ``x y curve_id flags``; ``#`` lines carry metadata."""
    for h in header:
        fh.write(f"# {h}\n")
    fh.write("# x y curve_id flags\n")
    for cid, c in enumerate(curves):
        flags = []
        if c.truncated:
            flags.append("truncated")
        if c.terminated:
            flags.append(c.terminated)
        flag = ",".join(flags) or "-"
        for x, y in c.points:
            fh.write(f"{x:.10g} {y:.10g} {cid} {flag}\n")


def write_field(fh: TextIO, f: FoliationField, header: Sequence[str] = ()) -> None:
    for h in header:
        fh.write(f"# {h}\n")
    fh.write("# x y dx dy ratio degenerate\n")
    for j, y in enumerate(f.ys):
        for i, x in enumerate(f.xs):
            d = f.directions[j, i]
            fh.write(f"{x:.10g} {y:.10g} {d[0]:.10g} {d[1]:.10g} {f.ratio[j, i]:.10g} "
                     f"{int(f.degenerate[j, i])}\n")


def read_polylines(fh: TextIO) -> list[np.ndarray]:
    curves: dict[int, list] = {}
    for line in fh:
        if not line.strip() or line.startswith("#"):
            continue
        x, y, cid, _ = line.split()
        curves.setdefault(int(cid), []).append((float(x), float(y)))
    return [np.array(curves[k]) for k in sorted(curves)]
