"""Dynamical systems: the linear shear flow with its kicks and noise terms,
and the pulse-coupled pair of phase oscillators.

Phases live on the unit circle ``[0, 1)``. The scalar kernels prefixed with
an underscore are numba-compiled so the Lyapunov runners can call them in
their inner loops; the public functions wrap them with state records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi

NOISE_MODES = ("degenerate", "isotropic", "additive")


def wrap_phase(x: float) -> float:
    """Reduce ``x`` to ``[0, 1)``.

    Plain ``x % 1.0`` returns 1.0 for tiny negative inputs.
    """
    r = x % 1.0
    return 0.0 if r >= 1.0 else r


@dataclass(frozen=True)
class CylinderState:
    """A point ``(theta, y)`` of the cylinder S^1 x R."""

    theta: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_phase(float(self.theta)))
        object.__setattr__(self, "y", float(self.y))
        if not math.isfinite(self.y):
            raise ValueError(f"y must be finite, got {self.y}")

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.y])


@dataclass(frozen=True)
class TorusState:
    """A point ``(theta1, theta2)`` of the 2-torus."""

    theta1: float
    theta2: float

    def __post_init__(self):
        object.__setattr__(self, "theta1", wrap_phase(float(self.theta1)))
        object.__setattr__(self, "theta2", wrap_phase(float(self.theta2)))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])


@dataclass(frozen=True)
class ShearParams:
    """Parameters of the linear shear flow and its kicks.

    ``lam`` is the contraction rate (``lambda`` is reserved in Python).
    ``T`` is the kick period, or the mean kick interval for Poisson kicks.
    """

    sigma: float
    lam: float
    A: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("sigma", "lam", "A", "T"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.A < 0:
            raise ValueError(f"A must be >= 0, got {self.A}")
        if self.T <= 0:
            raise ValueError(f"T must be > 0, got {self.T}")


@dataclass(frozen=True)
class PoissonKickLaw:
    mean_interval: float
    base_amplitude: float
    band: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if self.mean_interval <= 0:
            raise ValueError("mean_interval must be > 0")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ValueError(f"invalid amplitude band {self.band}")


@dataclass(frozen=True)
class NoiseConfig:
    """White-noise forcing of the shear flow.

    ``degenerate`` drives only ``y`` with ``a sin(2 pi theta) dB``;
    ``isotropic`` drives both coordinates with independent sine-modulated
    channels; ``additive`` drives both with constant amplitude ``a``.
    """

    mode: str
    amplitude: float
    dt: float = 1e-5

    def __post_init__(self):
        if self.mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode {self.mode!r}; expected one of {NOISE_MODES}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    @property
    def channels(self) -> int:
        return 1 if self.mode == "degenerate" else 2

    @property
    def mode_code(self) -> int:
        return NOISE_MODES.index(self.mode)


@dataclass(frozen=True)
class OscParams:
    """Pulse-coupled oscillator pair.

    The external input drives oscillator 1. ``a_ff`` couples oscillator 1
    into oscillator 2 and ``a_fb`` couples 2 back into 1, so the driven
    equation carries ``a_fb * g(theta2)``. Set ``labels_as_printed`` to put
    ``a_ff`` in the driven equation instead; that ordering does not phase-lock
    as ``a_fb`` grows (see README).
    """

    nu1: float = 1.0
    nu2: float = 1.1
    a_ff: float = 1.0
    a_fb: float = 1.47
    pulse_halfwidth: float = 0.05
    labels_as_printed: bool = False

    def __post_init__(self):
        if not 0 < self.pulse_halfwidth < 0.5:
            raise ValueError("pulse_halfwidth must lie in (0, 1/2)")

    @property
    def drive_coupling(self) -> float:
        """Coefficient of ``g(theta2)`` in the driven oscillator's equation."""
        return self.a_ff if self.labels_as_printed else self.a_fb

    @property
    def return_coupling(self) -> float:
        """Coefficient of ``g(theta1)`` in the second oscillator's equation."""
        return self.a_fb if self.labels_as_printed else self.a_ff


# --------------------------------------------------------------------------
# shear flow

@njit(cache=True, nogil=True)
def _shear_flow(theta, y, t, sigma, lam):
    e = math.exp(-lam * t)
    th = theta + t + (sigma / lam) * y * (1.0 - e)
    return th, y * e


def shear_flow_map(s: CylinderState, t: float, p: ShearParams) -> CylinderState:
    """Exact time-``t`` map of the unforced shear flow."""
    if t < 0:
        raise ValueError("t must be >= 0")
    th, y = _shear_flow(s.theta, s.y, t, p.sigma, p.lam)
    return CylinderState(th, y)


def shear_flow_jacobian(t: float, p: ShearParams) -> np.ndarray:
    if t < 0:
        raise ValueError("t must be >= 0")
    e = math.exp(-p.lam * t)
    return np.array([[1.0, (p.sigma / p.lam) * (1.0 - e)], [0.0, e]])


def shear_flow_lifted(points: np.ndarray, t: float, p: ShearParams) -> np.ndarray:
    """Flow an ``(n, 2)`` array of lifted points; theta is not reduced."""
    pts = np.asarray(points, dtype=float)
    e = math.exp(-p.lam * t)
    out = np.empty_like(pts)
    out[:, 0] = pts[:, 0] + t + (p.sigma / p.lam) * pts[:, 1] * (1.0 - e)
    out[:, 1] = pts[:, 1] * e
    return out


def kick_map_sine(s: CylinderState, amplitude: float) -> tuple[CylinderState, np.ndarray]:
    """Kick ``y`` by ``amplitude * sin(2 pi theta)``; returns image and Jacobian."""
    arg = TWO_PI * s.theta
    jac = np.array([[1.0, 0.0], [TWO_PI * amplitude * math.cos(arg), 1.0]])
    return CylinderState(s.theta, s.y + amplitude * math.sin(arg)), jac


def kicked_time_T_map(s: CylinderState, p: ShearParams) -> tuple[CylinderState, np.ndarray]:
    """One period of the kicked flow: kick, then relax for ``p.T``."""
    kicked, jk = kick_map_sine(s, p.A)
    return shear_flow_map(kicked, p.T, p), shear_flow_jacobian(p.T, p) @ jk


def sample_kick_schedule(law: PoissonKickLaw, horizon: float,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Poisson kick times in ``[0, horizon]`` with uniform random amplitudes.

    Gaps are exponential with mean ``law.mean_interval``. Returns the arrays
    ``(times, amplitudes)``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    times = []
    t = 0.0
    block = max(16, int(1.2 * horizon / law.mean_interval) + 16)
    while True:
        gaps = rng.exponential(law.mean_interval, size=block)
        cum = t + np.cumsum(gaps)
        keep = cum[cum <= horizon]
        times.append(keep)
        if keep.size < block:
            break
        t = float(cum[-1])
    times = np.concatenate(times)
    lo, hi = law.band
    amps = law.base_amplitude * rng.uniform(lo, hi, size=times.size)
    return times, amps


class SDEFields(NamedTuple):
    drift: np.ndarray
    drift_jacobian: np.ndarray
    columns: list
    column_jacobians: list


def sde_fields(s: CylinderState, p: ShearParams, n: NoiseConfig) -> SDEFields:
    """Drift, diffusion columns and their exact state derivatives (Ito form)."""
    th, y = s.theta, s.y
    drift = np.array([1.0 + p.sigma * y, -p.lam * y])
    ddrift = np.array([[0.0, p.sigma], [0.0, -p.lam]])
    a = n.amplitude
    sn = a * math.sin(TWO_PI * th)
    dsn = TWO_PI * a * math.cos(TWO_PI * th)
    if n.mode == "degenerate":
        cols = [np.array([0.0, sn])]
        dcols = [np.array([[0.0, 0.0], [dsn, 0.0]])]
    elif n.mode == "isotropic":
        cols = [np.array([sn, 0.0]), np.array([0.0, sn])]
        dcols = [np.array([[dsn, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [dsn, 0.0]])]
    else:
        cols = [np.array([a, 0.0]), np.array([0.0, a])]
        dcols = [np.zeros((2, 2)), np.zeros((2, 2))]
    return SDEFields(drift, ddrift, cols, dcols)


# --------------------------------------------------------------------------
# coupled oscillators

@njit(cache=True, nogil=True)
def _bump(x, h):
    # raised cosine on [-h, h], unit mass
    x = x - math.floor(x + 0.5)
    if abs(x) >= h:
        return 0.0
    return (1.0 + math.cos(math.pi * x / h)) / (2.0 * h)


@njit(cache=True, nogil=True)
def _bump_deriv(x, h):
    x = x - math.floor(x + 0.5)
    if abs(x) >= h:
        return 0.0
    return -math.pi * math.sin(math.pi * x / h) / (2.0 * h * h)


@njit(cache=True, nogil=True)
def _sens(x):
    return (1.0 - math.cos(TWO_PI * x)) / TWO_PI


@njit(cache=True, nogil=True)
def _sens_deriv(x):
    return math.sin(TWO_PI * x)


@njit(cache=True, nogil=True)
def _osc_field(x1, x2, nu1, nu2, c1, c2, h, inp):
    f1 = nu1 + _sens(x1) * (c1 * _bump(x2, h) + inp)
    f2 = nu2 + _sens(x2) * c2 * _bump(x1, h)
    return f1, f2


@njit(cache=True, nogil=True)
def _osc_jac(x1, x2, nu1, nu2, c1, c2, h, inp):
    j11 = _sens_deriv(x1) * (c1 * _bump(x2, h) + inp)
    j12 = _sens(x1) * c1 * _bump_deriv(x2, h)
    j21 = _sens(x2) * c2 * _bump_deriv(x1, h)
    j22 = _sens_deriv(x2) * c2 * _bump(x1, h)
    return j11, j12, j21, j22


def bump(x, halfwidth: float = 0.05):
    """Pulse profile ``g``: raised cosine supported on ``[-halfwidth, halfwidth]`` mod 1."""
    x = np.asarray(x, dtype=float)
    d = x - np.floor(x + 0.5)
    out = np.where(np.abs(d) < halfwidth,
                   (1.0 + np.cos(np.pi * d / halfwidth)) / (2.0 * halfwidth), 0.0)
    return out if out.ndim else float(out)


def sensitivity(x):
    """Phase response ``z(theta) = (1 - cos 2 pi theta) / 2 pi``."""
    return (1.0 - np.cos(TWO_PI * np.asarray(x, dtype=float))) / TWO_PI


def osc_vector_field(s: TorusState, p: OscParams, input: float = 0.0) -> np.ndarray:
    f1, f2 = _osc_field(s.theta1, s.theta2, p.nu1, p.nu2, p.drive_coupling,
                        p.return_coupling, p.pulse_halfwidth, input)
    return np.array([f1, f2])


def osc_vector_field_jacobian(s: TorusState, p: OscParams, input: float = 0.0) -> np.ndarray:
    j = _osc_jac(s.theta1, s.theta2, p.nu1, p.nu2, p.drive_coupling,
                 p.return_coupling, p.pulse_halfwidth, input)
    return np.array([[j[0], j[1]], [j[2], j[3]]])


@njit(cache=True, nogil=True)
def _osc_kick(x, A):
    """Kick phase ``x`` (any real) by strength ``A``; returns new phase and d(new)/d(old).

    The integer part of ``x`` is kept, so lifts stay continuous.
    """
    base = math.floor(x)
    f = x - base
    if f == 0.0 or A == 0.0:
        return x, 1.0
    s = math.sin(math.pi * f)
    c = math.cos(math.pi * f) / s - A
    fn = (0.5 * math.pi - math.atan(c)) / math.pi
    d = math.sin(math.pi * fn) / s
    return base + fn, d * d


def osc_kick_map(s: TorusState, A: float) -> TorusState:
    """Instantaneous kick of oscillator 1.

    Equivalent to flowing ``d theta/du = A z(theta)`` for unit time, solved in
    closed form: ``cot(pi theta') = cot(pi theta) - A``. Phase 0 is fixed.
    """
    x, _ = _osc_kick(s.theta1, A)
    return TorusState(x, s.theta2)


def osc_kick_jacobian(s: TorusState, A: float) -> np.ndarray:
    _, d = _osc_kick(s.theta1, A)
    return np.array([[d, 0.0], [0.0, 1.0]])
