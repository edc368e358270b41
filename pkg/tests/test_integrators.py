import math

import numpy as np
import pytest

from shearchaos.integrators import (em_step, osc_flow, osc_flow_jacobians, rk4_flow_with_variational,
                                    rk4_step)
from shearchaos.lyapunov import _sde_shear_chunk
from shearchaos.models import (CylinderState, NoiseConfig, OscParams, ShearParams, TorusState,
                               osc_vector_field, osc_vector_field_jacobian, sde_fields,
                               shear_flow_jacobian, shear_flow_lifted)

P = ShearParams(2.0, 1.0)


def shear_drift(s):
    return np.array([1.0 + P.sigma * s[1], -P.lam * s[1]])


def shear_drift_jac(s):
    return np.array([[0.0, P.sigma], [0.0, -P.lam]])


def test_rk4_constant_field():
    out = rk4_step(lambda s: np.array([1.0, 1.1]), np.array([0.2, 0.3]), 0.5)
    assert out == pytest.approx([0.7, 0.85], abs=1e-15)


def test_rk4_zero_field():
    s = np.array([0.2, -0.3])
    assert np.array_equal(rk4_step(lambda x: np.zeros(2), s, 0.1), s)


def test_rk4_fourth_order_on_shear():
    s0 = np.array([0.3, 0.1])
    exact = shear_flow_lifted(s0[None, :], 1.0, P)[0]
    errs = []
    for n in (10, 20, 40):
        s = s0.copy()
        for _ in range(n):
            s = rk4_step(shear_drift, s, 1.0 / n)
        errs.append(np.abs(s - exact).max())
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(13 < r < 19 for r in ratios), ratios


def test_variational_matches_closed_jacobian():
    s, J = rk4_flow_with_variational(shear_drift, shear_drift_jac, [0.3, 0.1], np.eye(2), 1.0, 1e-3)
    assert np.abs(J - shear_flow_jacobian(1.0, P)).max() < 1e-8
    assert s == pytest.approx(shear_flow_lifted(np.array([[0.3, 0.1]]), 1.0, P)[0], abs=1e-10)


def test_variational_zero_field_and_zero_time():
    v = np.array([0.3, -2.0])
    _, w = rk4_flow_with_variational(lambda s: np.zeros(2), lambda s: np.zeros((2, 2)),
                                     [0.1, 0.2], v, 3.0, 0.1)
    assert np.array_equal(w, v)
    s, w = rk4_flow_with_variational(shear_drift, shear_drift_jac, [0.1, 0.2], v, 0.0, 0.1)
    assert np.array_equal(w, v) and list(s) == [0.1, 0.2]


def test_variational_oscillator_vs_finite_differences():
    p = OscParams(a_ff=1.0, a_fb=1.47)

    def field(s):
        return osc_vector_field(TorusState(s[0], s[1]), p)

    def jac(s):
        return osc_vector_field_jacobian(TorusState(s[0], s[1]), p)

    x0, t, dt, h = np.array([0.93, 0.97]), 1.5, 1e-3, 1e-6
    _, J = rk4_flow_with_variational(field, jac, x0, np.eye(2), t, dt)
    cols = []
    for e in np.eye(2):
        plus = osc_flow(x0 + h * e, t, p, dt)[0]
        minus = osc_flow(x0 - h * e, t, p, dt)[0]
        cols.append((plus - minus) / (2 * h))
    fd = np.column_stack(cols)
    assert np.abs(J - fd).max() < 1e-5
    # the pulse actually fires along this stretch, so the check is not trivial
    assert np.abs(J - np.eye(2)).max() > 0.1
    Jc = osc_flow_jacobians(x0, t, p, dt)[0]
    assert np.abs(Jc - J).max() < 1e-10


def test_em_zero_diffusion_is_euler():
    n = NoiseConfig("degenerate", 0.0, 1e-3)
    s0, v0 = CylinderState(0.3, 0.2), np.array([1.0, 0.5])
    s, v = em_step(lambda x: sde_fields(x, P, n), s0, v0, 1e-3, np.random.default_rng(0))
    assert s.theta == pytest.approx(0.3 + (1 + 2 * 0.2) * 1e-3, abs=1e-15)
    assert s.y == pytest.approx(0.2 - 0.2e-3, abs=1e-15)
    assert v == pytest.approx(v0 + shear_drift_jac(None) @ v0 * 1e-3, abs=1e-15)


def test_em_additive_tangent_is_noise_free():
    n = NoiseConfig("additive", 0.8, 1e-3)
    v0 = np.array([0.2, 1.0])
    _, v = em_step(lambda x: sde_fields(x, P, n), CylinderState(0.3, 0.2), v0, 1e-3,
                   np.random.default_rng(5))
    assert np.array_equal(v, v0 + (shear_drift_jac(None) @ v0) * 1e-3)


def test_em_shared_increments():
    n = NoiseConfig("isotropic", 0.5, 1e-3)
    s0, v0 = CylinderState(0.1, 0.2), np.array([1.0, 0.0])
    dB = np.array([0.03, -0.02])
    s, v = em_step(lambda x: sde_fields(x, P, n), s0, v0, 1e-3, increments=dB)
    sn, cs = math.sin(2 * math.pi * 0.1), math.cos(2 * math.pi * 0.1)
    assert s.theta == pytest.approx(0.1 + 1.4e-3 + 0.5 * sn * 0.03, abs=1e-15)
    assert s.y == pytest.approx(0.2 - 0.2e-3 + 0.5 * sn * -0.02, abs=1e-15)
    k = 2 * math.pi * 0.5 * cs
    assert v == pytest.approx([1.0 + k * 0.03, k * -0.02], abs=1e-15)


def test_em_seed_determinism():
    n = NoiseConfig("degenerate", 0.4, 1e-3)

    def path(seed):
        rng = np.random.default_rng(seed)
        s, v = CylinderState(0.3, 0.1), np.array([1.0, 0.0])
        out = []
        for _ in range(200):
            s, v = em_step(lambda x: sde_fields(x, P, n), s, v, n.dt, rng)
            out.append((s.theta, s.y, *v))
        return np.array(out)

    assert np.array_equal(path(9), path(9))
    assert not np.array_equal(path(9), path(10))


def test_em_weak_mean():
    # E[y_1] = e^{-lambda} y_0 since the y-drift is linear; vectorized EM over 1e4 paths
    n_paths, dt, a = 10_000, 1e-3, 0.5
    rng = np.random.default_rng(1)
    th = np.full(n_paths, 0.3)
    y = np.ones(n_paths)
    for _ in range(int(1 / dt)):
        dB = math.sqrt(dt) * rng.standard_normal(n_paths)
        th, y = th + (1 + P.sigma * y) * dt, y - P.lam * y * dt + a * np.sin(2 * np.pi * th) * dB
    se = y.std() / math.sqrt(n_paths)
    # Euler bias on the mean is (1 - lam dt)^(1/dt) - e^{-lam} ~ 2e-4
    assert abs(y.mean() - math.exp(-P.lam)) < 4 * se + 5e-4


def test_em_weak_first_order():
    # the mean of the scheme is exactly (1 - lam dt)^n y0; compare the bias at two steps
    def bias(dt):
        return abs((1 - P.lam * dt) ** round(1 / dt) - math.exp(-P.lam))
    assert bias(1e-2) / bias(5e-3) == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize("mode", ["degenerate", "isotropic", "additive"])
def test_compiled_kernel_matches_em_step(mode):
    p, n = ShearParams(2.0, 1.0), NoiseConfig(mode, 0.6, 1e-3)
    z = np.random.default_rng(4).standard_normal((300, n.channels))
    s, v = CylinderState(0.3, 0.05), np.array([0.6, 0.8])
    for k in range(z.shape[0]):
        s, v = em_step(lambda x: sde_fields(x, p, n), s, v, n.dt, increments=math.sqrt(n.dt) * z[k])
    th, y = np.array([0.3]), np.array([0.05])
    v1, v2 = np.array([0.6]), np.array([0.8])
    logs, n_out = np.zeros(1), np.zeros(1, dtype=np.int64)
    bad = _sde_shear_chunk(th, y, v1, v2, logs, n_out, z, n.dt, p.sigma, p.lam, n.amplitude,
                           n.mode_code, 10**9, 0, 0.3)
    assert bad == -1
    assert th[0] == pytest.approx(s.theta, abs=1e-11)
    assert y[0] == pytest.approx(s.y, abs=1e-11)
    assert [v1[0], v2[0]] == pytest.approx(list(v), rel=1e-10)


def test_bulk_draws_equal_successive_draws():
    a = np.random.default_rng(2).standard_normal((50, 2))
    rng = np.random.default_rng(2)
    b = np.array([rng.standard_normal(2) for _ in range(50)])
    assert np.array_equal(a, b)


def test_em_rejects_bad_dt():
    with pytest.raises(ValueError):
        em_step(lambda x: sde_fields(x, P, NoiseConfig("additive", 1)), CylinderState(0, 0),
                np.ones(2), 0.0, np.random.default_rng(0))
