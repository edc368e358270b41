"""End-to-end acceptance criteria, each printing one PASS/FAIL line.

The white-noise criteria run at dt = 1e-4 and repeat one representative cell
at dt = 5e-5; the two estimates must agree within three combined standard
errors. Expect roughly ten minutes on one core.
"""

import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from shearchaos.analysis import (INVERTIBLE, CircleMapProfile, classify_regime,
                                 most_contracted_direction, rotation_number,
                                 trace_stable_foliation)
from shearchaos.integrators import rk4_step
from shearchaos.lyapunov import dt_convergence, protocol_kicked, protocol_osc_sde, protocol_sde
from shearchaos.models import (CylinderState, NoiseConfig, OscParams, ShearParams, TorusState,
                               osc_kick_map, shear_flow_jacobian, shear_flow_map)
from shearchaos.sweep import parse_config, run_sweep

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

DT = 1e-4
SEED = 2024


def shear_sde(sigma, lam, mode, a, horizon, dt=DT, seed=SEED, grid_index=0):
    return protocol_sde(ShearParams(sigma, lam), NoiseConfig(mode, a, dt), horizon, seed,
                        grid_index)


def convergence(run, label):
    chk = dt_convergence(run, DT)
    text = (f"{label} dt={DT:g}: {chk.coarse.value:+.4f}, dt={DT / 2:g}: {chk.fine.value:+.4f}, "
            f"|diff|={chk.difference:.4f} <= {chk.tolerance:.4f}")
    return chk, text


def test_c1_neutral_baseline(report):
    vals = {}
    for T in (1.0, 5.0, 10.0):
        res = protocol_kicked(ShearParams(2.0, 1.0, A=0.0, T=T), SEED)
        vals[T] = max(abs(res.upper), abs(res.lower))
    ok = all(v < 1e-3 for v in vals.values())
    report("C1", ok, "max |Lambda| per period: "
           + ", ".join(f"T={T:g}: {v:.2e}" for T, v in vals.items()) + " (< 1e-3)")


def test_c2_onset_sweep(report):
    cfg = parse_config("model=kicked_shear\nsigma=2\nlambda=1\nA=1.5\nsweep.T=2:20:0.25\n"
                       f"seed={SEED}")
    rows = run_sweep(cfg)
    assert len(rows) == 73 and not any(r.failed for r in rows)
    late = [r for r in rows if r.params["T"] >= 4]
    pos = sum(r.lyap_upper > 0 for r in late)
    signs = {np.sign(r.lyap_upper) for r in rows} | {np.sign(r.lyap_lower) for r in rows}
    ok = pos >= len(late) / 2 and {1.0, -1.0} <= signs
    first = min(r.params["T"] for r in rows if r.lyap_lower > 0)
    report("C2", ok, f"{pos}/{len(late)} cells with T>=4 have upper > 0; both signs present: "
           f"{ {1.0, -1.0} <= signs}; first T with lower > 0: {first:g}")


def test_c3_additive_noise(report):
    vals = {a: shear_sde(2.0, 1.0, "additive", a, 5000.0) for a in (0.1, 0.5)}
    chk, conv = convergence(lambda dt: shear_sde(2.0, 1.0, "additive", 0.5, 1000.0, dt),
                            "a=0.5 H=1000")
    ok = all(abs(e.value) < 2e-3 for e in vals.values()) and chk.passed
    report("C3", ok, ", ".join(f"a={a:g}: {e.value:+.2e}" for a, e in vals.items())
           + f" (|.| < 2e-3); convergence {conv}")


def test_c4_degenerate_beats_isotropic(report):
    amps = (0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0)
    cells = []
    for i, a in enumerate(amps):
        deg = shear_sde(3.0, 1.5, "degenerate", a, 1000.0, grid_index=i)
        iso = shear_sde(3.0, 1.5, "isotropic", a, 1000.0, grid_index=i)
        noise = 3.0 * math.hypot(deg.stderr, iso.stderr)
        cells.append((a, deg.value, iso.value, deg.value >= iso.value - noise))
    good = sum(c[3] for c in cells)
    chk, conv = convergence(lambda dt: shear_sde(3.0, 1.5, "degenerate", 0.3, 1000.0, dt),
                            "degenerate a=0.3")
    ok = good >= 0.8 * len(cells) and chk.passed
    report("C4", ok, f"{good}/{len(cells)} cells deg >= iso - 3se ["
           + "; ".join(f"a={a:g}: {d:+.3f} vs {s:+.3f}" for a, d, s, _ in cells)
           + f"]; convergence {conv}")


def test_c5_small_parameters(report):
    vals = {a: shear_sde(0.2, 0.01, "degenerate", a, 5000.0) for a in (0.05, 0.1)}
    chk, conv = convergence(lambda dt: shear_sde(0.2, 0.01, "degenerate", 0.05, 2000.0, dt),
                            "a=0.05 H=2000")
    ok = all(e.value > 0 for e in vals.values()) and chk.passed
    report("C5", ok, ", ".join(f"a={a:g}: {e.value:+.4f} (se {e.stderr:.4f}, "
                               f"time in |y|>0.3: {e.excursion_fraction:.2f})"
                               for a, e in vals.items()) + f"; convergence {conv}")


def test_c6_scaling_law(report):
    rescaled = (0.1, 0.2, 0.3, 0.5)
    curves = {}
    for sigma in (6.0, 9.0):
        curves[sigma] = [shear_sde(sigma, sigma / 6, "degenerate", r * math.sqrt(sigma), 1000.0,
                                   grid_index=i).value / sigma
                         for i, r in enumerate(rescaled)]
    compared, worst = 0, 0.0
    for u, v in zip(curves[6.0], curves[9.0]):
        if abs(u) > 0.01 or abs(v) > 0.01:
            compared += 1
            worst = max(worst, abs(u - v) / max(abs(u), abs(v)))
    chk, conv = convergence(lambda dt: shear_sde(9.0, 1.5, "degenerate", 0.5 * 3.0, 1000.0, dt),
                            "sigma=9 a/sqrt(sigma)=0.5")
    ok = compared > 0 and worst <= 0.10 and chk.passed
    report("C6", ok, f"worst relative gap {worst:.3f} over {compared} points (<= 0.10); "
           + "; ".join(f"{r:g}: {u:.4f} vs {v:.4f}"
                       for r, u, v in zip(rescaled, curves[6.0], curves[9.0]))
           + f"; convergence {conv}")


def test_c7_rotation_numbers(report):
    rho = {b: rotation_number(OscParams(a_ff=1.0, a_fb=b)) for b in (1.1, 1.3, 1.5)}
    ok = rho[1.1] < rho[1.3] < 1.0 and abs(rho[1.5] - 1.0) <= 1e-3
    report("C7", ok, ", ".join(f"rho({b:g})={r:.6f}" for b, r in rho.items()))


def test_c8_oscillator_white_noise(report):
    def est(a_fb, a, dt=DT, index=0):
        return protocol_osc_sde(OscParams(a_ff=1.0, a_fb=a_fb), a, 1000.0, SEED, index, dt=dt)

    cases = [(1.47, 0.05, -1), (1.47, 0.1, -1), (1.47, 0.4, 1), (1.47, 0.6, 1), (1.2, 0.3, 1)]
    results = []
    for i, (a_fb, a, sign) in enumerate(cases):
        e = est(a_fb, a, index=i)
        results.append((a_fb, a, e, e.value * sign > 0))
    chk, conv = convergence(lambda dt: est(1.47, 0.4, dt, 2), "a_fb=1.47 a=0.4")
    ok = all(r[3] for r in results) and chk.passed
    report("C8", ok, "; ".join(f"a_fb={b:g} a={a:g}: {e.value:+.4f} (se {e.stderr:.4f})"
                               for b, a, e, _ in results) + f"; convergence {conv}")


def test_c9_oscillator_kicks(report):
    cfg = parse_config("model=osc_pair\na_ff=1\na_fb=1.47\nforcing=kicks\n"
                       f"sweep.A=0.75:1.5:0.25\nsweep.T=1:10:0.5\nseed={SEED}")
    rows = run_sweep(cfg)
    assert len(rows) == 76 and not any(r.failed for r in rows)
    frac = sum(r.lyap_upper > 0 for r in rows) / len(rows)
    report("C9", 0.25 <= frac <= 0.60, f"{frac:.1%} of {len(rows)} cells have upper > 0 "
           "(band 25%-60%)")


def test_c10_oracle_suite(report):
    checks = {}
    # closed-form flow against a fourth-order integrator
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        th, y, t = rng.random(), rng.uniform(-1, 1), rng.uniform(0.1, 3)
        p = ShearParams(rng.uniform(0, 5), rng.uniform(0.1, 3))
        s = np.array([th, y])
        n = int(math.ceil(t / 1e-3))
        for _ in range(n):
            s = rk4_step(lambda x: np.array([1 + p.sigma * x[1], -p.lam * x[1]]), s, t / n)
        cf = shear_flow_map(CylinderState(th, y), t, p)
        d = (cf.theta - s[0]) % 1.0
        worst = max(worst, min(d, 1 - d), abs(cf.y - s[1]))
    checks["flow vs rk4"] = worst < 1e-8
    # kick closed form against integration of the kick ODE
    worst = 0.0
    for th in np.linspace(0.02, 0.98, 13):
        for A in (0.25, 1.0, 3.0):
            sol = solve_ivp(lambda u, x: A * (1 - np.cos(2 * np.pi * x)) / (2 * np.pi), (0, 1),
                            [th], method="DOP853", rtol=1e-13, atol=1e-14)
            d = (osc_kick_map(TorusState(th, 0), A).theta1 - sol.y[0, -1]) % 1.0
            worst = max(worst, min(d, 1 - d))
    checks["kick vs ODE"] = worst < 1e-8
    # most contracted direction against a million angles
    J = np.array([[1.0, 1.264], [0.0, 0.368]])
    ang = np.linspace(0.0, np.pi, 1_000_000, endpoint=False)
    U = np.stack([np.cos(ang), np.sin(ang)])
    best = U[:, np.argmin(np.linalg.norm(J @ U, axis=0))]
    checks["contracted direction"] = abs(abs(most_contracted_direction(J) @ best) - 1) < 1e-10
    # injectivity boundary
    b = 1 / (2 * math.pi)
    checks["injectivity flip"] = (classify_regime(CircleMapProfile(0, b - 1e-6)) == INVERTIBLE
                                  and classify_regime(CircleMapProfile(0, b + 1e-6)) != INVERTIBLE)
    # stable leaves of the shear flow
    p = ShearParams(2.0, 0.5)
    v = most_contracted_direction(shear_flow_jacobian(40.0, p))
    leaf = trace_stable_foliation((0, 1, -0.5, 0.5), 40.0, p, (11, 11), seeds=[(0.4, 0.0)])[0]
    d = np.diff(leaf.points, axis=0)
    checks["leaf slope"] = (abs(v[1] / v[0] + p.lam / p.sigma) < 1e-6
                            and np.allclose(d[:, 1] / d[:, 0], -p.lam / p.sigma, rtol=1e-6))
    report("C10", all(checks.values()),
           ", ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items()))
