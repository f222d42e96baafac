"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are repeated in the pytest
terminal summary. The long beam runs are shared through module fixtures.
"""

import time

import numpy as np
import pytest

from conftest import random_hurwitz, random_skew, record_verdict
from fcascade import beam as beam_mod
from fcascade.cli import BEAM_QUAD, build_parser, load_config, resolve, run_regulate
from fcascade.controller import ControllerConfig
from fcascade.graph import QuadConfig, build_graph, compute_M0, evaluate
from fcascade.model import scalar_cubic_model
from fcascade.sim import ClosedLoop, SimConfig, fit_decay_rate, simulate, verify_W_decay
from fcascade.wlinalg import solve_linear, solve_sylvester

SCALAR_POINTS = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)
THETA_REFS = (0.1, 1.0, 5.0)


def beam32():
    return beam_mod.assemble(beam_mod.BeamParams(N=32))


@pytest.fixture(scope="module")
def beam_run():
    """Closed-loop beam, N = 32, dt = 1e-3, sample period 0.05, V(x0) = 1, z0 = 1."""
    model = beam32()
    graph = build_graph(model, QuadConfig(**BEAM_QUAD))
    x0 = beam_mod.smooth_random_state(model, np.random.default_rng(42), energy_level=1.0)
    loop = ClosedLoop(model, graph, ControllerConfig(sample_period=0.05),
                      SimConfig(dt=1e-3, T_final=20.0))
    spec = beam_mod.lyapunov_spec(model)
    return model, spec, simulate(loop, x0, np.array([1.0]), spec)


@pytest.fixture(scope="module")
def regulation():
    """theta_ref sweep at T = 200 under both controllers, through the CLI runner."""
    cp = load_config(text="[model]\ntype = beam\n[beam]\nN = 32\n[sim]\nT_final = 200\n")
    args = build_parser().parse_args(
        ["regulate", "--controller", "both", "--theta-ref", ",".join(map(str, THETA_REFS))])
    status, summary, _ = run_regulate(resolve(args, cp), np.random.default_rng(42))
    return status, summary


def test_criterion_1_linear_sylvester():
    rng = np.random.default_rng(1)
    started = time.perf_counter()
    worst_res, worst_ref = 0.0, 0.0
    for k in range(100):
        n, m = int(rng.integers(1, 31)), int(rng.integers(1, 5))
        A = random_hurwitz(rng, n)
        S = np.zeros((m, m)) if k % 2 else random_skew(rng, m)
        C = rng.standard_normal((m, n))
        M0 = solve_sylvester(A, S, C)
        res = np.linalg.norm(M0 @ A - S @ M0 - C, "fro") / np.linalg.norm(C, "fro")
        worst_res = max(worst_res, res)
        if k % 2:
            ref = np.linalg.solve(A.T, C.T).T
            worst_ref = max(worst_ref, np.linalg.norm(M0 - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - started
    ok = worst_res <= 1e-10 and worst_ref <= 1e-10 and elapsed < 10.0
    record_verdict(1, "linear Sylvester", ok,
                   f"max rel residual {worst_res:.2e}, max |M0 - CA^-1| {worst_ref:.2e}, "
                   f"{elapsed:.2f} s")
    assert ok


def test_criterion_2_scalar_oracle():
    started = time.perf_counter()
    model = scalar_cubic_model()
    graph = build_graph(model, QuadConfig(step=1e-3, tail_tol=1e-8))
    err_M, err_dM = 0.0, 0.0
    for x in SCALAR_POINTS:
        ev = evaluate(graph, np.array([x]), "all")
        err_M = max(err_M, abs(ev.M[0] + np.arctan(x)))
        err_dM = max(err_dM, abs(ev.dM[0, 0] + 1.0 / (1.0 + x * x)))
    elapsed = time.perf_counter() - started
    ok = err_M <= 1e-5 and err_dM <= 1e-5 and elapsed < 5.0
    record_verdict(2, "scalar graph oracle", ok,
                   f"max |M + arctan| {err_M:.2e}, max |dM + 1/(1+x^2)| {err_dM:.2e}, "
                   f"{elapsed:.2f} s")
    assert ok


def _drift(traj):
    d = traj.monitors["defect_norm"]
    return float(np.max(np.abs(d - d[0])) / d[0])


def test_criterion_3_graph_invariance():
    scalar = scalar_cubic_model()
    loop = ClosedLoop(scalar, build_graph(scalar), sim=SimConfig(dt=1e-3, T_final=10.0,
                                                                 record_every=500),
                      open_loop=True)
    drift_scalar = _drift(simulate(loop, np.array([1.0]), np.array([0.5])))

    model = beam32()
    graph = build_graph(model, QuadConfig(**BEAM_QUAD))
    x0 = beam_mod.smooth_random_state(model, np.random.default_rng(42), energy_level=1.0)
    loop = ClosedLoop(model, graph, sim=SimConfig(dt=1e-3, T_final=10.0), open_loop=True)
    drift_beam = _drift(simulate(loop, x0, np.array([0.5])))
    ok = drift_scalar <= 1e-4 and drift_beam <= 1e-3
    record_verdict(3, "open-loop graph invariance", ok,
                   f"scalar drift {drift_scalar:.2e}, beam drift {drift_beam:.2e}")
    assert ok


def test_criterion_4_W_decay(beam_run):
    model, spec, traj = beam_run
    rep = verify_W_decay(traj, spec)
    mono, diss = rep["W nonincreasing"], rep["integrated dissipation"]
    ok = mono.passed and diss.passed
    record_verdict(4, "W decay on the beam", ok,
                   f"max step increase {mono.value:.2e}, dissipation slack {diss.value:.3e}, "
                   f"W {traj.monitors['W'][0]:.3f} -> {traj.monitors['W'][-1]:.2e}")
    assert ok


def test_criterion_5_set_point_regulation(regulation):
    _, summary = regulation
    runs = [r for r in summary["runs"] if r["mode"] == "full"]
    ok = len(runs) == len(THETA_REFS)
    parts = []
    for r in runs:
        good = (r["theta_error"] <= 1e-3 and r["w_norm"] <= 1e-3 and r["rate_W"] < 0
                and r["r2_W"] >= 0.95 and r["wall_seconds"] <= 300.0)
        ok &= good
        parts.append(f"ref {r['theta_ref']:g}: |dtheta| {r['theta_error']:.1e}, "
                     f"|w| {r['w_norm']:.1e}, rate {r['rate_W']:.3f} (r2 {r['r2_W']:.3f}), "
                     f"{r['wall_seconds']:.0f} s")
    record_verdict(5, "set-point regulation", ok, "; ".join(parts))
    assert ok


def test_criterion_6_non_resonance():
    model64 = beam_mod.assemble(beam_mod.BeamParams(N=64))
    M0, _ = compute_M0(model64)
    val = abs(float((M0 @ model64.g_at(np.zeros(model64.n)))[0, 0]))
    worst = 0.0
    for N in (8, 16, 32, 64):
        model = beam_mod.assemble(beam_mod.BeamParams(N=N))
        for u in (-1.0, 0.5, 2.0):
            x_ss = beam_mod.steady_state(model.meta["params"], u)
            x = solve_linear(model.A, -model.g_at(x_ss)[:, 0] * u)
            worst = max(worst, float(np.max(np.abs(x - x_ss))))
    ok = abs(val - 1.0) <= 5e-2 and worst <= 1e-10
    record_verdict(6, "non-resonance", ok,
                   f"|M0 B| at N=64 = {val:.6f}, steady-state profile error {worst:.1e}")
    assert ok


def test_criterion_7_energy_identities():
    model = beam32()
    lay = beam_mod.layout_of(model)
    Q = model.QX.Q
    rng = np.random.default_rng(7)
    worst_lin, worst_nl = 0.0, 0.0
    for _ in range(100):
        x = rng.standard_normal(model.n)
        x /= model.norm_x(x)
        u = rng.standard_normal()
        lhs = x @ Q @ (model.A @ x + model.g_at(x)[:, 0] * u)
        worst_lin = max(worst_lin, abs(lhs - beam_mod.energy_rate(x, u, lay)))
        worst_nl = max(worst_nl, abs(x @ Q @ model.f(x)))
    ok = worst_lin <= 1e-12 and worst_nl <= 1e-12
    record_verdict(7, "energy identities", ok,
                   f"linear balance {worst_lin:.1e}, nonlinear cancellation {worst_nl:.1e}")
    assert ok


def test_criterion_8_strictification(beam_run):
    model, _, traj = beam_run
    lay = beam_mod.layout_of(model)
    eps = 0.5 * beam_mod.eps_max(lay)
    coerc = beam_mod.strict_energy_coercivity(lay, eps)
    Qe = beam_mod.strict_energy_matrix(lay, eps)
    V_eps = np.array([x @ Qe @ x for x in traj.states])
    rate, r2 = fit_decay_rate(V_eps, traj.times)
    ok = coerc > 0 and rate < 0
    record_verdict(8, "strictified energy", ok,
                   f"eps = {eps:.3g} (eps_max/2), coercivity {coerc:.3g}, "
                   f"V_eps rate {rate:.3f} (r2 {r2:.3f})")
    assert ok


def test_criterion_9_controller_modes(regulation):
    _, summary = regulation
    ok = True
    parts = []
    for mode in ("full", "linear"):
        runs = [r for r in summary["runs"] if r["mode"] == mode]
        stable = len(runs) == len(THETA_REFS) and all(
            r["theta_error"] <= 1e-3 and r["w_norm"] <= 1e-3 and r["rate_W"] < 0 for r in runs)
        ok &= stable
        rates = ", ".join(f"{r['rate_W']:.3f}" for r in runs)
        parts.append(f"{mode}: rates [{rates}]")
    ok &= set(summary.get("decay_rates_by_mode", {})) == {"full", "linear"}
    record_verdict(9, "controller-mode comparison", ok, "; ".join(parts))
    assert ok
