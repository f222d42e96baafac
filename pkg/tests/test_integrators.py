import numpy as np
import pytest
import scipy.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from fcascade.beam import smooth_random_state
from fcascade.integrators import ExpMidpoint, ImexCN, rk4_step


def zero(y):
    return np.zeros_like(y)


@given(dt=st.floats(1e-3, 10.0))
def test_cn_scalar_amplification(dt):
    cn = ImexCN([[-1.0]], dt)
    expected = (1 - dt / 2) / (1 + dt / 2)
    assert cn.step(np.array([1.0]), zero)[0] == pytest.approx(expected, rel=1e-14, abs=1e-15)
    assert cn.amplification()[0, 0] == pytest.approx(expected, rel=1e-14, abs=1e-15)


def test_rk4_scalar_decay():
    y = rk4_step(lambda y: -y, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(0.9048375, abs=1e-7)


def test_cn_is_a_stable_map_for_hurwitz_generators(rng):
    from conftest import random_hurwitz

    for _ in range(20):
        L = random_hurwitz(rng, 6)
        assert np.max(np.abs(np.linalg.eigvals(ImexCN(L, 0.5).amplification()))) < 1.0


def test_expmid_exact_on_linear_problems(rng):
    from conftest import random_hurwitz

    L = random_hurwitz(rng, 5)
    y0 = rng.standard_normal(5)
    em = ExpMidpoint(L, 0.3)
    y = y0.copy()
    for _ in range(10):
        y = em.step(y, zero)
    assert np.allclose(y, spla.expm(3.0 * L) @ y0, rtol=1e-12, atol=1e-14)


def test_expmid_exact_for_constant_forcing(rng):
    from conftest import random_hurwitz

    L = random_hurwitz(rng, 4)
    b = rng.standard_normal(4)
    y0 = rng.standard_normal(4)
    y = ExpMidpoint(L, 0.7).step(y0, lambda _: b)
    E = spla.expm(0.7 * L)
    exact = E @ y0 + np.linalg.solve(L, (E - np.eye(4)) @ b)
    assert np.allclose(y, exact, rtol=1e-12, atol=1e-13)


def test_predict_is_the_midpoint_of_the_cn_step(rng):
    L = -np.diag([1.0, 5.0, 50.0])
    cn = ImexCN(L, 0.1)
    y = rng.standard_normal(3)
    F = rng.standard_normal(3)
    assert np.allclose(cn.predict(y, F), 0.5 * (y + cn.advance(y, F)), atol=1e-15)


def _run(stepper, y0, F, steps):
    y = y0.copy()
    for _ in range(steps):
        y = stepper.step(y, F)
    return y


def _norm(model, y):
    return model.QX.norm(y)


@pytest.mark.parametrize("kind", ["linear", "nonlinear"])
def test_cn_second_order_on_beam(beam32, kind):
    # three slowest modes: |eig| up to ~20, resolved by every step in the sweep
    model = beam32
    rng = np.random.default_rng(7)
    y0 = smooth_random_state(model, rng, energy_level=0.5, modes=3)
    T = 0.4
    F = zero if kind == "linear" else model.f
    if kind == "linear":
        ref = spla.expm(T * model.A) @ y0
    else:
        ref = _run(ImexCN(model.A, T / 3200), y0, F, 3200)
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        y = _run(ImexCN(model.A, dt), y0, F, int(round(T / dt)))
        errs.append(_norm(model, y - ref))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


def test_expmid_second_order_on_nonlinear_beam(beam16):
    model = beam16
    rng = np.random.default_rng(8)
    y0 = smooth_random_state(model, rng, energy_level=0.5, modes=3)
    T = 0.4
    ref = _run(ExpMidpoint(model.A, T / 1600), y0, model.f, 1600)
    errs = [_norm(model, _run(ExpMidpoint(model.A, dt), y0, model.f, int(round(T / dt))) - ref)
            for dt in (0.02, 0.01, 0.005)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.8), orders


@settings(max_examples=25, deadline=None)
@given(lam=st.floats(1e2, 1e6))
def test_expmid_damps_stiff_modes_at_large_steps(lam):
    em = ExpMidpoint([[-lam]], 0.05)
    cn = ImexCN([[-lam]], 0.05)
    assert abs(em.step(np.array([1.0]), zero)[0]) <= np.exp(-5.0)
    # Crank-Nicolson tends to -1 in the stiff limit
    assert abs(cn.step(np.array([1.0]), zero)[0]) > abs(em.step(np.array([1.0]), zero)[0])
