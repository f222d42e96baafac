import numpy as np
import pytest

from conftest import random_hurwitz
from fcascade.controller import ControllerConfig
from fcascade.errors import ConfigError, NonPositiveTrace, NonzeroS, StepRejected
from fcascade.graph import QuadConfig, build_graph
from fcascade.model import CascadeRealization, linear_model
from fcascade.sim import (
    CSV_COLUMNS,
    ClosedLoop,
    LoopState,
    LyapunovSpec,
    SimConfig,
    control_energy,
    energy_spec,
    fit_decay_rate,
    simulate,
    step,
    verify_W_decay,
    write_csv,
    write_sidecar,
)
from fcascade.trajectory import Trajectory

COARSE = QuadConfig(step=5e-3)


@pytest.fixture(scope="module")
def scalar_graph(scalar):
    return build_graph(scalar, COARSE)


@pytest.fixture(scope="module")
def scalar_run(scalar, scalar_graph):
    loop = ClosedLoop(scalar, scalar_graph, ControllerConfig(),
                      SimConfig(dt=1e-3, T_final=2.0, record_every=50))
    return simulate(loop, np.array([1.0]), np.array([1.0]), energy_spec(scalar, 1.0))


def stable_linear(rng, n=4):
    return linear_model(random_hurwitz(rng, n), rng.standard_normal((n, 1)),
                        rng.standard_normal((1, n)))


@pytest.mark.parametrize("kwargs", [dict(dt=0.0), dict(T_final=-1.0), dict(scheme="euler"),
                                    dict(record_every=0), dict(record_every=2.5)])
def test_sim_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SimConfig(**kwargs)


def test_n_steps():
    assert SimConfig(dt=1e-3, T_final=10.0).n_steps == 10000


def test_loop_rejects_bad_sampling(scalar, scalar_graph):
    with pytest.raises(ConfigError):
        ClosedLoop(scalar, scalar_graph, ControllerConfig(sample_period=0.0105),
                   SimConfig(dt=1e-3))
    with pytest.raises(ConfigError):
        ClosedLoop(scalar, scalar_graph, ControllerConfig(sample_period=1e-4), SimConfig(dt=1e-3))


def test_loop_requires_graph_in_full_mode(scalar):
    with pytest.raises(ConfigError):
        ClosedLoop(scalar, None, ControllerConfig(mode="full"))


def test_integral_action_requires_zero_S(rng):
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])
    model = linear_model(random_hurwitz(rng, 3), rng.standard_normal((3, 2)),
                         rng.standard_normal((2, 3)), S)
    with pytest.raises(NonzeroS):
        ClosedLoop(model, None, ControllerConfig(mode="linear", y_ref=(0.0, 0.0)))


def test_initial_data_dimension(scalar, scalar_graph):
    loop = ClosedLoop(scalar, scalar_graph, sim=SimConfig(T_final=0.1))
    with pytest.raises(ConfigError):
        simulate(loop, np.zeros(2), np.zeros(1))


def test_lyapunov_spec_defaults(scalar, rng):
    spec = energy_spec(scalar, 2.0)
    assert spec.defect_weight == pytest.approx(1.5)
    assert spec.W(np.array([2.0]), 1.0) == pytest.approx(2.0 + 1.5)
    assert spec.quadratic_bounds(scalar, rng) == pytest.approx((0.5, 0.5))
    with pytest.raises(ValueError):
        LyapunovSpec(V=lambda x: 0.0, beta=0.0)
    with pytest.raises(ValueError):
        LyapunovSpec(V=lambda x: 0.0, beta=1.0, defect_weight=-1.0)


def test_equilibrium_step_is_fixed(scalar, scalar_graph):
    loop = ClosedLoop(scalar, scalar_graph, sim=SimConfig())
    state = LoopState(0, np.zeros(1), np.zeros(1), np.zeros(1))
    for _ in range(3):
        state = step(loop, state)
    assert np.all(state.x == 0.0) and np.all(state.z == 0.0) and np.all(state.u == 0.0)


@pytest.mark.parametrize("scheme", ["imex-cn", "rk4"])
def test_zero_trajectory(scalar, scalar_graph, scheme):
    loop = ClosedLoop(scalar, scalar_graph, sim=SimConfig(T_final=0.5, scheme=scheme))
    traj = simulate(loop, np.zeros(1), np.zeros(1))
    assert np.all(traj.states == 0.0) and np.all(traj.zs == 0.0) and np.all(traj.us == 0.0)
    assert np.all(traj.monitors["W"] == 0.0)
    assert verify_W_decay(traj, energy_spec(scalar, 1.0)).ok


def test_trajectory_shape(scalar_run):
    assert len(scalar_run) == 41
    assert scalar_run.times[-1] == pytest.approx(2.0)
    assert np.all(np.diff(scalar_run.times) > 0)
    assert scalar_run.zs.shape == (41, 1) and scalar_run.us.shape == (41, 1)
    assert scalar_run.meta["graph_evals"] == 41


def test_scalar_closed_loop_W_decreases(scalar_run, scalar):
    W = scalar_run.monitors["W"]
    assert W[-1] < W[0]
    rep = verify_W_decay(scalar_run, energy_spec(scalar, 1.0))
    assert rep.ok, rep.format()


def test_schemes_agree_on_scalar(scalar, scalar_graph, scalar_run):
    loop = ClosedLoop(scalar, scalar_graph, ControllerConfig(),
                      SimConfig(dt=1e-3, T_final=2.0, scheme="rk4"))
    traj = simulate(loop, np.array([1.0]), np.array([1.0]))
    assert np.allclose(traj.states, scalar_run.states, atol=1e-5)


def test_scalar_open_loop_keeps_the_defect(scalar, scalar_graph):
    loop = ClosedLoop(scalar, scalar_graph, sim=SimConfig(T_final=10.0, record_every=500),
                      open_loop=True)
    traj = simulate(loop, np.array([1.0]), np.array([0.5]))
    d = traj.monitors["defect_norm"]
    assert np.max(np.abs(d - d[0])) / d[0] <= 1e-4
    assert np.all(np.diff(traj.monitors["V"]) <= 0)
    assert np.all(traj.us == 0.0)
    assert traj.meta["graph_evals"] == 0


def test_energy_residual_vanishes_for_scalar_closed_form(scalar, scalar_graph):
    # V = x^2 / 2, dV/dt = -x^2 - x^4 + x u exactly
    spec = LyapunovSpec(V=lambda x: 0.5 * float(x @ x), beta=1.0,
                        V_rate=lambda x, xd: float(x @ xd),
                        vdot=lambda x, u: float(-x[0] ** 2 - x[0] ** 4 + x[0] * u[0]))
    loop = ClosedLoop(scalar, scalar_graph, sim=SimConfig(T_final=0.2))
    traj = simulate(loop, np.array([0.7]), np.array([0.2]), spec)
    assert np.max(np.abs(traj.monitors["energy_residual"])) <= 1e-14


def test_step_rejected_on_blow_up():
    model = CascadeRealization(A=[[-1.0]], C=[[1.0]], S=[[0.0]], g=[[1.0]],
                               f=lambda x: 1e3 * x**5, df=lambda x: np.diag(5e3 * x**4))
    loop = ClosedLoop(model, None, sim=SimConfig(dt=1e-3, T_final=1.0), open_loop=True)
    with pytest.raises(StepRejected) as info:
        simulate(loop, np.array([10.0]), np.zeros(1))
    assert info.value.time == pytest.approx(1e-3)


def test_fit_decay_rate_examples():
    t = np.linspace(0.0, 5.0, 101)
    rate, r2 = fit_decay_rate(np.exp(-2.0 * t), t)
    assert rate == pytest.approx(-2.0, rel=1e-10) and r2 == pytest.approx(1.0, abs=1e-12)
    rate, r2 = fit_decay_rate(np.full(t.size, 3.0), t)
    assert rate == pytest.approx(0.0, abs=1e-12) and r2 == 1.0


def test_fit_decay_rate_uses_the_final_half():
    t = np.linspace(0.0, 10.0, 201)
    trace = np.where(t < 5.0, np.exp(-10.0 * t), np.exp(-50.0) * np.exp(-(t - 5.0)))
    rate, _ = fit_decay_rate(trace, t)
    assert rate == pytest.approx(-1.0, rel=1e-6)


@pytest.mark.parametrize("trace", [np.zeros(20), -np.ones(20), np.ones(5)])
def test_fit_decay_rate_errors(trace):
    with pytest.raises(NonPositiveTrace):
        fit_decay_rate(trace, np.arange(trace.size, dtype=float))


def test_control_energy_is_left_point_sum():
    traj = Trajectory(times=[0.0, 0.5, 1.5], states=np.zeros((3, 1)),
                      monitors={"u_norm": np.array([2.0, 1.0, 7.0])})
    assert control_energy(traj) == pytest.approx(4.0 * 0.5 + 1.0 * 1.0)


def test_verify_W_decay_flags_increase():
    times = np.arange(5.0)
    W = np.array([1.0, 0.9, 1.2, 0.8, 0.7])
    traj = Trajectory(times=times, states=np.zeros((5, 1)),
                      monitors={"W": W, "u_norm": np.zeros(5)})
    rep = verify_W_decay(traj, LyapunovSpec(V=lambda x: 0.0, beta=1.0))
    assert not rep["W nonincreasing"].passed
    assert not rep["sublevel invariance"].passed
    assert rep["integrated dissipation"].passed


def test_lasalle_and_l2_proxies(rng):
    model = stable_linear(rng)
    loop = ClosedLoop(model, None, ControllerConfig(mode="linear"),
                      SimConfig(dt=1e-2, T_final=80.0, record_every=5))
    x0 = rng.standard_normal(4)
    traj = simulate(loop, x0, np.ones(1))
    x_norm, u_norm = traj.monitors["x_norm"], traj.monitors["u_norm"]
    tail = traj.times >= 0.9 * traj.times[-1]
    assert x_norm[-1] <= 1e-4 * x_norm[0]
    assert np.max(u_norm[tail]) <= 1e-4 * np.max(u_norm)
    dt = np.diff(traj.times)
    partial = np.cumsum(x_norm[:-1] ** 2 * dt)
    q = partial.size // 4
    third, fourth = partial[3 * q - 1], partial[-1]
    assert (fourth - third) / fourth < 0.05


def test_csv_schema_and_replay(tmp_path, scalar_run):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(scalar_run, a)
    write_csv(scalar_run, b, extra={"theta": scalar_run.states[:, 0]})
    lines = a.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == len(scalar_run) + 1
    assert b.read_text().splitlines()[0] == ",".join(CSV_COLUMNS) + ",theta"
    data = np.loadtxt(a, delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 2], scalar_run.monitors["W"])
    write_csv(scalar_run, b)
    assert a.read_bytes() == b.read_bytes()


def test_sidecar_serializes_numpy(tmp_path):
    import json

    path = tmp_path / "meta.json"
    write_sidecar(path, {"a": np.arange(3), "b": np.float64(1.5), "c": SimConfig()})
    meta = json.loads(path.read_text())
    assert meta["a"] == [0, 1, 2] and meta["b"] == 1.5 and meta["c"]["dt"] == 1e-3
