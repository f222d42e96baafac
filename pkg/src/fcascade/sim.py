"""Closed-loop simulation with Lyapunov instrumentation.

The pair ``(x, z)`` is advanced as one state ``Y`` whose linear part
``[[A, 0], [C, S]]`` is treated by Crank-Nicolson and whose remaining terms
``f(x) + g(x) u`` and ``h(x)`` (minus ``y_ref`` under integral action) enter
through the IMEX midpoint. The control is recomputed at sample instants and
held in between.

Monitors are recorded every ``record_every`` steps. When records fall on
sample instants the controller's own ``M(x)`` is reused for the defect; the
defect is measured with the quadrature graph whenever one is supplied, even
when the controller runs on ``M0``, so both modes share one yardstick.
Linear mode may run without a graph; its defect is then ``z - M0 x``.
"""

import json
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from fcascade.controller import ControllerConfig, feedback_terms
from fcascade.errors import ConfigError, NonPositiveTrace, NonzeroS, StepRejected
from fcascade.graph import compute_M0, evaluate
from fcascade.integrators import ImexCN, rk4_step
from fcascade.model import ValidationReport
from fcascade.trajectory import Trajectory

SCHEMES = ("imex-cn", "rk4")
BLOWUP_FACTOR = 10.0
W_STEP_RTOL = 1e-8
CSV_COLUMNS = ("t", "V", "W", "u_norm", "defect_norm", "x_norm")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T_final: float = 10.0
    scheme: str = "imex-cn"
    record_every: int = 50

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.T_final > 0:
            raise ConfigError("T_final must be positive")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError("record_every must be a positive integer")

    @property
    def n_steps(self):
        return int(round(self.T_final / self.dt))


@dataclass(frozen=True)
class LyapunovSpec:
    """Storage function ``V`` with ISS gain ``beta`` and the weight of the defect in ``W``.

    ``W = V + defect_weight * ||z - M(x)||^2``. The default weight ``3 beta / 4``
    is the smallest for which ``dW/dt <= -(beta/2) ||u||^2`` follows from
    ``dV/dt <= beta ||u||^2`` and ``d/dt ||z - M||^2 / 2 = -||u||^2``.
    ``V_rate(x, xdot)`` and ``vdot(x, u)``, when both given, define the
    ``energy_residual`` monitor: the chain-rule rate of ``V`` minus the
    claimed closed form.
    """

    V: Callable
    beta: float
    defect_weight: Optional[float] = None
    V_rate: Optional[Callable] = None
    vdot: Optional[Callable] = None
    V_eps: Optional[Callable] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.defect_weight is None:
            object.__setattr__(self, "defect_weight", 0.75 * self.beta)
        elif not self.defect_weight > 0:
            raise ValueError("defect_weight must be positive")

    def W(self, x, defect_norm):
        return self.V(x) + self.defect_weight * defect_norm**2

    def quadratic_bounds(self, model, rng, count=50):
        """Fitted ``(m1, m2)`` with ``m1 ||x||^2 <= V(x) <= m2 ||x||^2`` on random states."""
        ratios = []
        for _ in range(count):
            x = rng.standard_normal(model.n)
            x *= rng.uniform(0.1, 2.0) / model.norm_x(x)
            ratios.append(self.V(x) / model.norm_x(x) ** 2)
        return float(min(ratios)), float(max(ratios))


def energy_spec(model, beta):
    """``V = 1/2 ||x||_X^2`` with a user-supplied gain."""
    Q = model.QX.Q
    return LyapunovSpec(V=lambda x: 0.5 * float(x @ Q @ x), beta=beta,
                        V_rate=lambda x, xd: float(x @ Q @ xd))


@dataclass
class LoopState:
    """Closed-loop state after ``k`` steps; ``u`` is the held control."""

    k: int
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    terms: object = None


class ClosedLoop:
    """A model, its graph and a controller bound to one time step.

    ``open_loop=True`` fixes ``u = 0``. Integral action is switched on by
    ``ctrl.y_ref``.
    """

    def __init__(self, model, graph, ctrl=None, sim=None, open_loop=False):
        self.model = model
        self.graph = graph
        self.ctrl = ControllerConfig() if ctrl is None else ctrl
        self.sim = SimConfig() if sim is None else sim
        self.open_loop = open_loop
        ratio = self.ctrl.sample_period / self.sim.dt
        self.steps_per_sample = int(round(ratio))
        if self.steps_per_sample < 1 or abs(ratio - self.steps_per_sample) > 1e-9 * ratio:
            raise ConfigError(
                f"sample_period {self.ctrl.sample_period} must be a positive multiple of "
                f"dt {self.sim.dt}"
            )
        if graph is None and self.ctrl.mode == "full" and not open_loop:
            raise ConfigError("full mode needs a graph")
        self.M0 = compute_M0(model)[0] if graph is None else graph.M0
        self.y_ref = self.ctrl.y_ref_array
        if self.y_ref is not None:
            if not model.has_zero_S:
                raise NonzeroS("integral action requires S = 0")
            if self.y_ref.shape != (model.m,):
                raise ConfigError(f"y_ref has {self.y_ref.size} entries, expected {model.m}")
        n, m = model.n, model.m
        L = np.zeros((n + m, n + m))
        L[:n, :n] = model.A
        L[n:, :n] = model.C
        L[n:, n:] = model.S
        self.L = L
        self.stepper = ImexCN(L, self.sim.dt) if self.sim.scheme == "imex-cn" else None
        self.n_evals = 0

    def forcing(self, Y, u):
        model, n = self.model, self.model.n
        x = Y[:n]
        fx = model.f(x) + model.g_at(x) @ u
        hz = model.h(x)
        if self.y_ref is not None:
            hz = hz - self.y_ref
        return np.concatenate([fx, hz])

    def field(self, Y, u):
        return self.L @ Y + self.forcing(Y, u)

    def control(self, x, z):
        if self.open_loop:
            return None
        self.n_evals += 1
        return feedback_terms(self.model, self.graph, x, z, self.ctrl, M0=self.M0)

    def norm(self, Y):
        n = self.model.n
        return float(np.sqrt(self.model.norm_x(Y[:n]) ** 2 + self.model.norm_y(Y[n:]) ** 2))

    def step(self, state):
        """Advance one ``dt``; refresh the held control first on a sample instant."""
        model, dt = self.model, self.sim.dt
        terms = None
        u = state.u
        if state.k % self.steps_per_sample == 0:
            terms = self.control(state.x, state.z)
            u = np.zeros(model.r) if terms is None else terms.u
        Y = np.concatenate([state.x, state.z])
        if self.stepper is not None:
            st = self.stepper
            Y_mid = st.predict(Y, self.forcing(Y, u))
            Y_new = st.advance(Y, self.forcing(Y_mid, u))
        else:
            Y_new = rk4_step(lambda v: self.field(v, u), Y, dt)
        old, new = self.norm(Y), self.norm(Y_new)
        drive = model.norm_x(model.g_at(state.x) @ u)
        if self.y_ref is not None:
            drive += model.norm_y(self.y_ref)
        if not new <= BLOWUP_FACTOR * (old + dt * drive):
            raise StepRejected(f"closed-loop norm grew from {old:.3e} to {new:.3e}",
                               time=(state.k + 1) * dt)
        n = model.n
        return LoopState(state.k + 1, Y_new[:n], Y_new[n:], u, terms)


def step(loop, state):
    return loop.step(state)


def simulate(loop, x0, z0, lyapunov=None):
    """Run ``loop`` from ``(x0, z0)`` over ``[0, T_final]`` and record monitors.

    Monitors need ``M(x)`` at every record; records that coincide with sample
    instants reuse the controller's evaluation.
    """
    model, graph, cfg = loop.model, loop.graph, loop.sim
    state = LoopState(0, np.array(x0, dtype=float), np.array(z0, dtype=float),
                      np.zeros(model.r))
    if state.x.shape != (model.n,) or state.z.shape != (model.m,):
        raise ConfigError("initial data has the wrong dimension")
    if lyapunov is None:
        lyapunov = energy_spec(model, beta=1.0)
    rows = {name: [] for name in ("V", "W", "u_norm", "defect_norm", "x_norm",
                                  "energy_residual")}
    times, xs, zs, us = [], [], [], []
    total = cfg.n_steps

    def record(state, terms):
        x, z = state.x, state.z
        if terms is not None and (loop.ctrl.mode == "full" or graph is None):
            M = terms.M
        elif graph is None:
            M = loop.M0 @ x
        else:
            M = evaluate(graph, x).M
        d = model.norm_y(z - M)
        u = state.u if terms is None else terms.u
        rows["V"].append(lyapunov.V(x))
        rows["W"].append(lyapunov.W(x, d))
        rows["u_norm"].append(model.norm_u(u))
        rows["defect_norm"].append(d)
        rows["x_norm"].append(model.norm_x(x))
        if lyapunov.V_rate is not None and lyapunov.vdot is not None:
            xdot = model.A @ x + model.f(x) + model.g_at(x) @ u
            rows["energy_residual"].append(lyapunov.V_rate(x, xdot) - lyapunov.vdot(x, u))
        else:
            rows["energy_residual"].append(np.nan)
        times.append(state.k * cfg.dt)
        xs.append(x)
        zs.append(z)
        us.append(u)

    k = 0
    while k < total:
        new = loop.step(state)
        if k % cfg.record_every == 0:
            # the held control applied on [t_k, t_k+1) is the one just computed
            state.u = new.u
            record(state, new.terms)
        state = new
        k += 1
    final_terms = None
    if total % loop.steps_per_sample == 0:
        final_terms = loop.control(state.x, state.z)
        if final_terms is not None:
            state.u = final_terms.u
    record(state, final_terms)
    monitors = {name: np.array(vals) for name, vals in rows.items()}
    meta = {"graph_evals": loop.n_evals, "steps": total}
    return Trajectory(times=np.array(times), states=np.array(xs), zs=np.array(zs),
                      us=np.array(us), monitors=monitors, meta=meta)


def fit_decay_rate(trace, times):
    """Least-squares slope of ``log(trace)`` over the final half of the record.

    Returns ``(rate, r2)``; a decaying trace has a negative rate. A constant
    trace is fitted exactly, so ``r2 = 1``.
    """
    trace = np.asarray(trace, dtype=float)
    times = np.asarray(times, dtype=float)
    if trace.size < 10 or trace.size != times.size:
        raise NonPositiveTrace("need at least 10 aligned samples")
    if not np.all(trace > 0):
        raise NonPositiveTrace("trace has non-positive entries")
    half = trace.size // 2
    t, y = times[half:], np.log(trace[half:])
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), r2


def control_energy(traj):
    """``int ||u||^2 dt`` with the held control on each record interval.

    Exact when records fall on sample instants.
    """
    u2 = np.asarray(traj.monitors["u_norm"]) ** 2
    return float(np.sum(u2[:-1] * np.diff(traj.times)))


def verify_W_decay(traj, spec, tol=1e-3):
    """Monotonicity, integrated dissipation and sublevel invariance of ``W``."""
    rep = ValidationReport()
    W = np.asarray(traj.monitors["W"])
    inc = np.diff(W) - W_STEP_RTOL * (1.0 + W[:-1])
    worst = float(inc.max()) if inc.size else 0.0
    rep.add("W nonincreasing", worst <= 0.0, worst, "max step increase beyond 1e-8 (1 + W)")
    budget = 0.5 * spec.beta * control_energy(traj)
    slack = float(W[0] - W[-1] - budget)
    rep.add("integrated dissipation", slack >= -tol, slack,
            f"W(0) - W(T) - beta/2 int |u|^2, tolerance {tol:g}")
    excess = float(W.max() - W[0])
    rep.add("sublevel invariance", excess <= tol, excess, "max W - W(0)")
    return rep


# -- export -------------------------------------------------------------------


def write_csv(traj, path, extra=None):
    """Monitor trace with the frozen column order, then any ``extra`` columns."""
    cols = [traj.times] + [traj.monitors[name] for name in CSV_COLUMNS[1:]]
    header = list(CSV_COLUMNS)
    for name, values in (extra or {}).items():
        header.append(name)
        cols.append(np.asarray(values, dtype=float))
    np.savetxt(path, np.column_stack(cols), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")


def json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_sidecar(path, meta):
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=json_default)
        fh.write("\n")

