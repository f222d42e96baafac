"""Invariant graph of the uncontrolled cascade.

The map ``M`` solves ``dM(x) (A x + f(x)) = S M(x) + C x + h(x)`` with
``M(0) = 0``. Its linear part ``M0`` solves the Sylvester equation
``M0 A = S M0 + C`` and the nonlinear part is an improper integral along the
uncontrolled flow ``T_t``::

    M(x) = M0 x + int_0^inf exp(-t S) [M0 f(T_t x) - h(T_t x)] dt

The integral is evaluated with Gregory's endpoint-corrected trapezoidal rule
on the grid of the IMEX integrator and truncated once ``||T_t x||`` falls below a floor. The
differential is obtained by propagating the exact tangent of the discrete
flow alongside it, so ``eval_dM`` is the derivative of the computed ``M``
rather than a separate approximation.
"""

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from fcascade.errors import HorizonExceeded, StepRejected
from fcascade.integrators import ExpMidpoint, ImexCN
from fcascade.trajectory import Trajectory
from fcascade.wlinalg import matrix_exp, solve_linear, solve_sylvester, sylvester_residual

BLOWUP_FACTOR = 10.0
SCHEMES = {"imex-cn": ImexCN, "expmid": ExpMidpoint}
M0_CHECK_PROBES = 5
M0_CHECK_RTOL = 1e-8


class TailWarning(UserWarning):
    """The estimated truncation error of the graph integral exceeds ``tail_tol``."""


@dataclass(frozen=True)
class QuadConfig:
    """Numerical parameters of the graph quadrature.

    ``decay_floor`` is relative to ``||x||_X``; the horizon ``T*`` is the first
    time the flow drops below ``max(decay_floor * ||x||, abs_floor)``.
    ``scheme`` selects the flow integrator: ``"imex-cn"`` (Crank-Nicolson with
    a predicted midpoint) or ``"expmid"`` (exponential midpoint, exact on the
    linear part; preferred for stiff models at large steps). For
    ``"imex-cn"``, ``corrections`` is the number of fixed-point passes that
    replace the predicted midpoint by the average of the step endpoints; each
    pass moves the step toward the implicit midpoint rule and shrinks its
    error constant.
    """

    step: float = 1e-3
    tail_tol: float = 1e-8
    max_horizon: float = 200.0
    decay_floor: float = 1e-8
    abs_floor: float = 0.0
    corrections: int = 1
    scheme: str = "imex-cn"

    def __post_init__(self):
        for name in ("step", "tail_tol", "max_horizon", "decay_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"QuadConfig.{name} must be positive")
        if self.abs_floor < 0:
            raise ValueError("QuadConfig.abs_floor must be non-negative")
        if int(self.corrections) != self.corrections or self.corrections < 0:
            raise ValueError("QuadConfig.corrections must be a non-negative integer")
        if self.scheme not in SCHEMES:
            raise ValueError(f"QuadConfig.scheme must be one of {sorted(SCHEMES)}")


# -- linear part ----------------------------------------------------------------


def _m0_integral_formula(A, S, C, x, horizon):
    """``C A^{-1} x - int_0^T S exp(-tS) C A^{-1} exp(tA) x dt`` via one augmented exponential.

    With ``K = S C A^{-1}`` and ``rho' = S rho + K y``, ``y' = A y`` the
    integral equals ``exp(-T S) rho(T)``.
    """
    n, m = A.shape[0], S.shape[0]
    CAinv = solve_linear(A.T, C.T).T
    big = np.zeros((n + m, n + m))
    big[:n, :n] = A
    big[n:, :n] = S @ CAinv
    big[n:, n:] = S
    yr = spla.expm(horizon * big) @ np.concatenate([x, np.zeros(m)])
    return CAinv @ x - spla.expm(-horizon * S) @ yr[n:]


def compute_M0(model, rng=None):
    """Solve ``M0 A - S M0 = C`` and cross-check it by an independent route.

    Returns ``(M0, discrepancy)``. For ``S = 0`` the check is against
    ``C A^{-1}``; otherwise against the integral representation on random
    probes.
    """
    A, S, C = model.A, model.S, model.C
    M0 = solve_sylvester(A, S, C)
    if model.has_zero_S:
        ref = solve_linear(A.T, C.T).T
        disc = np.linalg.norm(M0 - ref) / max(np.linalg.norm(ref), 1e-300)
    else:
        rng = np.random.default_rng(0) if rng is None else rng
        rate = -float(np.max(np.linalg.eigvals(A).real))
        horizon = 40.0 / rate
        disc = 0.0
        for _ in range(M0_CHECK_PROBES):
            x = rng.standard_normal(model.n)
            ref = _m0_integral_formula(A, S, C, x, horizon)
            disc = max(disc, np.linalg.norm(M0 @ x - ref) / max(np.linalg.norm(ref), 1e-300))
    if disc > M0_CHECK_RTOL:
        warnings.warn(f"Sylvester solution disagrees with the reference formula ({disc:.2e})")
    return M0, float(disc)


@dataclass(frozen=True, eq=False)
class GraphMap:
    model: object
    M0: np.ndarray
    quad: QuadConfig
    stepper: ImexCN
    S_step: np.ndarray
    m0_discrepancy: float

    @property
    def sylvester_residual(self):
        m = self.model
        return sylvester_residual(self.M0, m.A, m.S, m.C)


def build_graph(model, quad=None):
    quad = QuadConfig() if quad is None else quad
    rate = -float(np.max(np.linalg.eigvals(model.A).real))
    if rate <= 0:
        raise ValueError("A is not exponentially stable; the graph integral diverges")
    if quad.max_horizon < 1.0 / rate:
        raise ValueError(f"max_horizon {quad.max_horizon} is below 1/decay rate {1 / rate:.3g}")
    M0, disc = compute_M0(model)
    return GraphMap(
        model=model, M0=M0, quad=quad, stepper=SCHEMES[quad.scheme](model.A, quad.step),
        S_step=matrix_exp(model.S, -quad.step), m0_discrepancy=disc,
    )


# -- open-loop flow -----------------------------------------------------------


def open_loop_flow(model, x0, T, step):
    """Integrate ``x' = A x + f(x)`` over ``[0, T]`` and record every step."""
    stepper = ImexCN(model.A, step)
    n_steps = int(round(T / step))
    x = np.array(x0, dtype=float)
    states = [x.copy()]
    norm = model.norm_x(x)
    for k in range(n_steps):
        x = stepper.step(x, model.f)
        new_norm = model.norm_x(x)
        if not np.isfinite(new_norm) or new_norm > BLOWUP_FACTOR * max(norm, 1e-300):
            raise StepRejected("open-loop flow blew up", time=(k + 1) * step)
        norm = new_norm
        states.append(x.copy())
    return Trajectory(times=step * np.arange(n_steps + 1), states=np.array(states))


# -- nonlinear part -------------------------------------------------------------


@dataclass
class GraphEval:
    M: np.ndarray
    dM: np.ndarray
    T_star: float
    tail: float
    steps: int


def _decay_rate(times, log_norms):
    """Slope of ``-log ||x||`` over the last decade of the recorded decay."""
    t = np.asarray(times)
    y = np.asarray(log_norms)
    sel = y <= y[-1] + np.log(10.0)
    if sel.sum() < 3:
        sel = slice(max(0, t.size - 3), None)
    tt, yy = t[sel], y[sel]
    if tt.size < 2 or np.ptp(tt) == 0:
        return 0.0
    return -float(np.polyfit(tt, yy, 1)[0])


def _gregory_correction(head, last, s):
    """Endpoint corrections turning the composite trapezoid rule into
    Gregory's fourth-order rule (second differences at both ends)."""
    f0, f1, f2 = head
    fn2, fn1, fn = last
    return (-(s / 12.0) * ((fn - fn1) - (f1 - f0))
            - (s / 24.0) * ((fn - 2.0 * fn1 + fn2) + (f2 - 2.0 * f1 + f0)))


def evaluate(graph, x, directions=None):
    """Evaluate ``M(x)`` and ``dM(x) @ directions`` from one trajectory solve.

    ``directions`` is an ``n x k`` array (``None`` means no derivative, the
    string ``"all"`` the full Jacobian). Raises :class:`HorizonExceeded` if
    the flow has not decayed by ``quad.max_horizon``.
    """
    model, quad, st = graph.model, graph.quad, graph.stepper
    M0 = graph.M0
    n, m = model.n, model.m
    x = np.array(x, dtype=float)
    if isinstance(directions, str):
        directions = np.eye(n)
    D = None if directions is None else np.array(directions, dtype=float).reshape(n, -1)
    k = 0 if D is None else D.shape[1]
    D0 = D

    nx0 = model.norm_x(x)
    floor = max(quad.decay_floor * nx0, quad.abs_floor)
    if nx0 == 0.0 or nx0 <= floor:
        dM = M0 @ D if D is not None else np.zeros((m, 0))
        return GraphEval(M0 @ x, dM, 0.0, 0.0, 0)

    # base point and tangent directions advance together as the columns of
    # one augmented state Y = [y | D]; the tangent columns follow the exact
    # derivative of the discrete step
    s = st.dt
    n_corr = quad.corrections if isinstance(st, ImexCN) else 0
    Qx = model.QX.Q
    f, h, dh, df_times = model.f, model.h, model.dh, model.df_times
    h_zero = model.meta.get("h_zero", False)
    rotate = not model.has_zero_S
    E = np.eye(m)

    def forcing(Y):
        out = np.empty_like(Y)
        out[:, 0] = f(Y[:, 0])
        if k:
            out[:, 1:] = df_times(Y[:, 0], Y[:, 1:])
        return out

    def integrand(Y, G):
        val = M0 @ G
        if not h_zero:
            y = Y[:, 0]
            val[:, 0] -= h(y)
            if k:
                val[:, 1:] -= dh(y) @ Y[:, 1:]
        return val

    Y = np.column_stack([x, D]) if k else x[:, None].copy()
    G = forcing(Y)
    I_first = I_prev = integrand(Y, G)
    head = [I_prev]
    last = deque([I_prev], maxlen=3)
    total = I_prev.copy()
    norm = nx0
    norms = [nx0]
    steps = 0
    max_steps = int(np.ceil(quad.max_horizon / s))
    while norm > floor:
        if steps >= max_steps:
            raise HorizonExceeded(
                f"||T_t x|| = {norm:.3e} still above floor {floor:.3e} at t = {steps * s:.4g}"
            )
        Y_mid = st.predict(Y, G)
        for _ in range(n_corr):
            # (Y + advance(Y, F)) / 2 == predict(Y, F) for Crank-Nicolson
            Y_mid = st.predict(Y, forcing(Y_mid))
        Y_new = st.advance(Y, forcing(Y_mid))
        y = Y_new[:, 0]
        new_norm = float(np.sqrt(max(y @ Qx @ y, 0.0)))
        if not new_norm <= BLOWUP_FACTOR * norm:
            raise StepRejected("uncontrolled flow blew up during graph quadrature",
                               time=(steps + 1) * s)
        Y, norm = Y_new, new_norm
        G = forcing(Y)
        steps += 1
        I_prev = integrand(Y, G)
        if rotate:
            E = E @ graph.S_step
            I_prev = E @ I_prev
        total += I_prev
        if steps < 3:
            head.append(I_prev)
        last.append(I_prev)
        norms.append(norm)

    t = steps * s
    # composite trapezoid, then Gregory's endpoint terms
    acc = s * (total - 0.5 * (I_first + I_prev))
    if steps >= 4:
        acc += _gregory_correction(head, last, s)

    times = s * np.arange(steps + 1)
    with np.errstate(divide="ignore"):
        logs = np.log(np.array(norms))
    mu = _decay_rate(times, logs) if np.isfinite(logs[-1]) else np.inf
    tail_integrand = np.linalg.norm(I_prev[:, 0])
    if tail_integrand == 0.0:
        tail = 0.0
    elif mu > 0:
        # integrand vanishes at least quadratically with ||x||
        tail = tail_integrand / (2.0 * mu)
    else:
        tail = np.inf
    if tail > quad.tail_tol:
        warnings.warn(f"graph tail estimate {tail:.2e} exceeds tail_tol {quad.tail_tol:.1e}",
                      TailWarning, stacklevel=2)
    dM = M0 @ D0 + acc[:, 1:] if k else np.zeros((m, 0))
    return GraphEval(M0 @ x + acc[:, 0], dM, t, float(tail), steps)


def eval_M(graph, x):
    return evaluate(graph, x).M


def eval_dM(graph, x, directions="all"):
    return evaluate(graph, x, directions).dM


def forwarding_residual(graph, x):
    """``||dM(x)(Ax + f(x)) - S M(x) - C x - h(x)||_Y`` at a single state."""
    model = graph.model
    x = np.asarray(x, dtype=float)
    drift = model.A @ x + model.f(x)
    ev = evaluate(graph, x, drift[:, None])
    res = ev.dM[:, 0] - model.S @ ev.M - model.C @ x - model.h(x)
    return model.norm_y(res)
