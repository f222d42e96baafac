"""Rotating flexible Euler-Bernoulli beam as a cascade realization.

The beam is clamped to a rotating joint at ``xi = 0`` and free at ``xi = L``.
After the torque pre-compensation ``tau = -theta + theta_ref + tau~`` and the
change of variables ``phi = theta - theta_ref``, ``v = w + xi * phi``, the state
is ``x = [v_1..v_N, phi, p_1..p_N, omega]`` with ``p = dv/dt`` and
``omega = dphi/dt``. All physical constants other than the damping are 1.

Discretization
--------------
Nodes ``xi_i = i h`` for ``i = 1..N`` with ``h = L / N``; ``v_0 = 0`` is not
stored. The curvature operator ``D2`` evaluates second differences at nodes
``0..N-1`` after eliminating the ghost value ``v_{-1} = v_1 - 2 h phi`` (this
encodes ``v'(0) = phi``); ``v''(L) = 0`` makes node ``N`` drop out. With
trapezoidal weights ``Wq`` the bending energy is ``(D2 v^)^T Wq (D2 v^)`` where
``v^ = [v, phi]``, and its gradient ``G = D2^T Wq D2`` supplies both the
fourth-derivative term of the ``p`` equation and the root curvature ``v''(0)``
in the joint equation. Sharing ``G`` between the Gram matrix and the dynamics
makes the energy identities hold to rounding error.
"""

from dataclasses import dataclass

import numpy as np

from fcascade.errors import InvalidParams
from fcascade.model import CascadeRealization
from fcascade.wlinalg import GramForm

PROBE_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class BeamParams:
    N: int = 32
    L: float = 1.0
    lam: float = 1.0
    theta_ref: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 8:
            raise InvalidParams(f"N must be an integer >= 8, got {self.N}")
        if not self.L > 0:
            raise InvalidParams(f"L must be positive, got {self.L}")
        if not self.lam > 0:
            raise InvalidParams(f"damping lambda must be positive, got {self.lam}")
        if not np.isfinite(self.theta_ref):
            raise InvalidParams("theta_ref must be finite")

    @property
    def h(self):
        return self.L / self.N

    @property
    def n(self):
        return 2 * self.N + 2


class BeamLayout:
    """Index bookkeeping and quadrature data for one grid."""

    def __init__(self, params):
        N, h = params.N, params.h
        self.params = params
        self.N = N
        self.xi = h * np.arange(1, N + 1)
        self.v = slice(0, N)
        self.phi = N
        self.p = slice(N + 1, 2 * N + 1)
        self.omega = 2 * N + 1
        # trapezoid on [0, L]; the p_0 = 0 node carries no weight
        self.wp = np.full(N, h)
        self.wp[-1] = 0.5 * h
        self.wq = np.full(N, h)
        self.wq[0] = 0.5 * h
        self.D2 = self._curvature_operator()
        self.G = self.D2.T @ (self.wq[:, None] * self.D2)

    def _curvature_operator(self):
        N, h = self.N, self.params.h
        D = np.zeros((N, N + 1))
        # node 0 with the ghost v_{-1} = v_1 - 2 h phi eliminated
        D[0, 0] = 2.0
        D[0, N] = -2.0 * h
        # node i couples v_{i-1}, v_i, v_{i+1}, stored at columns i-2, i-1, i
        for i in range(1, N):
            if i - 2 >= 0:
                D[i, i - 2] = 1.0
            D[i, i - 1] = -2.0
            D[i, i] = 1.0
        return D / h**2

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[self.v], x[self.phi], x[self.p], x[self.omega]

    def join(self, v, phi, p, omega):
        return np.concatenate([np.asarray(v, float), [phi], np.asarray(p, float), [omega]])

    def integral(self, a, b=None):
        """Trapezoidal ``int_0^L a b dxi`` on the stored nodes (value 0 at xi = 0)."""
        return float(np.dot(self.wp, a if b is None else a * b))

    def root_curvature(self, v, phi):
        """Discrete ``v''(0)``: minus the ``phi`` component of ``G v^``."""
        return -float(self.G[self.N] @ np.append(v, phi))


@dataclass(frozen=True)
class BeamState:
    v: np.ndarray
    phi: float
    p: np.ndarray
    omega: float

    @classmethod
    def from_vector(cls, x, layout):
        v, phi, p, omega = layout.split(x)
        return cls(v.copy(), float(phi), p.copy(), float(omega))

    def to_vector(self):
        return np.concatenate([self.v, [self.phi], self.p, [self.omega]])


def gram_matrix(layout):
    """Block Gram matrix of ``H1 x H0``: ``phi^2 + int v''^2`` and ``omega^2 + int p^2``."""
    N = layout.N
    n = 2 * N + 2
    Q = np.zeros((n, n))
    H1 = layout.G.copy()
    H1[N, N] += 1.0
    Q[: N + 1, : N + 1] = H1
    Q[layout.p, layout.p] = np.diag(layout.wp)
    Q[layout.omega, layout.omega] = 1.0
    return Q


def linear_operator(layout):
    """Matrix of the linear part of the pre-stabilized beam."""
    N, lam, xi, wp = layout.N, layout.params.lam, layout.xi, layout.wp
    n = 2 * N + 2
    A = np.zeros((n, n))
    v, phi, p, om = layout.v, layout.phi, layout.p, layout.omega
    A[v, p] = np.eye(N)
    A[phi, om] = 1.0
    # p' = -v'''' - lam p + lam xi omega
    A[p, : N + 1] = -layout.G[:N] / wp[:, None]
    A[p, p] = -lam * np.eye(N)
    A[p, om] = lam * xi
    # omega' = v''(0) - phi - omega - lam int xi p
    A[om, : N + 1] = -layout.G[N]
    A[om, phi] -= 1.0
    A[om, om] = -1.0
    A[om, p] = -lam * xi * wp
    return A


def _nonlinear_terms(layout):
    N, xi, wp = layout.N, layout.xi, layout.wp
    sv, ip, iom = layout.v, layout.p, layout.omega
    iphi = layout.phi

    def f(x):
        v, phi, p = x[sv], x[iphi], x[ip]
        om = x[iom]
        out = np.zeros_like(x)
        out[ip] = om * om * (v - xi * phi)
        out[iom] = -om * np.dot(wp, v * p) + phi * om * np.dot(wp, xi * p)
        return out

    def df(x):
        return df_apply(x, np.eye(x.size))

    def df_apply(x, V):
        v, phi, p = x[sv], x[iphi], x[ip]
        om = x[iom]
        mat = np.ndim(V) == 2
        Vm = V if mat else V[:, None]
        dv, dphi, dp, dom = Vm[sv], Vm[iphi], Vm[ip], Vm[iom]
        out = np.zeros_like(Vm, dtype=float)
        w = v - xi * phi
        out[ip] = om * om * (dv - xi[:, None] * dphi) + 2.0 * om * w[:, None] * dom
        wv, wxi = wp * v, wp * xi
        vp = np.dot(wp, v * p)
        xp = np.dot(wxi, p)
        out[iom] = (-dom * vp - om * ((wp * p) @ dv + wv @ dp)
                    + (dphi * om + phi * dom) * xp + phi * om * (wxi @ dp))
        return out if mat else out[:, 0]

    return f, df, df_apply


def assemble(params):
    """Build the beam cascade realization: ``u`` enters the joint, ``z' = phi``."""
    if not isinstance(params, BeamParams):
        raise InvalidParams(f"expected BeamParams, got {type(params).__name__}")
    lay = BeamLayout(params)
    n = params.n
    A = linear_operator(lay)
    B = np.zeros((n, 1))
    B[lay.omega, 0] = 1.0
    C = np.zeros((1, n))
    C[0, lay.phi] = 1.0
    f, df, df_apply = _nonlinear_terms(lay)
    return CascadeRealization(
        A=A, C=C, S=np.zeros((1, 1)), g=B, f=f, df=df, df_apply=df_apply,
        QX=GramForm(gram_matrix(lay)), name="beam",
        meta={"params": params, "layout": lay},
    )


def layout_of(model):
    return model.meta["layout"]


# -- energies -----------------------------------------------------------------


def energy(x, QX):
    """Total energy ``V = 1/2 ||x||_X^2``."""
    x = np.asarray(x, dtype=float)
    Q = QX.Q if isinstance(QX, GramForm) else np.asarray(QX)
    return 0.5 * float(x @ Q @ x)


def energy_rate(x, u, layout):
    """``-lam int p^2 - omega^2 + u omega``: the exact dissipation of ``V``."""
    _, _, p, om = layout.split(x)
    u = float(np.ravel(u)[0]) if np.ndim(u) else float(u)
    return -layout.params.lam * layout.integral(p, p) - om * om + u * om


ISS_GAIN = 0.5


def strict_energy_matrix(layout, eps):
    """Quadratic form of ``V_eps`` so that ``V_eps(x) = x^T Q x``."""
    N, wp, lam = layout.N, layout.wp, layout.params.lam
    Q = 0.5 * gram_matrix(layout)
    v, p = layout.v, layout.p
    Wp = np.diag(wp)
    Q[v, p] += 0.5 * eps * Wp
    Q[p, v] += 0.5 * eps * Wp
    Q[layout.phi, layout.omega] += 0.5 * eps
    Q[layout.omega, layout.phi] += 0.5 * eps
    Q[v, v] += 0.5 * eps * lam * Wp
    Q[layout.phi, layout.phi] += 0.5 * eps
    return Q


def strict_energy(x, eps, layout):
    """``V + eps int v p + eps phi omega + (eps lam / 2) int v^2 + (eps / 2) phi^2``."""
    v, phi, p, om = layout.split(x)
    lam = layout.params.lam
    return (energy(x, gram_matrix(layout))
            + eps * layout.integral(v, p) + eps * phi * om
            + 0.5 * eps * lam * layout.integral(v, v) + 0.5 * eps * phi * phi)


def strict_energy_coercivity(layout, eps):
    """Smallest generalized eigenvalue ``c`` with ``V_eps(x) >= c ||x||_X^2``."""
    Qx = GramForm(gram_matrix(layout))
    W = Qx.inv_sqrt
    H = W @ strict_energy_matrix(layout, eps) @ W
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])


def eps_max(layout):
    """Supremum of ``eps`` for which ``V_eps`` stays positive definite.

    ``V_eps = 1/2 ||x||^2 + eps K(x)``, so the smallest generalized eigenvalue
    is ``1/2 + eps kappa`` with ``kappa`` the most negative eigenvalue of ``K``
    relative to the Gram matrix.
    """
    Qx = GramForm(gram_matrix(layout))
    W = Qx.inv_sqrt
    K = strict_energy_matrix(layout, 1.0) - 0.5 * Qx.Q
    kappa = float(np.linalg.eigvalsh(W @ K @ W)[0])
    return np.inf if kappa >= 0 else 0.5 / -kappa


def strict_energy_rate_remainder(x, layout):
    """Remainder ``R`` collecting the non-sign-definite terms of ``dV_eps/dt``.

    With it, exactly along the dynamics,
    ``dV_eps/dt = (eps - lam) ||p||^2 + (eps - 1) omega^2 + u omega - eps int v''^2
    - eps phi^2 + eps u phi + eps R``. The first two terms carry the signs of
    ``lam xi omega + omega^2 (v - xi phi)`` in the ``p`` equation.
    """
    v, phi, p, om = layout.split(x)
    lam, xi = layout.params.lam, layout.xi
    return (lam * om * layout.integral(xi, v)
            + om * om * layout.integral(v - xi * phi, v)
            - phi * om * layout.integral(v, p)
            + (phi * om - lam) * phi * layout.integral(xi, p))


# -- coordinates and torque -----------------------------------------------------


def to_original(x, params, layout=None):
    """Map shifted coordinates to ``(w, theta, w_dot, theta_dot)``."""
    layout = BeamLayout(params) if layout is None else layout
    v, phi, p, om = layout.split(x)
    xi = layout.xi
    return v - xi * phi, phi + params.theta_ref, p - xi * om, om


def from_original(w, theta, w_dot, theta_dot, params, layout=None):
    layout = BeamLayout(params) if layout is None else layout
    xi = layout.xi
    phi = theta - params.theta_ref
    return layout.join(np.asarray(w) + xi * phi, phi, np.asarray(w_dot) + xi * theta_dot,
                       theta_dot)


def rest_state(params, theta0=0.0, layout=None):
    """Undeformed beam at rest at angle ``theta0``, in shifted coordinates."""
    layout = BeamLayout(params) if layout is None else layout
    N = params.N
    return from_original(np.zeros(N), theta0, np.zeros(N), 0.0, params, layout)


def total_torque(x, u, params, layout=None):
    """Physical joint torque ``tau = -phi + tau~`` for the shifted state ``x``."""
    layout = BeamLayout(params) if layout is None else layout
    v, phi, p, om = layout.split(x)
    u = float(np.ravel(u)[0]) if np.ndim(u) else float(u)
    tau_tilde = (-om * layout.integral(v, p)
                 + (phi * om - params.lam) * layout.integral(layout.xi, p)
                 - om + u)
    return -phi + tau_tilde


def probe_deflections(w, layout):
    """Deflection at the probe stations ``xi = k L / 5``."""
    idx = [int(round(fr * layout.N)) - 1 for fr in PROBE_FRACTIONS]
    return np.asarray(w)[idx]


def deflection_norm(w, layout):
    """Discrete ``L2`` norm of the physical deflection."""
    return float(np.sqrt(layout.integral(w, w)))


def steady_state(params, u, layout=None):
    """The exact stationary profile for a constant input: ``v = u xi``, ``phi = u``."""
    layout = BeamLayout(params) if layout is None else layout
    N = params.N
    return layout.join(u * layout.xi, u, np.zeros(N), 0.0)


def smooth_random_state(model, rng, energy_level=1.0, modes=6):
    """Random combination of the slowest eigenmodes of ``A``, scaled to ``V = energy_level``.

    Built from modes so that the data is smooth and resolved by the grid.
    """
    w, Vec = np.linalg.eig(model.A)
    order = np.argsort(np.abs(w))
    picked, seen = [], 0
    for k in order:
        if w[k].imag < 0:
            continue
        picked.append(k)
        seen += 1
        if seen == modes:
            break
    x = np.zeros(model.n)
    for k in picked:
        c = rng.standard_normal() + 1j * rng.standard_normal()
        x += np.real(c * Vec[:, k])
    return x * np.sqrt(2.0 * energy_level) / model.QX.norm(x)


# -- instrumentation ------------------------------------------------------------


def lyapunov_spec(model, eps=None):
    """Energy ``V`` with gain ``beta = 1/2`` and its exact dissipation rate.

    With ``eps`` the strictified functional ``V_eps`` is attached as well.
    """
    from fcascade.sim import LyapunovSpec

    lay = layout_of(model)
    Q = model.QX.Q
    V_eps = None
    if eps is not None:
        Qe = strict_energy_matrix(lay, eps)
        V_eps = lambda x: float(x @ Qe @ x)  # noqa: E731
    return LyapunovSpec(
        V=lambda x: energy(x, Q), beta=ISS_GAIN,
        V_rate=lambda x, xd: float(x @ Q @ xd),
        vdot=lambda x, u: energy_rate(x, u, lay),
        V_eps=V_eps,
    )


def original_columns(traj, model):
    """``theta``, ``theta_ref`` and the probe deflections ``w_1..w_5`` per record."""
    lay = layout_of(model)
    params = lay.params
    thetas, probes = [], []
    for x in traj.states:
        w, theta, _, _ = to_original(x, params, lay)
        thetas.append(theta)
        probes.append(probe_deflections(w, lay))
    probes = np.array(probes).reshape(len(thetas), len(PROBE_FRACTIONS))
    cols = {"theta": np.array(thetas),
            "theta_ref": np.full(len(thetas), params.theta_ref)}
    for j in range(len(PROBE_FRACTIONS)):
        cols[f"w_{j + 1}"] = probes[:, j]
    return cols
