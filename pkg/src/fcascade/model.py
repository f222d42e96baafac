"""Finite-dimensional realizations of the cascade

    x' = A x + f(x) + g(x) u
    z' = S z + C x + h(x)

with ``x`` in an ``n``-dimensional state space, ``z`` in an ``m``-dimensional
output space and ``u`` in an ``r``-dimensional input space. Each space carries
a Gram form so norms and adjoints follow the weighted inner products.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from fcascade.errors import DimensionMismatch, NonzeroS
from fcascade.wlinalg import GramForm, _as_gram

FD_POINTS = 20
FD_RTOL = 1e-5
FD_STEP = 1e-5
JAC_ORIGIN_TOL = 1e-10
SKEW_RTOL = 1e-12
DISSIPATIVITY_TOL = 1e-10


def _zero_map(n, m):
    def f(x):
        return np.zeros(m)

    def df(x):
        return np.zeros((m, n))

    return f, df


@dataclass(frozen=True, eq=False)
class CascadeRealization:
    """Immutable container for the operators of a cascade.

    ``f``, ``h`` and their Jacobians ``df``, ``dh`` are pure callables of the
    ``n``-vector ``x``. ``g`` is either a constant ``n x r`` array or a
    callable returning one. ``df_apply(x, V)``, if given, must equal
    ``df(x) @ V`` and is used by the graph quadrature to avoid forming
    ``df(x)`` explicitly.
    """

    A: np.ndarray
    C: np.ndarray
    S: np.ndarray
    g: object
    f: Optional[Callable] = None
    df: Optional[Callable] = None
    h: Optional[Callable] = None
    dh: Optional[Callable] = None
    QX: Optional[GramForm] = None
    QY: Optional[GramForm] = None
    QU: Optional[GramForm] = None
    df_apply: Optional[Callable] = None
    name: str = "cascade"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        n, m = A.shape[0], S.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if S.shape != (m, m):
            raise DimensionMismatch(f"S must be square, got {S.shape}")
        if C.shape != (m, n):
            raise DimensionMismatch(f"C must be {m}x{n}, got {C.shape}")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("A", A)
        set_("C", C)
        set_("S", S)
        if callable(self.g):
            r = np.atleast_2d(np.asarray(self.g(np.zeros(n)))).reshape(n, -1).shape[1]
        else:
            G = np.asarray(self.g, dtype=float).reshape(n, -1)
            set_("g", G)
            r = G.shape[1]
        if self.f is None:
            f, df = _zero_map(n, n)
            set_("f", f)
            set_("df", df)
        elif self.df is None:
            raise ValueError("an analytic Jacobian df must accompany f")
        if self.h is None:
            h, dh = _zero_map(n, m)
            set_("h", h)
            set_("dh", dh)
            self.meta["h_zero"] = True
        elif self.dh is None:
            raise ValueError("an analytic Jacobian dh must accompany h")
        set_("QX", _as_gram(self.QX, n))
        set_("QY", _as_gram(self.QY, m))
        set_("QU", _as_gram(self.QU, r))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.S.shape[0]

    @property
    def r(self):
        return self.QU.dim

    @property
    def g_is_constant(self):
        return not callable(self.g)

    def g_at(self, x):
        if callable(self.g):
            return np.asarray(self.g(x), dtype=float).reshape(self.n, self.r)
        return self.g

    def df_times(self, x, V):
        """``df(x) @ V`` for a vector or a matrix of directions."""
        if self.df_apply is not None:
            return self.df_apply(x, V)
        return self.df(x) @ V

    @property
    def has_zero_S(self):
        return not np.any(self.S)

    def norm_x(self, x):
        return self.QX.norm(x)

    def norm_y(self, z):
        return self.QY.norm(z)

    def norm_u(self, u):
        return self.QU.norm(u)


def _check_dims(model, x=None, z=None, u=None):
    if x is not None and np.shape(x) != (model.n,):
        raise DimensionMismatch(f"x has shape {np.shape(x)}, expected ({model.n},)")
    if z is not None and np.shape(z) != (model.m,):
        raise DimensionMismatch(f"z has shape {np.shape(z)}, expected ({model.m},)")
    if u is not None and np.shape(u) != (model.r,):
        raise DimensionMismatch(f"u has shape {np.shape(u)}, expected ({model.r},)")


def rhs(model, x, z, u):
    """Vector field of the open cascade at ``(x, z)`` under input ``u``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    _check_dims(model, x, z, u)
    dx = model.A @ x + model.f(x) + model.g_at(x) @ u
    dz = model.S @ z + model.C @ x + model.h(x)
    return dx, dz


def rhs_regulated(model, x, z, u, y_ref):
    """Vector field with the output integrator ``z' = C x + h(x) - y_ref``.

    Only defined for ``S = 0``.
    """
    if not model.has_zero_S:
        raise NonzeroS("integral action requires S = 0")
    y_ref = np.asarray(y_ref, dtype=float).reshape(-1)
    _check_dims(model, z=y_ref)
    dx, dz = rhs(model, x, z, u)
    return dx, dz - y_ref


# -- validation ---------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float = float("nan")
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "value": float(self.value),
                "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def add(self, name, passed, value=float("nan"), detail=""):
        self.checks.append(CheckResult(name, bool(passed), float(value), detail))

    def to_dict(self):
        return {"ok": self.ok, "checks": [c.to_dict() for c in self.checks]}

    def format(self):
        lines = []
        for c in self.checks:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"[{mark}] {c.name:<28} {c.value: .3e}  {c.detail}")
        return "\n".join(lines)


def _random_states(model, rng, count):
    """Random states with X-norms spread over [0.1, 1]."""
    out = []
    for _ in range(count):
        x = rng.standard_normal(model.n)
        x *= rng.uniform(0.1, 1.0) / max(model.norm_x(x), 1e-300)
        out.append(x)
    return out


def _fd_jacobian(fun, x, step):
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.column_stack(cols)


def _jacobian_error(fun, jac, x):
    step = FD_STEP * (1.0 + np.linalg.norm(x))
    J = np.atleast_2d(jac(x))
    J_fd = _fd_jacobian(fun, x, step).reshape(J.shape)
    scale = max(np.linalg.norm(J), np.linalg.norm(J_fd))
    err = np.linalg.norm(J - J_fd)
    return 0.0 if err == 0.0 else err / scale


def dissipativity_margin(model):
    """Largest Rayleigh quotient of ``x^T QX A x / x^T QX x``."""
    Q = model.QX
    sym = Q.Q @ model.A
    sym = 0.5 * (sym + sym.T)
    W = Q.inv_sqrt
    H = W @ sym @ W
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[-1])


def validate(model, rng=None, seed=42):
    """Check every structural hypothesis that is decidable in finite dimensions.

    Returns a :class:`ValidationReport`; nothing is raised for failed checks.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    rep = ValidationReport()
    n, m = model.n, model.m
    x0 = np.zeros(n)

    f0 = np.asarray(model.f(x0), dtype=float)
    rep.add("f(0) = 0", np.all(f0 == 0.0), np.abs(f0).max(initial=0.0))
    h0 = np.asarray(model.h(x0), dtype=float)
    rep.add("h(0) = 0", np.all(h0 == 0.0), np.abs(h0).max(initial=0.0))
    df0 = np.abs(np.asarray(model.df(x0))).max(initial=0.0)
    rep.add("df(0) = 0", df0 <= JAC_ORIGIN_TOL, df0)
    dh0 = np.abs(np.asarray(model.dh(x0))).max(initial=0.0)
    rep.add("dh(0) = 0", dh0 <= JAC_ORIGIN_TOL, dh0)

    QS = model.QY.Q @ model.S
    skew = np.linalg.norm(QS + QS.T)
    ref = np.linalg.norm(QS)
    rep.add("S skew-adjoint", skew <= SKEW_RTOL * ref, skew / ref if ref else 0.0,
            "w.r.t. QY")

    margin = dissipativity_margin(model)
    # rounding in QX A grows with the operator scale
    scale = np.linalg.norm(model.QX.inv_sqrt @ model.QX.Q @ model.A @ model.QX.inv_sqrt, 2)
    tol = max(DISSIPATIVITY_TOL, 1e-14 * scale)
    rep.add("A dissipative", margin <= tol, margin, f"tolerance {tol:.1e}")

    eig_max = float(np.max(np.linalg.eigvals(model.A).real))
    rep.add("A exponentially stable", eig_max < 0.0, eig_max, "max Re(eig A)")

    pts = _random_states(model, rng, FD_POINTS)
    err_f = max(_jacobian_error(model.f, model.df, x) for x in pts)
    rep.add("df matches finite diff", err_f <= FD_RTOL, err_f)
    err_h = max(_jacobian_error(model.h, model.dh, x) for x in pts)
    rep.add("dh matches finite diff", err_h <= FD_RTOL, err_h)
    if model.df_apply is not None:
        V = rng.standard_normal((n, 3))
        err = max(np.linalg.norm(model.df_apply(x, V) - model.df(x) @ V)
                  / max(np.linalg.norm(model.df(x) @ V), 1e-300) for x in pts[:5])
        rep.add("df_apply consistent", err <= 1e-10, err)
    return rep


# -- stock models -------------------------------------------------------------


def scalar_cubic_model():
    """``x' = -x - x^3 + u``, ``z' = x``: the one-dimensional oracle model.

    Its invariant graph is ``M(x) = -arctan(x)``.
    """
    def df_apply(x, V):
        d = -3.0 * x * x
        return d[:, None] * V if V.ndim == 2 else d * V

    return CascadeRealization(
        A=[[-1.0]], C=[[1.0]], S=[[0.0]], g=[[1.0]],
        f=lambda x: -x * x * x,
        df=lambda x: np.diag(-3.0 * x * x),
        df_apply=df_apply,
        name="scalar",
    )


def linear_model(A, B, C, S=None, QX=None, QY=None, QU=None, name="custom-linear"):
    """Cascade with ``f = h = 0`` and constant input matrix ``B``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if S is None:
        S = np.zeros((C.shape[0], C.shape[0]))
    return CascadeRealization(A=A, C=C, S=S, g=B, QX=QX, QY=QY, QU=QU, name=name)
