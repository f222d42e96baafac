"""Dense weighted linear algebra.

Everything here works on small dense ``numpy`` arrays. Inner products on the
state, output and input spaces are carried by :class:`GramForm` objects, so
that adjoints and norms computed on a discretization match the Hilbert-space
ones they approximate.
"""

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as spla

from fcascade.errors import DimensionMismatch, SingularMatrix, SpectraOverlap, TooLarge

PIVOT_RTOL = 1e-12
SURJECTIVITY_RTOL = 1e-8
MAX_SYLVESTER_UNKNOWNS = 10_000
MAX_EXP_DIM = 50
REFINE_STEPS = 2
REFINE_MAX_DIM = 1000


@dataclass(frozen=True, eq=False)
class GramForm:
    """Symmetric positive-definite weight matrix defining ``<x, y> = x^T Q y``.

    The matrix is symmetrized on construction and its spectrum is checked
    once; square roots are cached.
    """

    Q: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionMismatch(f"Gram matrix must be square, got {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise ValueError("Gram matrix has non-finite entries")
        Q = 0.5 * (Q + Q.T)
        object.__setattr__(self, "Q", Q)
        if self._eig[0][0] <= 0.0:
            raise ValueError(
                f"Gram matrix is not positive definite (min eigenvalue {self._eig[0][0]:.3e})"
            )

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    @property
    def dim(self):
        return self.Q.shape[0]

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.Q)

    @property
    def min_eig(self):
        return float(self._eig[0][0])

    @cached_property
    def sqrt(self):
        w, V = self._eig
        return (V * np.sqrt(w)) @ V.T

    @cached_property
    def inv_sqrt(self):
        w, V = self._eig
        return (V / np.sqrt(w)) @ V.T

    @cached_property
    def is_identity(self):
        return bool(np.array_equal(self.Q, np.eye(self.dim)))

    def inner(self, x, y):
        return float(np.asarray(x) @ self.Q @ np.asarray(y))

    def norm(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(max(x @ self.Q @ x, 0.0)))

    def solve(self, b):
        """Apply ``Q^{-1}`` through the cached eigendecomposition."""
        if self.is_identity:
            return np.array(b, dtype=float)
        w, V = self._eig
        b = np.asarray(b, dtype=float)
        return V @ ((V.T @ b) / (w if b.ndim == 1 else w[:, None]))


def _as_gram(Q, n):
    if Q is None:
        return GramForm.identity(n)
    if isinstance(Q, GramForm):
        if Q.dim != n:
            raise DimensionMismatch(f"Gram form has dimension {Q.dim}, expected {n}")
        return Q
    return _as_gram(GramForm(Q), n)


def solve_linear(A, b):
    """Solve ``A x = b`` by pivoted LU.

    ``b`` may be a vector or a matrix of right-hand sides. Raises
    :class:`SingularMatrix` when a pivot falls below ``1e-12 * ||A||_inf``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {A.shape}")
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix has {A.shape[0]}")
    scale = np.linalg.norm(A, np.inf)
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    with warnings.catch_warnings():
        # an exactly singular factor is reported below as SingularMatrix
        warnings.simplefilter("ignore", spla.LinAlgWarning)
        lu, piv = spla.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() < PIVOT_RTOL * scale:
        raise SingularMatrix(
            f"pivot {pivots.min():.3e} below {PIVOT_RTOL:g} * ||A||_inf = {PIVOT_RTOL * scale:.3e}"
        )
    x = spla.lu_solve((lu, piv), b)
    if A.shape[0] <= REFINE_MAX_DIM:
        # discretized fourth-order operators have rows spanning ~h^-4 in scale;
        # an extended-precision residual restores full accuracy
        A_ext = A.astype(np.longdouble)
        b_ext = b.astype(np.longdouble)
        for _ in range(REFINE_STEPS):
            r = (b_ext - A_ext @ x.astype(np.longdouble)).astype(float)
            x = x + spla.lu_solve((lu, piv), r)
    return x


def solve_sylvester(A, S, C):
    """Solve ``M0 A - S M0 = C`` for ``M0`` (shape ``m x n``).

    Uses the Kronecker form ``(A^T (x) I_m - I_n (x) S) vec(M0) = vec(C)`` with
    column-major vectorization. Intended for ``n * m <= 10^4``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, m = A.shape[0], S.shape[0]
    if A.shape != (n, n) or S.shape != (m, m) or C.shape != (m, n):
        raise DimensionMismatch(f"incompatible shapes A{A.shape} S{S.shape} C{C.shape}")
    if n * m > MAX_SYLVESTER_UNKNOWNS:
        raise TooLarge(f"{n * m} unknowns exceeds the Kronecker limit {MAX_SYLVESTER_UNKNOWNS}")
    K = np.kron(A.T, np.eye(m)) - np.kron(np.eye(n), S)
    try:
        vec = solve_linear(K, C.reshape(-1, order="F"))
    except SingularMatrix as exc:
        raise SpectraOverlap(f"Sylvester operator is singular: {exc}") from None
    return vec.reshape((m, n), order="F")


def sylvester_residual(M0, A, S, C):
    return float(np.linalg.norm(M0 @ A - S @ M0 - C, "fro"))


def weighted_adjoint(L, Qdom=None, Qcod=None):
    """Adjoint of ``L`` with respect to the Gram forms of its domain and codomain.

    Returns ``Qdom^{-1} L^T Qcod``, the unique map with
    ``<L x, y>_cod = <x, L* y>_dom``.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    Qdom = _as_gram(Qdom, L.shape[1])
    Qcod = _as_gram(Qcod, L.shape[0])
    LtQ = L.T @ Qcod.Q
    if Qdom.is_identity:
        return LtQ
    return solve_linear(Qdom.Q, LtQ)


def matrix_exp(S, t=1.0):
    """Dense ``exp(t S)`` (scaling and squaring with Pade approximants)."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] > MAX_EXP_DIM:
        raise TooLarge(f"dimension {S.shape[0]} exceeds {MAX_EXP_DIM}")
    if not np.any(S):
        return np.eye(S.shape[0])
    return spla.expm(t * S)


def matrix_exp_action(S, t, y):
    """Return ``exp(t S) y``."""
    y = np.asarray(y, dtype=float)
    return matrix_exp(S, t) @ y


def surjectivity_margin(L, Qcod=None, Qdom=None):
    """Smallest singular value of ``L`` measured in the Gram metrics.

    Returns ``(surjective, sigma_min)`` where ``sigma_min`` is the smallest
    singular value of ``Qcod^{1/2} L Qdom^{-1/2}``; its square is the best
    constant ``c`` with ``||L* y||^2 >= c ||y||^2``. A map with more output
    rows than input columns has ``sigma_min = 0``.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    m, r = L.shape
    Qcod = _as_gram(Qcod, m)
    Qdom = _as_gram(Qdom, r)
    Lw = Qcod.sqrt @ L @ Qdom.inv_sqrt
    if m > r:
        return False, 0.0
    sv = np.linalg.svd(Lw, compute_uv=False)
    sigma_min = float(sv[-1]) if sv.size else 0.0
    scale = float(sv[0]) if sv.size else 0.0
    surjective = scale > 0.0 and sigma_min > SURJECTIVITY_RTOL * scale
    return surjective, sigma_min
