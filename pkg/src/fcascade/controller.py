"""Forwarding feedback built from the invariant graph.

The law is ``u = g(x)* dM(x)* (z - M(x))`` with Hilbert adjoints taken in the
Gram metrics of the three spaces. Composing the two adjoints, the state
metric cancels::

    g* dM* = QU^{-1} g^T QX  QX^{-1} dM^T QY = QU^{-1} (dM g)^T QY

so only the ``m x r`` product ``dM(x) g(x)`` is needed, which costs one
tangent direction per input instead of the full ``n``-column differential.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from fcascade.errors import ConfigError, NonzeroS
from fcascade.graph import compute_M0, evaluate
from fcascade.wlinalg import surjectivity_margin, weighted_adjoint

MODES = {"full": "full", "full-nonlinear": "full", "linear": "linear", "linear-M0": "linear"}


@dataclass(frozen=True)
class ControllerConfig:
    """``mode`` is ``"full"`` (quadrature ``M``, ``dM``) or ``"linear"``
    (``M(x) = M0 x``, ``dM = M0``). ``u`` is recomputed every
    ``sample_period`` time units and held in between."""

    mode: str = "full"
    sample_period: float = 0.05
    y_ref: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown controller mode {self.mode!r}; use 'full' or 'linear'")
        object.__setattr__(self, "mode", MODES[self.mode])
        if not self.sample_period > 0:
            raise ConfigError("sample_period must be positive")
        if self.y_ref is not None:
            ref = tuple(float(v) for v in np.atleast_1d(self.y_ref))
            object.__setattr__(self, "y_ref", ref)

    @property
    def y_ref_array(self):
        return None if self.y_ref is None else np.array(self.y_ref)


@dataclass
class FeedbackTerms:
    """The control together with the graph quantities it was built from."""

    u: np.ndarray
    M: np.ndarray
    defect: np.ndarray
    dMg: np.ndarray


def _linear_part(model, graph):
    return graph.M0 if graph is not None else compute_M0(model)[0]


def feedback_terms(model, graph, x, z, cfg=None, general=False, M0=None):
    """Evaluate the feedback and return it with ``M(x)``, the defect and ``dM(x) g(x)``.

    ``general=True`` forms the full differential and both adjoints through
    :func:`weighted_adjoint` instead of using the cancelled product; it exists
    to cross-check the fast path. In linear mode ``graph`` may be ``None``;
    a precomputed ``M0`` then saves the Sylvester solve.
    """
    cfg = ControllerConfig() if cfg is None else cfg
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    g = model.g_at(x)
    if cfg.mode == "linear":
        M0 = _linear_part(model, graph) if M0 is None else M0
        M = M0 @ x
        J = M0 if general else None
        dMg = M0 @ g
    elif general:
        ev = evaluate(graph, x, "all")
        M, J = ev.M, ev.dM
        dMg = J @ g
    else:
        ev = evaluate(graph, x, g)
        M, dMg = ev.M, ev.dM
    defect = z - M
    if general:
        g_adj = weighted_adjoint(g, model.QU, model.QX)
        dM_adj = weighted_adjoint(J, model.QX, model.QY)
        u = g_adj @ (dM_adj @ defect)
    else:
        u = model.QU.solve(dMg.T @ (model.QY.Q @ defect))
    return FeedbackTerms(u=u, M=M, defect=defect, dMg=dMg)


def feedback(model, graph, x, z, cfg=None, general=False):
    """``u = g(x)* dM(x)* (z - M(x))``."""
    return feedback_terms(model, graph, x, z, cfg, general).u


def regulated_feedback(model, graph, x, z, cfg):
    """Feedback for set-point regulation with the integrator ``z' = Cx + h(x) - y_ref``.

    The law is unchanged; the reference acts only through the ``z`` dynamics,
    which is why ``S = 0`` is required.
    """
    if not model.has_zero_S:
        raise NonzeroS("integral action requires S = 0")
    if cfg is None or cfg.y_ref is None:
        raise ConfigError("regulated feedback needs cfg.y_ref")
    if len(cfg.y_ref) != model.m:
        raise ConfigError(f"y_ref has {len(cfg.y_ref)} entries, expected {model.m}")
    return feedback(model, graph, x, z, cfg)


def check_non_resonance(model, graph=None):
    """Surjectivity of ``M0 g(0)`` onto the output space.

    Returns ``(ok, lam)`` where ``lam = sigma_min**2`` is the coercivity
    constant ``||g(0)* M0* y||^2 >= lam ||y||^2``.
    """
    M0 = _linear_part(model, graph)
    L = M0 @ model.g_at(np.zeros(model.n))
    ok, sigma = surjectivity_margin(L, model.QY, model.QU)
    return ok, sigma**2
