"""Forwarding stabilization of semilinear cascades.

Finite-dimensional realizations of ``x' = A x + f(x) + g(x) u``,
``z' = S z + C x + h(x)``: the invariant graph ``M`` by trajectory
quadrature, the feedback ``u = g* dM* (z - M(x))``, closed-loop simulation
with Lyapunov monitors, and a rotating flexible beam model.
"""

from fcascade.controller import ControllerConfig, check_non_resonance, feedback
from fcascade.graph import QuadConfig, build_graph, eval_dM, eval_M, forwarding_residual
from fcascade.model import CascadeRealization, linear_model, scalar_cubic_model, validate
from fcascade.sim import ClosedLoop, LyapunovSpec, SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "CascadeRealization", "ClosedLoop", "ControllerConfig", "LyapunovSpec", "QuadConfig",
    "SimConfig", "build_graph", "check_non_resonance", "eval_M", "eval_dM", "feedback",
    "forwarding_residual", "linear_model", "scalar_cubic_model", "simulate", "validate",
]
