"""``fcascade`` command-line front end.

Scenarios: ``check`` (structural hypotheses and non-resonance), ``graph``
(graph evaluations and forwarding residuals), ``openloop`` (graph-invariance
drift with ``u = 0``), ``simulate`` (closed loop) and ``regulate`` (closed
loop with integral action toward a reference).

Configuration is an INI file; every key is optional::

    [model]       type = beam | scalar | custom-linear
    [beam]        N, L, lam, theta_ref
    [linear]      A, B, C, S   (rows separated by ';', entries by spaces)
    [sim]         dt, T_final, scheme = imex-cn | rk4, record_every
    [controller]  mode = full | linear | both, sample_period, y_ref
    [quad]        step, tail_tol, max_horizon, decay_floor, abs_floor,
                  corrections, scheme = imex-cn | expmid
    [initial]     x0 = random | rest | <values>, energy, theta0, z0
    [graph]       points (scalar model), samples (other models)
    [tolerances]  drift, regulation

Exit codes: 0 pass, 1 check failure, 2 numerical failure, 3 config error.
"""

import argparse
import configparser
import json
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from fcascade import beam as beam_mod
from fcascade.controller import ControllerConfig, check_non_resonance
from fcascade.errors import (
    ConfigError, DimensionMismatch, InvalidParams, NonPositiveTrace, NonzeroS, NumericalFailure,
    SingularMatrix, SpectraOverlap,
)
from fcascade.graph import QuadConfig, build_graph, evaluate, forwarding_residual
from fcascade.model import linear_model, scalar_cubic_model, validate
from fcascade.sim import (
    ClosedLoop, SimConfig, energy_spec, fit_decay_rate, json_default, simulate, verify_W_decay,
    write_csv, write_sidecar,
)

SCENARIOS = ("check", "graph", "openloop", "simulate", "regulate")
MODELS = ("beam", "scalar", "custom-linear")
EXIT_OK, EXIT_CHECK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2, 3

# graph settings for the beam: the exponential midpoint keeps stiff modes
# damped at steps far above the stability-free CN accuracy range
BEAM_QUAD = dict(step=0.05, scheme="expmid", decay_floor=1e-4, tail_tol=1e-6)
SCALAR_GRAPH_POINTS = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)
DEFAULT_GAIN = {"scalar": 1.0, "custom-linear": 1.0}


@dataclass
class RunConfig:
    scenario: str = "check"
    model: str = "beam"
    beam: dict = field(default_factory=dict)
    linear: dict = field(default_factory=dict)
    sim: SimConfig = field(default_factory=SimConfig)
    controller: str = "full"
    sample_period: float = 0.05
    y_ref: tuple = None
    theta_refs: tuple = (0.0,)
    quad: QuadConfig = None
    x0: str = "random"
    energy: float = 1.0
    theta0: float = 0.0
    z0: tuple = None
    graph_points: tuple = SCALAR_GRAPH_POINTS
    graph_samples: int = 5
    drift_tol: float = 1e-3
    regulation_tol: float = 1e-3
    seed: int = 42
    out: str = None

    def echo(self):
        d = asdict(self)
        d["sim"] = asdict(self.sim)
        d["quad"] = asdict(self.quad) if self.quad is not None else None
        return d


# -- parsing --------------------------------------------------------------------


def _floats(text, what):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None


def _matrix(text, what):
    rows = [_floats(r, what) for r in text.split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{what}: rows must be non-empty and of equal length")
    return np.array(rows)


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"[{section}] {key} = {raw!r}: cannot parse as {conv.__name__}") from None


def load_config(path=None, text=None):
    """Parse an INI file (or string) into a ConfigParser, mapping errors to ConfigError."""
    cp = configparser.ConfigParser()
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
        elif text is not None:
            cp.read_string(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    return cp


def resolve(args, cp):
    """Merge the config file and command-line flags into a RunConfig."""
    cfg = RunConfig(scenario=args.scenario, seed=args.seed, out=args.out)
    cfg.model = _get(cp, "model", "type", str, "beam")
    if cfg.model not in MODELS:
        raise ConfigError(f"[model] type must be one of {MODELS}, got {cfg.model!r}")

    if cp.has_section("beam"):
        for key, conv in (("N", int), ("L", float), ("lam", float), ("theta_ref", float)):
            val = _get(cp, "beam", key, conv, None)
            if val is not None:
                cfg.beam[key] = val
    if cfg.model == "custom-linear":
        for key in ("A", "B", "C"):
            if not cp.has_option("linear", key):
                raise ConfigError(f"[linear] {key} is required for custom-linear models")
            cfg.linear[key] = _matrix(cp.get("linear", key), f"[linear] {key}").tolist()
        if cp.has_option("linear", "S"):
            cfg.linear["S"] = _matrix(cp.get("linear", "S"), "[linear] S").tolist()

    sim = {}
    for key, conv in (("dt", float), ("T_final", float), ("scheme", str), ("record_every", int)):
        val = _get(cp, "sim", key, conv, None)
        if val is not None:
            sim[key] = val
    cfg.sim = SimConfig(**sim)

    cfg.controller = _get(cp, "controller", "mode", str, "full")
    cfg.sample_period = _get(cp, "controller", "sample_period", float, 0.05)
    if cp.has_option("controller", "y_ref"):
        cfg.y_ref = _floats(cp.get("controller", "y_ref"), "[controller] y_ref")

    quad = dict(BEAM_QUAD) if cfg.model == "beam" else {}
    for key, conv in (("step", float), ("tail_tol", float), ("max_horizon", float),
                      ("decay_floor", float), ("abs_floor", float), ("corrections", int),
                      ("scheme", str)):
        val = _get(cp, "quad", key, conv, None)
        if val is not None:
            quad[key] = val
    try:
        cfg.quad = QuadConfig(**quad)
    except ValueError as exc:
        raise ConfigError(f"[quad] {exc}") from None

    cfg.x0 = _get(cp, "initial", "x0", str, "rest" if args.scenario == "regulate" else "random")
    cfg.energy = _get(cp, "initial", "energy", float, 1.0)
    cfg.theta0 = _get(cp, "initial", "theta0", float, 0.0)
    if cp.has_option("initial", "z0"):
        cfg.z0 = _floats(cp.get("initial", "z0"), "[initial] z0")
    if cp.has_option("graph", "points"):
        cfg.graph_points = _floats(cp.get("graph", "points"), "[graph] points")
    cfg.graph_samples = _get(cp, "graph", "samples", int, 5)
    cfg.drift_tol = _get(cp, "tolerances", "drift", float, 1e-3)
    cfg.regulation_tol = _get(cp, "tolerances", "regulation", float, 1e-3)

    # command-line flags win over the file
    if args.controller is not None:
        cfg.controller = args.controller
    if args.sample_period is not None:
        cfg.sample_period = args.sample_period
    if args.y_ref is not None:
        cfg.y_ref = _floats(args.y_ref, "--y-ref")
    if args.theta_ref is not None:
        cfg.theta_refs = _floats(args.theta_ref, "--theta-ref")
    elif "theta_ref" in cfg.beam:
        cfg.theta_refs = (cfg.beam["theta_ref"],)
    if cfg.controller not in ("full", "linear", "both"):
        raise ConfigError(f"controller must be full, linear or both, got {cfg.controller!r}")
    if not cfg.sample_period > 0:
        raise ConfigError("sample_period must be positive")
    for name in ("drift_tol", "regulation_tol", "energy"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.sim.dt > cfg.sample_period:
        raise ConfigError("dt must not exceed sample_period")
    return cfg


# -- model and data ---------------------------------------------------------------


def build_model(cfg, theta_ref=None):
    if cfg.model == "scalar":
        return scalar_cubic_model()
    if cfg.model == "custom-linear":
        lin = cfg.linear
        return linear_model(lin["A"], lin["B"], lin["C"], lin.get("S"))
    params = dict(cfg.beam)
    if theta_ref is not None:
        params["theta_ref"] = theta_ref
    try:
        return beam_mod.assemble(beam_mod.BeamParams(**params))
    except TypeError as exc:
        raise ConfigError(f"[beam] {exc}") from None


def lyapunov_for(model, cfg):
    if cfg.model == "beam":
        return beam_mod.lyapunov_spec(model)
    return energy_spec(model, DEFAULT_GAIN[cfg.model])


def initial_state(model, cfg, rng):
    if cfg.x0 == "random":
        if cfg.model == "beam":
            return beam_mod.smooth_random_state(model, rng, cfg.energy)
        x = rng.standard_normal(model.n)
        return x * np.sqrt(2.0 * cfg.energy) / model.norm_x(x)
    if cfg.x0 == "rest":
        if cfg.model != "beam":
            return np.zeros(model.n)
        lay = beam_mod.layout_of(model)
        return beam_mod.rest_state(lay.params, cfg.theta0, lay)
    x = np.array(_floats(cfg.x0, "[initial] x0"))
    if x.shape != (model.n,):
        raise ConfigError(f"[initial] x0 has {x.size} entries, expected {model.n}")
    return x


def initial_output(model, cfg, default):
    if cfg.z0 is None:
        return np.full(model.m, default)
    z = np.array(cfg.z0)
    if z.shape != (model.m,):
        raise ConfigError(f"[initial] z0 has {z.size} entries, expected {model.m}")
    return z


# -- scenarios --------------------------------------------------------------------


def run_check(cfg, rng):
    model = build_model(cfg)
    rep = validate(model, rng=rng)
    try:
        graph = build_graph(model, cfg.quad)
    except (SpectraOverlap, SingularMatrix) as exc:
        rep.add("Sylvester solvable", False, detail=str(exc))
        print(rep.format())
        return EXIT_CHECK, {"report": rep.to_dict()}, None
    ok, lam = check_non_resonance(model, graph)
    rep.add("non-resonance", ok, np.sqrt(lam), "sigma_min of M0 g(0)")
    rep.add("Sylvester residual", graph.sylvester_residual <= 1e-10 * max(
        np.linalg.norm(model.C), 1e-300), graph.sylvester_residual)
    print(rep.format())
    summary = {"report": rep.to_dict(), "sigma_min": float(np.sqrt(lam)), "lambda": float(lam)}
    return (EXIT_OK if rep.ok else EXIT_CHECK), summary, None


def run_graph(cfg, rng):
    model = build_model(cfg)
    graph = build_graph(model, cfg.quad)
    if cfg.model == "scalar":
        points = [np.array([p]) for p in cfg.graph_points]
    else:
        points = [initial_state(model, replace(cfg, x0="random"), rng)
                  for _ in range(cfg.graph_samples)]
    rows = []
    for x in points:
        ev = evaluate(graph, x, "all")
        res = forwarding_residual(graph, x)
        rows.append({"x_norm": model.norm_x(x), "M": ev.M, "dM_norm": float(np.linalg.norm(ev.dM)),
                     "T_star": ev.T_star, "tail": ev.tail, "residual": res})
        print(f"|x| = {rows[-1]['x_norm']:.4g}  M = {np.array2string(ev.M, precision=8)}  "
              f"T* = {ev.T_star:.3g}  residual = {res:.3e}")
    return EXIT_OK, {"points": rows, "sylvester_residual": graph.sylvester_residual}, None


def _drift(traj):
    d = traj.monitors["defect_norm"]
    if d[0] == 0.0:
        return float(np.max(np.abs(d)))
    return float(np.max(np.abs(d - d[0])) / d[0])


def run_openloop(cfg, rng):
    model = build_model(cfg)
    graph = build_graph(model, cfg.quad)
    x0 = initial_state(model, cfg, rng)
    z0 = initial_output(model, cfg, 0.5)
    ctrl = ControllerConfig(sample_period=cfg.sample_period)
    loop = ClosedLoop(model, graph, ctrl, cfg.sim, open_loop=True)
    traj = simulate(loop, x0, z0, lyapunov_for(model, cfg))
    drift = _drift(traj)
    passed = drift <= cfg.drift_tol
    print(f"max relative drift of |z - M(x)|: {drift:.3e} (tolerance {cfg.drift_tol:g})")
    return (EXIT_OK if passed else EXIT_CHECK), {"drift": drift, "passed": passed}, [("", model, traj)]


def _closed_loop(cfg, model, graph, mode, y_ref, x0, z0):
    ctrl = ControllerConfig(mode=mode, sample_period=cfg.sample_period, y_ref=y_ref)
    loop = ClosedLoop(model, graph, ctrl, cfg.sim)
    spec = lyapunov_for(model, cfg)
    started = time.perf_counter()
    traj = simulate(loop, x0, z0, spec)
    elapsed = time.perf_counter() - started
    rep = verify_W_decay(traj, spec)
    W = traj.monitors["W"]
    if np.all(W == 0.0):
        rate, r2 = None, None
        rep.add("W decay fit", True, 0.0, "W identically zero")
    else:
        rate, r2 = fit_decay_rate(W, traj.times)
        rep.add("W decay fit", rate < 0 and r2 >= 0.95, rate, f"r2 = {r2:.4f}")
    info = {"mode": mode, "rate_W": rate, "r2_W": r2, "checks": rep.to_dict(),
            "graph_evals": traj.meta["graph_evals"], "wall_seconds": elapsed,
            "final_x_norm": float(model.norm_x(traj.final_state))}
    res = traj.monitors["energy_residual"]
    if not np.all(np.isnan(res)):
        info["max_energy_residual"] = float(np.nanmax(np.abs(res)))
    return traj, rep, info


def _fmt_rate(info):
    if info["rate_W"] is None:
        return "n/a (W identically zero)"
    return f"{info['rate_W']:.4g} (r2 {info['r2_W']:.4f})"


def _modes(cfg):
    return ("full", "linear") if cfg.controller == "both" else (cfg.controller,)


def run_simulate(cfg, rng):
    model = build_model(cfg)
    graph = build_graph(model, cfg.quad)
    x0 = initial_state(model, cfg, rng)
    z0 = initial_output(model, cfg, 1.0)
    ok, runs, traces = True, [], []
    for mode in _modes(cfg):
        traj, rep, info = _closed_loop(cfg, model, graph, mode, cfg.y_ref, x0, z0)
        print(f"[{mode}] W rate {_fmt_rate(info)}")
        print(rep.format())
        ok &= rep.ok
        runs.append(info)
        traces.append((f"-{mode}" if len(_modes(cfg)) > 1 else "", model, traj))
    return (EXIT_OK if ok else EXIT_CHECK), _with_rates(runs), traces


def _with_rates(runs):
    """Summary with the fitted W rates grouped by controller mode, in run order."""
    summary = {"runs": runs}
    by_mode = {}
    for r in runs:
        by_mode.setdefault(r["mode"], []).append(r["rate_W"])
    if len(by_mode) > 1:
        summary["decay_rates_by_mode"] = by_mode
    return summary


def run_regulate(cfg, rng):
    ok, runs, traces = True, [], []
    refs = cfg.theta_refs if cfg.model == "beam" else (None,)
    multi = len(refs) * len(_modes(cfg)) > 1
    for ref in refs:
        model = build_model(cfg, theta_ref=ref)
        graph = build_graph(model, cfg.quad)
        x0 = initial_state(model, cfg, rng)
        z0 = initial_output(model, cfg, 0.0)
        if cfg.model == "beam":
            # in shifted coordinates the reference is absorbed: z' = theta - theta_ref
            y_ref = (0.0,)
        else:
            if cfg.y_ref is None:
                raise ConfigError("regulate needs [controller] y_ref or --y-ref")
            y_ref = cfg.y_ref
        for mode in _modes(cfg):
            traj, rep, info = _closed_loop(cfg, model, graph, mode, y_ref, x0, z0)
            xT = traj.final_state
            if cfg.model == "beam":
                lay = beam_mod.layout_of(model)
                w, theta, _, _ = beam_mod.to_original(xT, lay.params, lay)
                err = abs(theta - ref)
                wn = beam_mod.deflection_norm(w, lay)
                rep.add("theta error", err <= cfg.regulation_tol, err, f"theta_ref = {ref:g}")
                rep.add("deflection", wn <= cfg.regulation_tol, wn, "||w(., T)||")
                info.update(theta_ref=ref, theta_final=theta, theta_error=err, w_norm=wn)
                label = f"theta_ref={ref:g} [{mode}]"
            else:
                out = model.C @ xT + model.h(xT)
                err = float(model.norm_y(out - np.array(y_ref)))
                rep.add("output error", err <= cfg.regulation_tol, err, "||(C + h)(x) - y_ref||")
                info.update(y_ref=list(y_ref), output_error=err)
                label = f"[{mode}]"
            print(f"{label}: error {err:.3e}, W rate {_fmt_rate(info)}")
            print(rep.format())
            ok &= rep.ok
            runs.append(info)
            suffix = ""
            if multi:
                suffix = (f"-theta{ref:g}" if ref is not None else "") + (
                    f"-{mode}" if len(_modes(cfg)) > 1 else "")
            traces.append((suffix, model, traj))
    return (EXIT_OK if ok else EXIT_CHECK), _with_rates(runs), traces


RUNNERS = {"check": run_check, "graph": run_graph, "openloop": run_openloop,
           "simulate": run_simulate, "regulate": run_regulate}


# -- entry point -----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="fcascade",
        description="Forwarding stabilizers for semilinear cascades.",
        epilog=__doc__.split("\n\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output prefix for <prefix>.csv and <prefix>.json")
    p.add_argument("--seed", type=int, default=42, help="seed of the random probes (default 42)")
    p.add_argument("--controller", choices=("full", "linear", "both"))
    p.add_argument("--sample-period", type=float)
    p.add_argument("--y-ref", help="output reference, comma separated")
    p.add_argument("--theta-ref", help="beam angle reference(s), comma separated for a sweep")
    return p


def _write_outputs(cfg, summary, traces):
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    for suffix, model, traj in traces or []:
        extra = beam_mod.original_columns(traj, model) if cfg.model == "beam" else None
        write_csv(traj, f"{cfg.out}{suffix}.csv", extra)
    write_sidecar(f"{cfg.out}.json", summary)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cp = load_config(args.config)
        cfg = resolve(args, cp)
        rng = np.random.default_rng(cfg.seed)
        status, summary, traces = RUNNERS[cfg.scenario](cfg, rng)
    except (ConfigError, InvalidParams, DimensionMismatch, NonzeroS) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, NonPositiveTrace, SingularMatrix, SpectraOverlap) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {"scenario": cfg.scenario, "seed": cfg.seed, "config": cfg.echo(),
               "status": status, **summary}
    if cfg.out:
        _write_outputs(cfg, summary, traces)
    else:
        print(json.dumps(summary, indent=2, sort_keys=True, default=json_default))
    return status


if __name__ == "__main__":
    sys.exit(main())
