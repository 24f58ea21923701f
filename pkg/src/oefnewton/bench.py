"""Experiment configs, seed sweeps, bound tables and rate fits."""

from __future__ import annotations

import csv
import glob
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .oracles import InexactnessPolicy, gradient_sample_size, hessian_sample_size, sosp_sample_sizes
from .pnm import PNMConfig, beta0, iteration_bound_K1, pnm_run
from .problems import builtin_problem, problem_from_descriptor
from .rn2cm import RN2CMConfig, operation_accounting, rn2cm_run, theoretical_bounds_K3
from .rnm import RNMConfig, iteration_bound_K2, rnm_run, sc_run, theoretical_sc_constants
from .trace import atomic_write, fitted_order

SOLVERS = ("pnm", "rnm", "sc", "rn2cm")
OUT_ENV = "OEFNEWTON_OUT"
TOP_KEYS = {"problem", "solver", "oracle", "solver_options", "seeds", "output_dir", "certificates",
            "vary_problem_seed"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: dict
    solver: str
    oracle: dict = field(default_factory=dict)
    solver_options: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    certificates: bool = True
    vary_problem_seed: bool = False


def parse_config(data):
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("problem", "solver"):
        if key not in data:
            raise ConfigError(f"missing config key {key!r}")
    cfg = ExperimentConfig(**data)
    if cfg.solver not in SOLVERS:
        raise ConfigError(f"unknown solver {cfg.solver!r}; choose from {SOLVERS}")
    if not isinstance(cfg.seeds, list) or not cfg.seeds:
        raise ConfigError("seeds must be a nonempty list")
    if not all(isinstance(s, int) and s >= 0 for s in cfg.seeds):
        raise ConfigError("seeds must be nonnegative integers")
    if not isinstance(cfg.problem, dict) or "name" not in cfg.problem:
        raise ConfigError("problem must be a descriptor with a name")
    if set(cfg.problem) - {"name", "params"}:
        raise ConfigError(f"unknown problem keys: {sorted(set(cfg.problem) - {'name', 'params'})}")
    try:
        problem = problem_from_descriptor(cfg.problem)
        _policy(cfg, cfg.seeds[0])
        _solver_config(cfg, problem, cfg.seeds[0])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.solver == "sc" and problem.smooth.strong_convexity <= 0 and "sigma" not in cfg.solver_options:
        raise ConfigError("sc solver needs a strongly convex problem (sigma > 0)")
    if cfg.solver in ("rnm", "sc", "rn2cm") and not problem.nonsmooth.is_zero():
        raise ConfigError(f"{cfg.solver} handles smooth problems only (h must be zero)")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def _problem(cfg, seed):
    desc = dict(cfg.problem)
    if cfg.vary_problem_seed:
        desc = {"name": desc["name"], "params": {**desc.get("params", {}), "seed": seed}}
    return problem_from_descriptor(desc)


def _policy(cfg, seed):
    opts = dict(cfg.oracle)
    opts["seed"] = seed
    return InexactnessPolicy(**opts)


def _start_point(opts, problem, seed):
    """x0 from the options: a list, or {"radius": r} / {"ball_fraction": t} along a seeded direction."""
    x0 = opts.get("x0")
    if x0 is None or isinstance(x0, list):
        return None if x0 is None else np.asarray(x0, dtype=float)
    rng = np.random.default_rng([seed, 99])
    u = rng.standard_normal(problem.n)
    u /= np.linalg.norm(u)
    center = problem.minimizer if problem.minimizer is not None else np.zeros(problem.n)
    if "radius" in x0:
        return center + x0["radius"] * u
    if "ball_fraction" in x0:
        consts = sc_constants_for(problem, opts, center + 0.0 * u, u)
        return center + x0["ball_fraction"] * consts[5] * u
    raise ValueError("x0 must be a list, {'radius': r} or {'ball_fraction': t}")


def sc_constants_for(problem, opts, center, u, oracle=None):
    """Strongly convex constants with U_g = 2 ||grad f(x0)||, iterated once for x0 on the ball."""
    f = problem.smooth
    sigma = opts.get("sigma", f.strong_convexity)
    theta = opts.get("theta", 1.0)
    e0 = opts.get("eps_hat0", 1.0)
    dg = (oracle or {}).get("delta_g", opts.get("_delta_g", 0.0))
    dh = (oracle or {}).get("delta_h", opts.get("_delta_h", 0.0))
    c = theoretical_sc_constants(sigma, f.lipschitz_grad, f.lipschitz_hess, e0, dg, dh, theta, 1.0)
    U = 2 * np.linalg.norm(f.gradient(center + 0.99 * c[5] * u))
    return theoretical_sc_constants(sigma, f.lipschitz_grad, f.lipschitz_hess, e0, dg, dh, theta, U)


def _solver_config(cfg, problem, seed, certificates=None, max_iter=None):
    opts = dict(cfg.solver_options)
    policy = _policy(cfg, seed)
    if "x0" in opts:
        opts["_delta_g"], opts["_delta_h"] = policy.delta_g, policy.delta_h
        opts["x0"] = _start_point(opts, problem, seed)
        opts.pop("_delta_g"), opts.pop("_delta_h")
    if max_iter is not None:
        opts["max_iter"] = max_iter
    opts["certificates"] = cfg.certificates if certificates is None else certificates
    klass = {"pnm": PNMConfig, "rnm": RNMConfig, "sc": RNMConfig, "rn2cm": RN2CMConfig}[cfg.solver]
    allowed = {f.name for f in fields(klass)} - {"policy"}
    unknown = set(opts) - allowed
    if unknown:
        raise ValueError(f"unknown solver options for {cfg.solver}: {sorted(unknown)}")
    return klass(policy=policy, **opts)


# ------------------------------------------------------------------ bounds


def bound_rows(cfg, problem=None):
    """(name, value) rows; missing constants give 'N/A'."""
    problem = problem or _problem(cfg, cfg.seeds[0])
    f = problem.smooth
    opts = cfg.solver_options
    pol = _policy(cfg, cfg.seeds[0])
    rows = [("L_g", f.lipschitz_grad), ("L_h", f.lipschitz_hess), ("sigma", f.strong_convexity),
            ("lower_bound", problem.lower_bound)]
    x0 = _start_point(dict(opts, _delta_g=pol.delta_g, _delta_h=pol.delta_h), problem, cfg.seeds[0])
    x0 = problem.x0() if x0 is None else x0
    phi0 = problem.value(x0)
    rows.append(("phi0", phi0))
    low = problem.lower_bound
    gamma = opts.get("gamma", 2.0)
    eps = opts.get("eps", 1e-3 if cfg.solver == "pnm" else 1e-6)

    def safe(fn):
        try:
            return fn()
        except (ValueError, TypeError, ZeroDivisionError):
            return "N/A"

    rows.append(("beta0", safe(lambda: beta0(gamma, f.lipschitz_grad, pol.delta_g, pol.delta_h))))
    rows.append(("K1", safe(lambda: iteration_bound_K1(phi0, low, gamma, f.lipschitz_grad, pol.delta_g, pol.delta_h, eps))))
    rows.append(("K2", safe(lambda: iteration_bound_K2(phi0, low, gamma, f.lipschitz_grad, pol.delta_g, pol.delta_h, eps))))
    eps_g = opts.get("eps_g", 1e-2)
    L_h = opts.get("L_h", f.lipschitz_hess)
    eta = opts.get("eta", 1.0)
    k3 = safe(lambda: theoretical_bounds_K3(phi0, low, L_h, eta, eps_g))
    for i, name in enumerate(("c_nc", "c_sol", "K3")):
        rows.append((name, k3 if k3 == "N/A" else k3[i]))
    sigma = opts.get("sigma", f.strong_convexity)
    if sigma and sigma > 0 and f.lipschitz_hess:
        theta = opts.get("theta", 1.0)
        U = opts.get("U_g", 2 * float(np.linalg.norm(f.gradient(x0))))
        sc = safe(lambda: theoretical_sc_constants(sigma, f.lipschitz_grad, f.lipschitz_hess, opts.get("eps_hat0", 1.0),
                                                   pol.delta_g, pol.delta_h, theta, U))
    else:
        sc = "N/A"
    for i, name in enumerate(("s0", "s1", "s2", "eps_hat1", "eps_hat2", "eps_hat3")):
        rows.append((name, sc if sc == "N/A" else sc[i]))
    if f.is_finite_sum:
        m = f.m
        rows.append(("sample_g", safe(lambda: gradient_sample_size(pol.delta_g, eps, f.U_g, pol.confidence, m))))
        rows.append(("sample_h", safe(lambda: hessian_sample_size(pol.delta_h, f.n, f.U_h, pol.confidence, m))))
        if L_h and eps_g < L_h:
            sz = sosp_sample_sizes(eps_g, math.sqrt(L_h * eps_g), f.n, f.U_g, f.U_h, pol.confidence, m)
            rows += [("sosp_sample_g", sz[0]), ("sosp_sample_h", sz[1])]
    return [(k, "N/A" if v is None else v) for k, v in rows]


def bounds_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bound", "value"])
    for k, v in rows:
        w.writerow([k, repr(float(v)) if isinstance(v, (float, np.floating)) else v])
    return buf.getvalue()


# ------------------------------------------------------------------- runs


def _bound_for(cfg, problem, trace, opts):
    """(name, value) of the iteration bound that applies to this run, or (name, None)."""
    f = problem.smooth
    pol = opts.policy
    low = problem.lower_bound
    x0 = trace.iterates[0]
    try:
        if cfg.solver == "pnm":
            return "K1", iteration_bound_K1(problem.value(x0), low, opts.gamma, f.lipschitz_grad,
                                            pol.delta_g, pol.delta_h, opts.eps)
        if cfg.solver == "rnm":
            return "K2", iteration_bound_K2(problem.value(x0), low, opts.gamma, f.lipschitz_grad,
                                            pol.delta_g, pol.delta_h, opts.eps)
        if cfg.solver == "rn2cm":
            return "K3", theoretical_bounds_K3(problem.value(x0), low, trace.info["L_h"], opts.eta, opts.eps_g)[2]
    except ValueError:
        pass
    return ("none", None)


def run_one(cfg, seed, certificates=None, max_iter=None):
    problem = _problem(cfg, seed)
    opts = _solver_config(cfg, problem, seed, certificates, max_iter)
    t0 = time.perf_counter()
    runner = {"pnm": pnm_run, "rnm": rnm_run, "sc": sc_run, "rn2cm": rn2cm_run}[cfg.solver]
    trace = runner(problem, opts)
    wall = time.perf_counter() - t0
    summary = {
        "seed": seed,
        "status": trace.status,
        "iterations": trace.iterations,
        "objective_evals": trace.objective_evals,
        "wall_time": wall,
        "certificates": trace.certificate_counts(),
    }
    name, bound = _bound_for(cfg, problem, trace, opts)
    if bound is not None:
        summary["bound_name"] = name
        summary["bound"] = bound
        summary["bound_ratio"] = trace.iterations / bound if bound else None
        summary["within_bound"] = trace.iterations <= bound
    if opts.certificates:
        for key in ("terminal_exact_residual", "terminal_exact_gradient", "terminal_grad", "terminal_lam_min"):
            if key in trace.info:
                summary[key] = trace.info[key]
        if cfg.solver == "sc":
            summary["fitted_order"] = trace.info.get("fitted_order")
    if cfg.solver == "rn2cm":
        summary["operations"] = operation_accounting(trace, bound)
    return trace, summary


def output_root(cfg, out_root=None):
    base = out_root or os.environ.get(OUT_ENV) or os.getcwd()
    return os.path.join(base, cfg.output_dir)


def _run_and_write(cfg, seed, certs, max_iter, out):
    trace, summary = run_one(cfg, seed, certs, max_iter)
    trace.write_csv(os.path.join(out, f"trace_seed{seed}.csv"))
    return summary, trace.first_failure(), trace.status, trace.iterations, trace.objective_evals


def run_experiment(cfg, seeds=None, certificates=None, max_iter=None, out_root=None, jobs=1, log=print):
    """Run the sweep, write artifacts and return (exit_code, summaries).

    With ``jobs > 1`` seeds run in worker processes; every run is seeded on its
    own so the artifacts do not depend on the worker count.
    """
    seeds = cfg.seeds if seeds is None else seeds
    if not seeds:
        raise ConfigError("empty seeds list")
    certs = cfg.certificates if certificates is None else certificates
    out = output_root(cfg, out_root)
    os.makedirs(out, exist_ok=True)
    summaries = []
    failures = []
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_and_write, *zip(*[(cfg, s, certs, max_iter, out) for s in seeds])))
    else:
        results = [_run_and_write(cfg, s, certs, max_iter, out) for s in seeds]
    for seed, (summary, first, status, iters, evals) in zip(seeds, results):
        summaries.append(summary)
        if certs:
            if first is not None:
                failures.append((seed, *first))
            if summary.get("within_bound") is False and first is None:
                failures.append((seed, iters, "iteration_bound"))
            if evals:
                failures.append((seed, 0, "objective_evaluations"))
        if status != "terminated":
            log(f"warning: seed {seed} did not terminate within the iteration budget")
    rows = bound_rows(cfg)
    atomic_write(os.path.join(out, "bounds.csv"), bounds_csv(rows + _observed_rows(summaries)))
    doc = {"solver": cfg.solver, "problem": cfg.problem, "runs": summaries,
           "all_certificates_passed": not failures,
           "failures": [{"seed": s, "iteration": k, "check": c} for s, k, c in failures]}
    atomic_write(os.path.join(out, "summary.json"), json.dumps(doc, indent=2, sort_keys=True, default=_json_default))
    if failures:
        s, k, c = failures[0]
        log(f"certificate failure: seed {s}, iteration {k}, check {c}")
        return 1, summaries
    return 0, summaries


def _observed_rows(summaries):
    rows = []
    for s in summaries:
        rows.append((f"observed_iterations_seed{s['seed']}", s["iterations"]))
        if "bound" in s:
            rows.append((f"bound_ratio_seed{s['seed']}", s["bound_ratio"]))
    return rows


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


# ------------------------------------------------------------------ rates


def rates_table(directory):
    """Fitted local order per trace CSV having an ``e_k`` column, plus the median."""
    if not os.path.isdir(directory):
        raise ConfigError(f"not a directory: {directory}")
    out = []
    for path in sorted(glob.glob(os.path.join(directory, "*.csv"))):
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "e_k" not in rows[0]:
            continue
        errs = [float(r["e_k"]) for r in rows if r.get("e_k")]
        out.append((os.path.basename(path), fitted_order(errs)))
    vals = [v for _, v in out if v is not None]
    median = float(np.median(vals)) if vals else None
    return out, median


def builtin(name, **params):
    return builtin_problem(name, **params)
