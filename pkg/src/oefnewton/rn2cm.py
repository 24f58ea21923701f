"""Two-phase regularized Newton / negative curvature method for approximate
second-order stationary points, with operation accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    NonPositiveCurvature,
    ShiftedOperator,
    cg_budget,
    cg_solve,
    lanczos_budget,
    min_eigen,
    sol_cg_tolerance,
)
from .oracles import EIGEN, InexactnessPolicy, Oracle
from .problems import ObjectiveAudit
from .trace import SolverTrace

EIGEN_RETRIES = 3


@dataclass
class RN2CMConfig:
    eps_g: float = 1e-2
    L_h: float | None = None
    mu_hat: float = 1.0
    eta: float = 1.0
    eig_delta: float = 0.05
    eigen_mode: str = "auto"
    policy: InexactnessPolicy = field(default_factory=InexactnessPolicy)
    max_iter: int = 100000
    certificates: bool = True
    x0: np.ndarray | None = None

    def __post_init__(self):
        if self.eps_g <= 0 or self.mu_hat <= 0 or self.eta <= 0:
            raise ValueError("eps_g, mu_hat and eta must be positive")
        if not 0 < self.eig_delta < 1:
            raise ValueError("eig_delta must lie in (0, 1)")


def nc_step(g, p, L_h, eps_h):
    """Unit direction -sign(g'p) p with sign(0) = +1, and step 17 eps_h / (12 L_h)."""
    s = 1.0 if float(g @ p) >= 0 else -1.0
    return -s * p, 17 * eps_h / (12 * L_h)


def sol_alpha(eps_g, L_h, eta, d_norm):
    return math.sqrt(2) * math.sqrt(eps_g) / (math.sqrt(3 * (L_h + eta)) * d_norm)


def theoretical_bounds_K3(f0, f_star, L_h, eta, eps):
    if f_star is None:
        raise ValueError("lower bound f_* unknown")
    if f0 < f_star:
        raise ValueError("f0 is below f_*")
    c_nc = 17 / (10368 * math.sqrt(L_h))
    c_sol = math.sqrt(2) * eta / (9 * math.sqrt(3) * (L_h + eta) ** 1.5)
    K = math.ceil(2 * (f0 - f_star) / min(c_nc, c_sol) * eps**-1.5) + 1
    return c_nc, c_sol, int(K)


def rn2cm_run(problem, config):
    audit = ObjectiveAudit(problem)
    f = problem.smooth
    L_g = f.lipschitz_grad
    L_h = config.L_h if config.L_h is not None else f.lipschitz_hess
    eps_g = config.eps_g
    if not 0 < eps_g < L_h:
        raise ValueError("eps_g must lie in (0, L_h)")
    eps_h = math.sqrt(L_h * eps_g)
    mu_hat, eta = config.mu_hat, config.eta
    pol = config.policy
    oracle = Oracle(audit, pol, kind="sosp", eps_g=eps_g, eps_h=eps_h)
    n = f.n
    tau = sol_cg_tolerance(mu_hat, eps_h, L_g)
    kappa = (L_g + eps_h / 18 + 2 * eps_h) / (eps_h / 2)
    cgb = cg_budget(n, kappa, tau)
    eigb = lanczos_budget(n, eps_h, config.eig_delta)

    x = problem.x0() if config.x0 is None else np.asarray(config.x0, dtype=float).copy()
    trace = SolverTrace("rn2cm", problem.descriptor.get("name", ""))
    trace.info.update(eps_g=eps_g, eps_h=eps_h, L_h=L_h, cg_budget=cgb, eigen_budget=eigb, sol_tol=tau)
    trace.iterates.append(x.copy())
    n_grad = n_eig = n_cgmv = n_samples = 0
    for k in range(config.max_iter + 1):
        if k == config.max_iter:
            trace.status = "nonterminated"
            break
        est = oracle.estimate(x, k)
        g = est.g
        gnorm = float(np.linalg.norm(g))
        phase = "first" if gnorm >= eps_g else "second"
        n_grad += 1
        retry = 0
        eig_mv = cg_iters = cg_mv = 0
        eig_max = 0
        while True:
            eig = min_eigen(est.Q, eps_h, config.eig_delta, seed=[pol.seed, k, EIGEN, retry], mode=config.eigen_mode)
            eig_mv += eig.matvecs
            eig_max = max(eig_max, eig.matvecs)
            lam = eig.value
            if phase == "second":
                d_type = "terminal-second-phase" if lam >= -eps_h else "NC"
                break
            if lam < -eps_h:
                d_type = "NC"
                break
            try:
                rep = cg_solve(ShiftedOperator(est.Q, 2 * eps_h), g, tau, max_iter=n, min_curvature=eps_h / 2)
            except NonPositiveCurvature:
                # curvature evidence contradicts the eigen estimate: retry with a fresh seed
                retry += 1
                if retry > EIGEN_RETRIES:
                    raise RuntimeError("eigen estimate contradicted by CG curvature after retries")
                continue
            cg_iters, cg_mv = rep.iterations, rep.matvecs
            d_type = "SOL"
            break

        row = dict(phase=phase, g_norm=gnorm, lam_hat=lam, eigen_method=eig.method, eigen_retries=retry,
                   eigen_matvecs=eig_max, cg_iters=cg_iters, cg_matvecs=cg_mv,
                   sample_g=est.sample_g, sample_h=est.sample_h)
        step = None
        x_new = x
        if d_type == "NC":
            d, alpha = nc_step(g, eig.vector, L_h, eps_h)
            step = alpha * d
            row.update(d_type="NC", alpha=alpha, d_norm=1.0, gTp=float(g @ eig.vector))
        elif d_type == "SOL":
            d = rep.d
            dn = float(np.linalg.norm(d))
            r_norm = float(np.linalg.norm(rep.r))
            row.update(residual=r_norm, cert_sol_residual=bool(r_norm <= mu_hat * eps_h * dn), cg_converged=rep.converged)
            if dn <= 2 * eps_g / eps_h:
                d_type = "terminal-SOL"
                row.update(d_type=d_type, alpha=1.0, d_norm=dn,
                           cert_terminal_grad=bool(gnorm <= 2 * (L_g + (37 / 18 + mu_hat) * eps_h) * eps_g / eps_h))
                x_new = x + d
            else:
                alpha = sol_alpha(eps_g, L_h, eta, dn)
                if not alpha**2 < L_h / (6 * (L_h + eta)):
                    raise AssertionError("SOL step size exceeds its theoretical bound")
                step = alpha * d
                row.update(d_type="SOL", alpha=alpha, d_norm=dn)
        else:
            row.update(d_type=d_type, alpha=0.0, d_norm=0.0)

        n_eig += eig_mv
        n_cgmv += cg_mv
        # Q matvecs this iteration; a dense eigen solve is accounted as n of them
        q_mv = est.Q.matvecs + (eig_mv if eig.method == "dense" else 0)
        ops_k = est.sample_g + est.sample_h * q_mv
        n_samples += ops_k
        row.update(eigen_matvecs_k=eig_mv, q_matvecs_k=q_mv, sample_ops_k=ops_k,
                   cert_cg_budget=bool(cg_iters <= cgb), cert_eigen_budget=bool(eig_max <= min(n, eigb)),
                   n_grad=n_grad, n_eigen_matvecs=n_eig, n_cg_matvecs=n_cgmv, n_sample_ops=n_samples)
        trace.add(**row)
        if step is not None:
            x_new = x + step
            trace.iterates.append(x_new.copy())
            x = x_new
            continue
        trace.status = "terminated"
        trace.x_out = x_new.copy()
        break
    if trace.x_out is None:
        trace.x_out = x.copy()
    trace.objective_evals = audit.evaluations
    trace.info["iterations"] = len(trace.rows)
    if config.certificates:
        rn2cm_diagnostics(trace, problem, config)
    return trace


def rn2cm_diagnostics(trace, problem, config):
    """Per-step decrease, Rayleigh and termination certificates with exact f, grad, Hessian."""
    f = problem.smooth
    info = trace.info
    eps_g, eps_h, L_h = info["eps_g"], info["eps_h"], info["L_h"]
    mu_hat, eta = config.mu_hat, config.eta
    c_nc = 17 / (10368 * math.sqrt(L_h))
    c_sol = math.sqrt(2) * eta / (9 * math.sqrt(3) * (L_h + eta) ** 1.5)
    fs = [f.value(z) for z in trace.iterates]
    for k, row in enumerate(trace.rows):
        z = trace.iterates[k]
        row["f_diag"] = fs[k]
        if row["d_type"] in ("NC", "SOL"):
            dec = fs[k] - fs[k + 1]
            row["decrease_diag"] = dec
            c = c_nc if row["d_type"] == "NC" else c_sol
            row["cert_decrease"] = bool(dec >= c * eps_g**1.5 - 1e-10)
            if row["d_type"] == "NC":
                p = (trace.iterates[k + 1] - z) / row["alpha"]
                curv = float(p @ (f.hessian(z) @ p))
                row["cert_rayleigh"] = bool(curv <= -(17 / 18) * abs(row["lam_hat"]) + 1e-12)
    last = trace.rows[-1] if trace.rows else None
    if last is not None and trace.status == "terminated":
        xo = trace.x_out
        gex = float(np.linalg.norm(f.gradient(xo)))
        lmin = float(np.linalg.eigvalsh(f.hessian(xo))[0])
        last["terminal_grad_diag"] = gex
        last["terminal_lam_min_diag"] = lmin
        last["cert_terminal"] = bool(gex <= (58 / 9 + 2 * mu_hat) * eps_g
                                     and lmin >= -(32 / 9) * math.sqrt(L_h * eps_g))
        if last["d_type"] == "terminal-second-phase":
            last["cert_terminal_second"] = bool(gex <= 4 / 3 * eps_g and lmin >= -(14 / 9) * eps_h)
        info["terminal_grad"] = gex
        info["terminal_lam_min"] = lmin


def operation_accounting(trace, K3=None):
    """Totals, per-iteration maxima and budget ratios from the counters of an rn2cm trace."""
    rows = trace.rows
    info = trace.info
    n_rows = len(rows)
    cg = [r["cg_iters"] for r in rows]
    eig = [r["eigen_matvecs"] for r in rows]
    ops = [r["sample_ops_k"] for r in rows]
    rep = {
        "iterations": n_rows,
        "cg_matvecs_total": rows[-1]["n_cg_matvecs"] if rows else 0,
        "eigen_matvecs_total": rows[-1]["n_eigen_matvecs"] if rows else 0,
        "cg_iters_max": max(cg, default=0),
        "eigen_matvecs_max": max(eig, default=0),
        "cg_budget": info["cg_budget"],
        "eigen_budget": info["eigen_budget"],
        "cg_within_budget": all(c <= info["cg_budget"] for c in cg),
        "eigen_within_budget": all(r["cert_eigen_budget"] for r in rows),
        "sample_ops_total": rows[-1]["n_sample_ops"] if rows else 0,
    }
    if rows and rows[0]["sample_g"]:
        # per-iteration envelope |S_g| + |S_h| * (per-iteration matvec max)
        mv_max = max(r["q_matvecs_k"] for r in rows)
        sg = max(r["sample_g"] for r in rows)
        sh = max(r["sample_h"] for r in rows)
        env_k = sg + sh * mv_max
        rep["sample_ops_envelope_per_iter"] = env_k
        rep["sample_ops_within_envelope"] = all(o <= env_k for o in ops)
        if K3 is not None:
            rep["sample_ops_envelope_total"] = K3 * env_k
            rep["sample_ops_total_within"] = rep["sample_ops_total"] <= K3 * env_k
    return rep
