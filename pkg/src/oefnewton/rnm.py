"""Objective-evaluation-free regularized Newton method (unconstrained) and its
strongly convex variant with gradient-adaptive inexactness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    NonPositiveCurvature,
    cg_relative_tolerance,
    cg_solve,
    min_eigen,
    regularized_hessian,
    sc_cg_tolerance,
)
from .oracles import EIGEN, InexactnessPolicy, Oracle
from .pnm import ETA_SCHEDULES, eta_at, hessian_norm_bound
from .problems import ObjectiveAudit
from .trace import SolverTrace, fitted_order


@dataclass
class RNMConfig:
    gamma: float = 2.0
    gamma_bar: float = 2.0
    eta: float = 0.5
    eta_schedule: str = "constant"
    eta_decay: float = 0.5
    policy: InexactnessPolicy = field(default_factory=InexactnessPolicy)
    eps: float = 1e-6
    max_iter: int = 1000
    ck_mode: str = "global"
    c_min: float = 1e-8
    eigen_mode: str = "dense"
    certificates: bool = True
    x0: np.ndarray | None = None
    # strongly convex variant
    theta: float = 1.0
    sigma: float | None = None
    eps_hat0: float = 1.0

    def __post_init__(self):
        if self.gamma <= 1 or self.gamma_bar <= 1:
            raise ValueError("gamma and gamma_bar must exceed 1")
        if not 0 <= self.eta < 1:
            raise ValueError("eta must lie in [0, 1)")
        if self.eta_schedule not in ETA_SCHEDULES:
            raise ValueError(f"eta schedule must be one of {ETA_SCHEDULES}")
        if self.ck_mode not in ("global", "local"):
            raise ValueError("ck_mode must be 'global' or 'local'")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


def rnm_ck(gamma, L_g, eta, delta_g, delta_h):
    if delta_g >= 0.5:
        raise ValueError("delta_g must be below 1/2")
    return gamma * (L_g + eta + 2 * delta_g * (eta / 2 + 2 * L_g + 2 * delta_h)) / (1 - 2 * delta_g)


def rnm_ck_local(gamma_bar, L_g, eta, delta_g, delta_h):
    """Local-rate regularization as printed, denominator 2(1 - delta_g)."""
    if delta_g >= 1:
        raise ValueError("delta_g must be below 1")
    return gamma_bar * (eta + 2 * delta_g * (eta / 2 + 2 * L_g + 2 * delta_h)) / (2 * (1 - delta_g))


def iteration_bound_K2(f0, f_star, gamma, L_g, delta_g, delta_h, eps):
    """Same shape as the composite bound, with the unconstrained regularization inside."""
    if f_star is None:
        raise ValueError("optimal value unknown; pass a certified lower bound instead")
    if f0 < f_star:
        raise ValueError("f0 is below the optimal value")
    b = 2 * L_g + 2 * delta_h + gamma * (L_g + 1 + 2 * delta_g * (0.5 + 2 * L_g + 2 * delta_h)) / (1 - 2 * delta_g)
    return int(math.ceil(2 * (1.5 + b) ** 2 * (f0 - f_star) / ((gamma - 1) * L_g * eps**2)))


def rnm_step(g, H, eta, H_bound):
    """CG step with ||H d + g|| <= (eta/2)||d||; eta = 0 solves to 1e-14 relative."""
    n = g.size
    if eta > 0:
        tol = cg_relative_tolerance(eta, 0.0, 0.0, H_bound)
        rep = cg_solve(H, g, tol, max_iter=n)
    else:
        rep = cg_solve(H, g, 1e-14, max_iter=10 * n)
    if not rep.converged and eta > 0:
        raise RuntimeError("CG did not converge within n iterations; the regularized Hessian is suspect")
    return rep.d, rep


def rnm_run(problem, config):
    audit = ObjectiveAudit(problem)
    f = problem.smooth
    L_g = f.lipschitz_grad
    pol = config.policy
    oracle = Oracle(audit, pol, kind="unconstrained", eps=config.eps)
    x = problem.x0() if config.x0 is None else np.asarray(config.x0, dtype=float).copy()
    trace = SolverTrace("rnm", problem.descriptor.get("name", ""))
    trace.iterates.append(x.copy())
    n_grad = n_matvec = n_cg = n_comp = 0
    for k in range(config.max_iter + 1):
        est = oracle.estimate(x, k)
        g = est.g
        gnorm = float(np.linalg.norm(g))
        n_grad += 1
        n_comp += est.component_grads
        row = dict(g_norm=gnorm, delta_g=est.delta_g, delta_h=est.delta_h,
                   sample_g=est.sample_g, sample_h=est.sample_h, bound_violations=est.bound_violations)
        if gnorm <= config.eps or k == config.max_iter:
            trace.status = "terminated" if gnorm <= config.eps else "nonterminated"
            trace.add(**row, n_grad=n_grad, n_matvec=n_matvec, n_cg=n_cg, n_component=n_comp)
            break
        eta = eta_at(config.eta, config.eta_schedule, config.eta_decay, k, gnorm)
        if config.ck_mode == "global":
            c = rnm_ck(config.gamma, L_g, eta, est.delta_g, est.delta_h)
        else:
            c = max(rnm_ck_local(config.gamma_bar, L_g, eta, est.delta_g, est.delta_h), config.c_min)
        eig = min_eigen(est.Q, c, 0.05, seed=[pol.seed, k, EIGEN], mode=config.eigen_mode)
        H = regularized_hessian(est.Q, c, eig, eps_h=c)
        Hb = hessian_norm_bound(L_g, est.delta_h, c, eig.method)
        d, rep = rnm_step(g, H, eta, Hb)
        r_norm = float(np.linalg.norm(rep.r))
        dn = float(np.linalg.norm(d))
        n_matvec += rep.matvecs + rep.check_matvecs
        n_cg += rep.iterations
        n_comp += getattr(est.Q, "component_hvps", 0)
        trace.add(**row, eta=eta, c_k=c, H_bound=Hb, step_norm=dn, cg_iters=rep.iterations,
                  cg_converged=rep.converged, residual=r_norm,
                  cert_step_residual=bool(r_norm <= eta / 2 * dn) if (eta > 0 and rep.converged) else None,
                  n_grad=n_grad, n_matvec=n_matvec, n_cg=n_cg, n_component=n_comp)
        x = x + d
        trace.iterates.append(x.copy())
    trace.x_out = x.copy()
    trace.objective_evals = audit.evaluations
    trace.info["iterations"] = len(trace.iterates) - 1
    trace.info["eps"] = config.eps
    if config.certificates:
        fs = [f.value(z) for z in trace.iterates]
        for k, row in enumerate(trace.rows):
            z = trace.iterates[k]
            row["f_diag"] = fs[k]
            row["grad_exact_diag"] = float(np.linalg.norm(f.gradient(z)))
            if "c_k" in row:
                coef = row["c_k"] - L_g - row["eta"] - 2 * row["delta_g"] * (row["eta"] / 2 + row["H_bound"])
                slack = 1e-9 * (1 + abs(fs[k]))
                row["decrease_coef"] = coef
                ok = bool(coef > 0 and fs[k] - fs[k + 1] >= 0.5 * coef * row["step_norm"] ** 2 - slack)
                row["cert_decrease"] = ok if config.ck_mode == "global" else None
        trace.info["terminal_exact_gradient"] = trace.rows[-1]["grad_exact_diag"]
    return trace


# ------------------------------------------------------------ strongly convex


def sc_mu(sigma, delta_h, g_norm, theta):
    if not sigma > delta_h >= 0:
        raise ValueError("need sigma > delta_h >= 0")
    if theta > 0 and g_norm <= 0:
        raise ValueError("zero gradient with theta > 0: the run should have stopped")
    return min(1.0, (sigma - delta_h) / (4 * g_norm**theta))


def theoretical_sc_constants(sigma, L_g, L_h, eps_hat0, delta_g, delta_h, theta, U_g):
    """(s0, s1, s2, e1, e2, e3): contraction constants and basin radii of the
    strongly convex method.  theta = 0 sets e2 = e1."""
    if not (sigma > delta_h >= 0 and 0 <= delta_g < 1):
        raise ValueError("need sigma > delta_h >= 0 and delta_g in [0, 1)")
    s0 = 2 * (L_h * eps_hat0 + 2 * L_g) / (sigma - delta_h)
    e1 = eps_hat0 / (1 + s0)
    a = L_g + sigma + U_g**theta / (2 * (1 - delta_g) ** theta)
    s1 = (1 / (1 - delta_g)) * (a + sigma + 0.5) * a**theta
    s2 = ((1 + delta_g) / sigma) * (L_h * s0**2 * e1 ** (1 - theta) / (2 * (1 - delta_g)) + s1 * s0 ** (1 + theta))
    e2 = e1 if theta == 0 else min(e1, (2 * s2) ** (-1 / theta))
    e3 = e2 / (1 + 2 * s0)
    return s0, s1, s2, e1, e2, e3


def reference_minimizer(problem, x0=None, iters=200, tol=1e-14):
    """High-accuracy minimizer by exact Newton iterations (diagnostics only)."""
    if problem.minimizer is not None:
        return np.asarray(problem.minimizer, dtype=float)
    f = problem.smooth
    x = problem.x0() if x0 is None else np.asarray(x0, dtype=float).copy()
    for _ in range(iters):
        g = f.gradient(x)
        if np.linalg.norm(g) <= tol:
            break
        x = x - np.linalg.solve(f.hessian(x), g)
    return x


def sc_run(problem, config, x_star=None):
    """Newton-type method for sigma-strongly convex f with adaptive inexactness."""
    audit = ObjectiveAudit(problem)
    f = problem.smooth
    L_g = f.lipschitz_grad
    sigma = config.sigma if config.sigma is not None else f.strong_convexity
    pol = config.policy
    if sigma <= 0:
        raise ValueError("strongly convex method needs sigma > 0")
    if pol.mode != "exact" and pol.delta_h >= sigma:
        raise ValueError("delta_h must be below sigma")
    policy = InexactnessPolicy(mode=pol.mode, delta_g=pol.delta_g, delta_h=pol.delta_h, schedule="adaptive",
                               theta=config.theta, confidence=pol.confidence, seed=pol.seed)
    oracle = Oracle(audit, policy, kind="strongly-convex", sigma=sigma)
    x = problem.x0() if config.x0 is None else np.asarray(config.x0, dtype=float).copy()
    theta = config.theta
    trace = SolverTrace("sc", problem.descriptor.get("name", ""))
    trace.iterates.append(x.copy())
    n_grad = n_matvec = 0
    for k in range(config.max_iter + 1):
        est = oracle.estimate(x, k)
        g = est.g
        gnorm = float(np.linalg.norm(g))
        n_grad += 1
        row = dict(g_norm=gnorm, delta_g=est.delta_g, delta_h=est.delta_h, cert_oracle=est.certified)
        if gnorm <= config.eps or k == config.max_iter:
            trace.status = "terminated" if gnorm <= config.eps else "nonterminated"
            trace.add(**row, n_grad=n_grad, n_matvec=n_matvec)
            break
        mu = sc_mu(sigma, est.delta_h, gnorm, theta)
        gth = gnorm**theta
        eig = min_eigen(est.Q, sigma, 0.05, seed=[pol.seed, k, EIGEN])
        if eig.value <= 0:
            raise RuntimeError("approximate Hessian is not positive definite")
        tol = sc_cg_tolerance(mu, gth, L_g, est.delta_h)
        try:
            rep = cg_solve(est.Q, g, tol, max_iter=2 * g.size)
        except NonPositiveCurvature as exc:
            raise RuntimeError("approximate Hessian is not positive definite") from exc
        d = rep.d
        dn = float(np.linalg.norm(d))
        r_norm = float(np.linalg.norm(rep.r))
        n_matvec += rep.matvecs + rep.check_matvecs
        Qn = float(np.linalg.norm(est.Q.dense(), 2))
        trace.add(**row, mu=mu, lam_min_Q=eig.value, Q_norm=Qn, step_norm=dn, cg_iters=rep.iterations,
                  residual=r_norm,
                  cert_sc_step_residual=bool(r_norm <= mu / 2 * gth * dn),
                  cert_grad_step_ratio=bool(gnorm <= (Qn + mu / 2 * gth) * dn * (1 + 1e-12)),
                  n_grad=n_grad, n_matvec=n_matvec)
        x = x + d
        trace.iterates.append(x.copy())
    trace.x_out = x.copy()
    trace.objective_evals = audit.evaluations
    trace.info["iterations"] = len(trace.iterates) - 1
    if config.certificates:
        sc_diagnostics(trace, problem, sigma, x_star)
    return trace


def sc_diagnostics(trace, problem, sigma, x_star=None):
    f = problem.smooth
    L_g = f.lipschitz_grad
    xs = reference_minimizer(problem, trace.iterates[0]) if x_star is None else x_star
    errs = [float(np.linalg.norm(z - xs)) for z in trace.iterates]
    for k, row in enumerate(trace.rows):
        z = trace.iterates[k]
        gex = float(np.linalg.norm(f.gradient(z)))
        row["e_k"] = errs[k]
        row["grad_exact_diag"] = gex
        row["cert_error_bound"] = bool(errs[k] <= gex / sigma * (1 + 1e-9) + 1e-15)
        if "mu" in row:
            row["cert_grad_relative"] = bool(gex <= (1 + row["delta_g"]) * row["g_norm"] * (1 + 1e-12)
                                    and row["lam_min_Q"] >= sigma - row["delta_h"] - 1e-12
                                    and row["Q_norm"] <= L_g + row["delta_h"] + 1e-12)
            row["contraction"] = errs[k + 1] <= 0.5 * errs[k]
    trace.info["errors"] = errs
    trace.info["fitted_order"] = fitted_order(errs)
