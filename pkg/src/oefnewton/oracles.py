"""Inexact gradient/Hessian oracles: exact, adversarial noise injection and
finite-sum subsampling, with sample-size formulas.

RNG streams are keyed by (seed, iteration, purpose[, retry]) so every estimate
is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import DenseOperator, HessianOperator, SampledHessian
from .problems import kkt_residual

GRAD, HESS, SAMPLE_G, SAMPLE_H, EIGEN = 0, 1, 2, 3, 4

MODES = ("exact", "adversarial", "subsampled")
SCHEDULES = ("constant", "geometric", "adaptive")
KINDS = ("composite", "unconstrained", "strongly-convex", "sosp")


def stream(seed, k, purpose, retry=0):
    return np.random.default_rng([int(seed), int(k), int(purpose), int(retry)])


def _ceil(v):
    # guards against 1600.0000000000002 -> 1601
    return int(math.ceil(v * (1 - 1e-12)))


def _check_conf(conf):
    if not 0 < conf < 1:
        raise ValueError("confidence must lie in (0, 1)")


def gradient_sample_size(delta_g, eps, U_g, conf, m=None):
    """ceil(U_g^2 (1 + sqrt(8 ln(1/conf)))^2 / (delta_g^2 eps^2)), capped at m."""
    _check_conf(conf)
    if delta_g <= 0 or eps <= 0 or U_g <= 0:
        raise ValueError("delta_g, eps and U_g must be positive")
    v = U_g**2 * (1 + math.sqrt(8 * math.log(1 / conf))) ** 2 / (delta_g**2 * eps**2)
    size = _ceil(v)
    return min(size, m) if m is not None else size


def hessian_sample_size(delta_h, n, U_h, conf, m=None):
    """ceil(16 U_h^2 ln(2n/conf) / delta_h^2), capped at m."""
    _check_conf(conf)
    if delta_h <= 0 or U_h <= 0 or n < 1:
        raise ValueError("delta_h, U_h and n must be positive")
    v = 16 * U_h**2 * math.log(2 * n / conf) / delta_h**2
    size = _ceil(v)
    return min(size, m) if m is not None else size


def sosp_sample_sizes(eps_g, eps_h, n, U_g, U_h, conf, m=None):
    """Sample sizes giving the absolute accuracies eps_g/3 and eps_h/18."""
    _check_conf(conf)
    if eps_g <= 0 or eps_h <= 0:
        raise ValueError("eps_g and eps_h must be positive")
    sg = _ceil(9 * U_g**2 * (1 + math.sqrt(8 * math.log(1 / conf))) ** 2 / eps_g**2)
    sh = _ceil(5184 * U_h**2 * math.log(2 * n / conf) / eps_h**2)
    if m is not None:
        sg, sh = min(sg, m), min(sh, m)
    return sg, sh


@dataclass
class InexactnessPolicy:
    mode: str = "exact"
    delta_g: float = 0.0
    delta_h: float = 0.0
    schedule: str = "constant"
    decay: float = 0.5
    theta: float = 0.0
    confidence: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"oracle mode must be one of {MODES}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if not 0 <= self.delta_g < 0.5:
            raise ValueError("delta_g must lie in [0, 1/2)")
        if self.delta_h < 0:
            raise ValueError("delta_h must be nonnegative")
        if not 0 <= self.theta <= 1:
            raise ValueError("theta must lie in [0, 1]")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        _check_conf(self.confidence)

    def levels(self, k, grad_norm=None):
        """(delta_g_k, delta_h_k) at iteration k."""
        dg, dh = self.delta_g, self.delta_h
        if self.schedule == "geometric":
            return dg * self.decay**k, dh * self.decay**k
        if self.schedule == "adaptive":
            cap = (grad_norm / 2) ** self.theta
            return min(dg, cap), min(dh, cap)
        return dg, dh


@dataclass
class DerivativeEstimate:
    g: np.ndarray
    Q: object
    delta_g: float
    delta_h: float
    grad_noise: float = 0.0
    hess_noise: float = 0.0
    component_grads: int = 0
    sample_g: int = 0
    sample_h: int = 0
    full_batch_g: bool = True
    full_batch_h: bool = True
    halvings: int = 0
    fallback: bool = False
    certified: bool = True
    bound_violations: int = 0
    notes: list = field(default_factory=list)


def noise_vector(grad, rho, rng):
    """Seeded random direction scaled to rho * ||grad||."""
    gn = float(np.linalg.norm(grad))
    if gn == 0.0 or rho == 0.0:
        return np.zeros_like(grad)
    u = rng.standard_normal(grad.size)
    return (rho * gn / np.linalg.norm(u)) * u


def symmetric_noise(n, magnitude, rng, bound=None):
    """Random symmetric matrix with spectral norm ``magnitude`` (never above ``bound``)."""
    if magnitude == 0:
        return np.zeros((n, n))
    B = rng.standard_normal((n, n))
    E = 0.5 * (B + B.T)
    w = np.linalg.eigvalsh(E)
    E *= magnitude / max(abs(w[0]), abs(w[-1]))
    bound = magnitude if bound is None else bound
    for _ in range(8):
        if np.linalg.norm(E, 2) <= bound:
            break
        E *= 1 - 1e-12
    return E


def adversarial_gradient(x, delta, problem, rng, kind="unconstrained", max_halvings=60):
    """g = grad f(x) + e satisfying the relative model for the given kind.

    Returns (g, ||e||, halvings, fallback).  Unconstrained: ||e|| <= delta ||g||.
    Composite: ||e|| <= delta ||G~(x)|| with G~ built from the emitted g.
    """
    if not 0 <= delta < 0.5:
        raise ValueError("delta must lie in [0, 1/2)")
    grad = problem.smooth.gradient(x)
    e = noise_vector(grad, delta / (1 + delta), rng)

    def ok(e):
        g = grad + e
        ref = np.linalg.norm(kkt_residual(x, g, problem)) if kind == "composite" else np.linalg.norm(g)
        return np.linalg.norm(e) <= delta * ref

    halvings = 0
    while not ok(e):
        if halvings == max_halvings:
            return grad.copy(), 0.0, halvings, True
        e = 0.5 * e
        halvings += 1
    return grad + e, float(np.linalg.norm(e)), halvings, False


def adversarial_hessian(x, delta_h, problem, rng):
    """Q = hess f(x) + E with ||E||_2 = delta_h exactly (up to a final rounding guard)."""
    if delta_h < 0:
        raise ValueError("delta_h must be nonnegative")
    H = problem.smooth.hessian(x)
    E = symmetric_noise(H.shape[0], delta_h, rng)
    Q = H + E
    # the sum rounds; certify the measured distance, not just ||E||
    for _ in range(8):
        measured = np.linalg.norm(Q - H, 2)
        if measured <= delta_h:
            break
        grain = 4 * np.finfo(float).eps * float(np.abs(H).max())  # rounding step of H + E
        E *= min(1 - 1e-12, 1 - 2 * (measured - delta_h + grain) / delta_h)
        Q = H + E
    return Q, Q - H


class Oracle:
    """Derivative estimates for one solver run.

    kind: composite | unconstrained | strongly-convex | sosp.  ``eps`` is the
    accuracy used in the subsampled gradient size; ``eps_g``/``eps_h`` are the
    absolute SOSP levels; ``sigma`` feeds the strongly convex feasibility caps.
    """

    def __init__(self, problem, policy, kind="unconstrained", eps=None, eps_g=None, eps_h=None, sigma=None):
        if kind not in KINDS:
            raise ValueError(f"oracle kind must be one of {KINDS}")
        self.problem = problem
        self.policy = policy
        self.kind = kind
        self.eps = eps
        self.eps_g = eps_g
        self.eps_h = eps_h
        self.sigma = sigma
        f = problem.smooth
        if policy.mode == "subsampled":
            if kind in ("composite", "strongly-convex"):
                raise ValueError(f"subsampled oracles are not supported for the {kind} solver")
            if not f.is_finite_sum:
                raise ValueError("subsampled oracles need a finite-sum objective")
            if kind == "unconstrained" and eps is None:
                raise ValueError("subsampled gradient size needs eps")
        if kind == "sosp" and (eps_g is None or eps_h is None):
            raise ValueError("sosp oracle needs eps_g and eps_h")
        if kind == "strongly-convex" and policy.mode != "exact":
            if sigma is None or policy.delta_h >= sigma:
                raise ValueError("strongly convex oracle requires delta_h < sigma")
        self.gradient_calls = 0
        self.component_grads = 0

    # -- helpers
    def _levels(self, x, k):
        f = self.problem.smooth
        pol = self.policy
        gn = None
        if pol.schedule == "adaptive" or self.kind == "strongly-convex":
            gn = float(np.linalg.norm(f.gradient(x)))
        if self.kind == "strongly-convex":
            cap = (gn / 2) ** pol.theta
            dh = min(pol.delta_h, cap)
            dg = min(pol.delta_g, cap, (self.sigma - dh) / (2 * (f.lipschitz_grad + dh)))
            return dg, dh
        return pol.levels(k, gn)

    def estimate(self, x, k):
        x = np.asarray(x, dtype=float)
        if self.kind == "sosp":
            return self._sosp(x, k)
        pol = self.policy
        f = self.problem.smooth
        dg, dh = self._levels(x, k)
        if pol.mode == "exact":
            self.gradient_calls += 1
            return DerivativeEstimate(f.gradient(x), HessianOperator(f, x), 0.0, 0.0)
        if pol.mode == "adversarial":
            gkind = "composite" if self.kind == "composite" else "unconstrained"
            g, en, halv, fb = adversarial_gradient(x, dg, self.problem, stream(pol.seed, k, GRAD), gkind)
            self.gradient_calls += 1
            Qm, E = adversarial_hessian(x, dh, self.problem, stream(pol.seed, k, HESS))
            est = DerivativeEstimate(
                g, DenseOperator(Qm), dg, dh, grad_noise=en, hess_noise=float(np.linalg.norm(E, 2)),
                halvings=halv, fallback=fb,
            )
            if self.kind == "strongly-convex":
                gn = float(np.linalg.norm(g))
                est.certified = dg <= gn**pol.theta and dh <= gn**pol.theta
            return est
        # subsampled, unconstrained kind
        m = f.m
        sg = gradient_sample_size(dg, self.eps, f.U_g, pol.confidence, m) if dg > 0 else m
        sh = hessian_sample_size(dh, f.n, f.U_h, pol.confidence, m) if dh > 0 else m
        return self._sampled(x, k, sg, sh, dg, dh)

    def _sampled(self, x, k, sg, sh, dg, dh):
        f = self.problem.smooth
        pol = self.policy
        m = f.m
        viol = 0
        if sg >= m:
            g = f.gradient(x)
            full_g = True
            sg = m
        else:
            idx = stream(pol.seed, k, SAMPLE_G).integers(0, m, size=sg)
            g = f.gradient_subset(x, idx)
            full_g = False
            viol += int(np.any(component_gradient_norms(f, x, idx) > f.U_g * (1 + 1e-12)))
        self.gradient_calls += 1
        self.component_grads += sg
        if sh >= m:
            Q = SampledHessian(f, x, np.arange(m))
            full_h = True
            sh = m
        else:
            Q = SampledHessian(f, x, stream(pol.seed, k, SAMPLE_H).integers(0, m, size=sh))
            full_h = False
        return DerivativeEstimate(
            g, Q, dg, dh, component_grads=sg, sample_g=sg, sample_h=sh,
            full_batch_g=full_g, full_batch_h=full_h, bound_violations=viol,
        )

    def _sosp(self, x, k):
        pol = self.policy
        f = self.problem.smooth
        lg, lh = self.eps_g / 3, self.eps_h / 18
        if pol.mode == "exact":
            self.gradient_calls += 1
            return DerivativeEstimate(f.gradient(x), HessianOperator(f, x), 0.0, 0.0)
        if pol.mode == "adversarial":
            rg = stream(pol.seed, k, GRAD)
            grad = f.gradient(x)
            u = rg.uniform(0.5, 1.0)
            e = rg.standard_normal(f.n)
            e *= u * lg / np.linalg.norm(e)
            self.gradient_calls += 1
            rh = stream(pol.seed, k, HESS)
            mag = rh.uniform(0.5, 1.0) * lh
            E = symmetric_noise(f.n, mag, rh, bound=lh)
            return DerivativeEstimate(
                grad + e, DenseOperator(f.hessian(x) + E), lg, lh,
                grad_noise=float(np.linalg.norm(e)), hess_noise=float(np.linalg.norm(E, 2)),
            )
        sg, sh = sosp_sample_sizes(self.eps_g, self.eps_h, f.n, f.U_g, f.U_h, pol.confidence, f.m)
        return self._sampled(x, k, sg, sh, lg, lh)


def component_gradient_norms(f, x, idx):
    """||grad f_i(x)|| for each sampled i of a FiniteSumGLM."""
    Ai = f.A[idx]
    w = f.loss.d1(np.einsum("ij,j->i", Ai, x), f.b[idx])
    G = w[:, None] * Ai + f.ridge * x[None, :]
    return np.sqrt(np.einsum("ij,ij->i", G, G))
