"""Linear operators, conjugate gradients, smallest-eigenpair estimation and the
regularized Hessian shift."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DENSE_EIGEN_MAX_N = 256


# ------------------------------------------------------------------ operators


class Operator:
    """Symmetric linear operator with a matvec counter."""

    n: int

    def __init__(self, n):
        self.n = int(n)
        self.matvecs = 0

    def _apply(self, v):
        raise NotImplementedError

    def matvec(self, v):
        self.matvecs += 1
        return self._apply(np.asarray(v, dtype=float))

    def __matmul__(self, v):
        return self.matvec(v)

    def dense(self):
        """Materialize the matrix (diagnostics and dense eigen mode; not counted)."""
        raise NotImplementedError


class DenseOperator(Operator):
    def __init__(self, M):
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("operator matrix must be square")
        super().__init__(M.shape[0])
        self.M = M

    def _apply(self, v):
        return np.einsum("ij,j->i", self.M, v)

    def dense(self):
        return self.M.copy()


class HessianOperator(Operator):
    """Hessian-vector closure of a smooth objective at a fixed point."""

    def __init__(self, smooth, x):
        super().__init__(smooth.n)
        self.smooth = smooth
        self.x = np.asarray(x, dtype=float).copy()

    def _apply(self, v):
        return self.smooth.hessian_vector(self.x, v)

    def dense(self):
        return self.smooth.hessian(self.x)


class SampledHessian(Operator):
    """(1/|S|) sum_{i in S} hess f_i(x) as a closure; never materialized for matvecs.

    ``component_hvps`` counts per-component Hessian-vector products, |S| per matvec.
    """

    def __init__(self, finite_sum, x, idx):
        idx = np.asarray(idx)
        if idx.size == 0:
            raise ValueError("empty Hessian sample")
        super().__init__(finite_sum.n)
        self.fs = finite_sum
        self.x = np.asarray(x, dtype=float).copy()
        self.idx = idx
        self.component_hvps = 0

    def _apply(self, v):
        self.component_hvps += self.idx.size
        return self.fs.hvp_subset(self.x, v, self.idx)

    def dense(self):
        return self.fs.hessian_subset(self.x, self.idx)


class ShiftedOperator(Operator):
    """base + shift * I.  Matvecs are forwarded, so the base counter sees them too."""

    def __init__(self, base, shift):
        super().__init__(base.n)
        self.base = base
        self.shift = float(shift)

    def _apply(self, v):
        return self.base.matvec(v) + self.shift * v

    def dense(self):
        M = self.base.dense()
        M[np.diag_indices(self.n)] += self.shift
        return M


def as_operator(A):
    return A if isinstance(A, Operator) else DenseOperator(A)


# ---------------------------------------------------------------------- CG


class NonPositiveCurvature(RuntimeError):
    """CG met a direction p with p'Ap <= threshold * p'p."""

    def __init__(self, direction, curvature):
        self.direction = direction
        self.curvature = curvature
        super().__init__(f"curvature {curvature:.3e} along a CG direction is below the threshold")


@dataclass
class CGReport:
    d: np.ndarray
    r: np.ndarray
    iterations: int
    matvecs: int
    converged: bool
    check_matvecs: int = 0
    iterates: list = field(default_factory=list)


def cg_solve(A, g, rel_tol, max_iter=None, min_curvature=0.0, record=False):
    """Solve A d = -g from d = 0, stopping once ||A d + g|| <= rel_tol * ||g||.

    ``r`` in the report is recomputed as A d + g with one extra matvec, counted
    in ``check_matvecs`` rather than ``matvecs`` (the Krylov work).  A direction
    with p'Ap <= min_curvature * ||p||^2 raises ``NonPositiveCurvature``.
    """
    A = as_operator(A)
    g = np.asarray(g, dtype=float)
    n = g.size
    if max_iter is None:
        max_iter = n
    d = np.zeros(n)
    iterates = [d.copy()] if record else []
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return CGReport(d, np.zeros(n), 0, 0, True, 0, iterates)
    target = rel_tol * gnorm

    r = g.copy()
    p = -r
    rr = float(r @ r)
    it = 0
    krylov = 0
    checks = 0
    converged = False
    while it < max_iter:
        Ap = A.matvec(p)
        krylov += 1
        curv = float(p @ Ap)
        if curv <= min_curvature * float(p @ p):
            raise NonPositiveCurvature(p.copy(), curv / float(p @ p))
        alpha = rr / curv
        d = d + alpha * p
        r = r + alpha * Ap
        it += 1
        if record:
            iterates.append(d.copy())
        rr_new = float(r @ r)
        if math.sqrt(rr_new) <= target:
            r_true = A.matvec(d) + g
            checks += 1
            if np.linalg.norm(r_true) <= target:
                converged = True
                r = r_true
                break
            # recursive residual drifted: restart from the true residual
            r = r_true
            rr_new = float(r @ r)
            p = -r
            rr = rr_new
            continue
        p = -r + (rr_new / rr) * p
        rr = rr_new
    if not converged:
        r = A.matvec(d) + g
        checks += 1
        converged = bool(np.linalg.norm(r) <= target)
    d, r = _galerkin_rescale(d, r, g, converged, target)
    if record and iterates:
        iterates[-1] = d.copy()
    return CGReport(d, r, it, krylov, converged, checks, iterates)


def _galerkin_rescale(d, r, g, converged, target):
    """Exact line search along d so that r'd = 0 survives rounding.

    Uses A d = r - g, so no extra matvec.  Kept only if the residual target still holds.
    """
    Ad = r - g
    dAd = float(d @ Ad)
    if dAd <= 0 or not np.any(d):
        return d, r
    beta = -float(r @ d) / dAd
    r_new = r + beta * Ad
    if converged and np.linalg.norm(r_new) > target:
        return d, r
    return (1 + beta) * d, r_new


def cg_relative_tolerance(eta, L_g, delta_h, c):
    """Relative CG tolerance that implies ||H d + g|| <= (eta/2)||d||."""
    t = eta / 2
    return t / (2 * L_g + 2 * delta_h + c + t)


def sc_cg_tolerance(mu, g_norm_theta, L_g, delta_h):
    """Relative CG tolerance for the strongly convex step, target (mu/2)||g||^theta."""
    t = mu * g_norm_theta / 2
    return t / (2 * L_g + 2 * delta_h + t)


def sol_cg_tolerance(mu_hat, eps_h, L_g):
    """Relative CG tolerance for the shifted system (Q + 2 eps_h I) d = -g, target mu_hat*eps_h."""
    t = mu_hat * eps_h
    return t / (L_g + eps_h / 18 + 2 * eps_h + t)


def cg_budget(n, kappa, rel_tol):
    """min{n, ceil(0.5 sqrt(kappa) ln(2 sqrt(kappa)/tau))}: classical CG iteration bound."""
    s = math.sqrt(kappa)
    return int(min(n, math.ceil(0.5 * s * math.log(2 * s / rel_tol))))


# ------------------------------------------------------------------ eigen


@dataclass
class EigenEstimate:
    value: float
    vector: np.ndarray
    matvecs: int
    method: str
    converged: bool = True
    ritz_history: list = field(default_factory=list)


def _raw_lanczos_budget(n, eps_h, delta):
    return math.ceil(2 * eps_h ** -0.5 * math.log(9 * n / delta**2))


def lanczos_budget(n, eps_h, delta):
    return int(min(n, _raw_lanczos_budget(n, eps_h, delta)))


def min_eigen(Q, eps_h, delta, seed=0, mode="auto"):
    """Smallest eigenpair estimate of the symmetric operator Q.

    mode "dense" uses a full eigendecomposition (accounted as n matvecs),
    "lanczos" runs Lanczos with full reorthogonalization from a seeded uniform
    unit vector, "auto" picks dense for n <= 256 unless its accounted cost of n
    matvecs would exceed the Lanczos budget.
    """
    Q = as_operator(Q)
    n = Q.n
    if mode == "auto":
        small = n <= DENSE_EIGEN_MAX_N and _raw_lanczos_budget(n, eps_h, delta) >= n
        mode = "dense" if small else "lanczos"
    if mode == "dense":
        M = Q.dense()
        M = 0.5 * (M + M.T)
        w, V = np.linalg.eigh(M)
        p = V[:, 0] / np.linalg.norm(V[:, 0])
        lam = float(p @ (M @ p))
        return EigenEstimate(lam, p, n, "dense", True, [float(w[0])])
    if mode != "lanczos":
        raise ValueError(f"unknown eigen mode {mode!r}")
    return _lanczos(Q, eps_h, delta, seed)


def _lanczos(Q, eps_h, delta, seed):
    n = Q.n
    budget = lanczos_budget(n, eps_h, delta)
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    V = np.zeros((n, budget))
    W = np.zeros((n, budget))
    alphas, betas = [], []
    history = []
    used = 0
    converged = False
    s = np.ones(1)
    for j in range(budget):
        V[:, j] = q
        w = Q.matvec(q)
        used += 1
        W[:, j] = w
        a = float(q @ w)
        alphas.append(a)
        v = w - a * q
        if j > 0:
            v -= betas[-1] * V[:, j - 1]
        for _ in range(2):
            v -= V[:, : j + 1] @ (V[:, : j + 1].T @ v)
        b = float(np.linalg.norm(v))
        T = np.diag(alphas)
        if j > 0:
            off = np.array(betas)
            T += np.diag(off, 1) + np.diag(off, -1)
        theta, S = np.linalg.eigh(T)
        s = S[:, 0]
        history.append(float(theta[0]))
        scale = max(1.0, float(np.max(np.abs(theta))))
        resid = b * abs(s[-1])
        if b <= 1e-12 * scale or resid <= 1e-10 * scale:
            converged = True
            break
        betas.append(b)
        q = v / b
    k = len(alphas)
    y = V[:, :k] @ s
    Qy = W[:, :k] @ s
    ny = float(np.linalg.norm(y))
    p = y / ny
    lam = float(p @ Qy) / ny
    if not converged:
        converged = bool(resid <= eps_h / 2)
    return EigenEstimate(lam, p, used, "lanczos", converged, history)


# -------------------------------------------------------- regularized Hessian


def regularized_hessian(Q, c, eigen=None, eps_h=None):
    """H = Q + ([-lam]_+ + c) I.

    ``lam`` is the exact smallest eigenvalue in dense mode, or the safeguarded
    lam_hat - eps_h/2 for a Lanczos estimate.  Without ``eigen`` a dense solve is done.
    """
    if c <= 0:
        raise ValueError("regularization c must be positive")
    Q = as_operator(Q)
    if eigen is None:
        eigen = min_eigen(Q, eps_h or 1.0, 0.05, mode="dense")
    lam = eigen.value
    if eigen.method == "lanczos":
        if eps_h is None:
            raise ValueError("Lanczos estimate needs eps_h for the safeguard")
        lam = lam - eps_h / 2
    H = ShiftedOperator(Q, max(-lam, 0.0) + c)
    H.c = float(c)
    H.lam_used = float(lam)
    return H
