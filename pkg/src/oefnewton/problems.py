"""Objective representations, KKT residual map and the built-in test problems.

All reductions over samples go through ``np.einsum`` (no BLAS) so that results
are bit-reproducible independent of the BLAS thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .prox import BoxIndicator, L1Norm, ProxFunction, ZeroFunction


def _rowdot(A, x):
    return np.einsum("ij,j->i", A, x)


def _coldot(A, w):
    return np.einsum("ij,i->j", A, w)


class SmoothObjective:
    """Twice differentiable f with certified constants.

    Subclasses implement ``value``, ``gradient`` and ``hessian``.  ``lipschitz_grad``
    and ``lipschitz_hess`` are upper bounds, not tight values.
    """

    n: int
    lipschitz_grad: float
    lipschitz_hess: float | None = None
    strong_convexity: float = 0.0
    lower_bound: float | None = None

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def hessian_vector(self, x, v):
        return self.hessian(x) @ v

    @property
    def is_finite_sum(self):
        return False


class Quadratic(SmoothObjective):
    """f(x) = 0.5 x'Ax - b'x."""

    def __init__(self, A, b, lipschitz_hess=1.0):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.n = self.b.size
        if not np.allclose(self.A, self.A.T, rtol=0, atol=0):
            raise ValueError("A must be symmetric")
        eig = np.linalg.eigvalsh(self.A)
        self.lipschitz_grad = float(np.max(np.abs(eig)))
        # the true Hessian Lipschitz constant is 0; any positive number is a valid bound
        self.lipschitz_hess = float(lipschitz_hess)
        self.strong_convexity = float(max(eig[0], 0.0))
        self.lower_bound = None
        if eig[0] > 0:
            xs = np.linalg.solve(self.A, self.b)
            self.lower_bound = float(-0.5 * self.b @ xs)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ _rowdot(self.A, x) - self.b @ x)

    def gradient(self, x):
        return _rowdot(self.A, np.asarray(x, dtype=float)) - self.b

    def hessian(self, x):
        return self.A.copy()

    def hessian_vector(self, x, v):
        return _rowdot(self.A, np.asarray(v, dtype=float))


class CosineSaddle(SmoothObjective):
    """f(x) = 0.5 x1^2 + cos(x2): strict saddle at the origin, minima at (0, +-pi)."""

    n = 2
    lipschitz_grad = 1.0
    lipschitz_hess = 1.0
    strong_convexity = 0.0
    lower_bound = -1.0

    def value(self, x):
        return float(0.5 * x[0] ** 2 + math.cos(x[1]))

    def gradient(self, x):
        return np.array([x[0], -math.sin(x[1])])

    def hessian(self, x):
        return np.array([[1.0, 0.0], [0.0, -math.cos(x[1])]])


# ---------------------------------------------------------------- scalar losses


class StudentTLoss:
    """psi(t, b) = log(1 + (t - b)^2)."""

    name = "student-t"
    d1_max = 1.0
    d2_max = 2.0
    d3_max = 1.5 + math.sqrt(2.0)  # |psi'''| peaks at |r| = sqrt(2) - 1
    inf_value = 0.0

    def value(self, t, b):
        return np.log1p((t - b) ** 2)

    def d1(self, t, b):
        r = t - b
        return 2 * r / (1 + r * r)

    def d2(self, t, b):
        r2 = (t - b) ** 2
        return 2 * (1 - r2) / (1 + r2) ** 2


class LogisticLoss:
    """psi(t, y) = log(1 + exp(-y t)), y in {-1, +1}."""

    name = "logistic"
    d1_max = 1.0
    d2_max = 0.25
    d3_max = 1 / (6 * math.sqrt(3.0))
    inf_value = 0.0

    def value(self, t, y):
        return np.logaddexp(0.0, -y * t)

    def d1(self, t, y):
        # -y * sigmoid(-y t)
        return -y * 0.5 * (1 - np.tanh(0.5 * y * t))

    def d2(self, t, y):
        s = np.tanh(0.5 * t)
        return 0.25 * (1 - s * s)


class SymmetricLogisticLoss:
    """psi(t) = log(2 cosh(t/2)): the logistic loss averaged over both labels.

    Written through tanh so the gradient keeps full relative accuracy near t = 0.
    """

    name = "symmetric-logistic"
    d1_max = 0.5
    d2_max = 0.25
    d3_max = 1 / (6 * math.sqrt(3.0))
    inf_value = math.log(2.0)

    def value(self, t, y):
        return np.logaddexp(0.5 * t, -0.5 * t)

    def d1(self, t, y):
        return 0.5 * np.tanh(0.5 * t)

    def d2(self, t, y):
        s = np.tanh(0.5 * t)
        return 0.25 * (1 - s * s)


class FiniteSumGLM(SmoothObjective):
    """f(x) = (1/m) sum_i [psi(a_i'x, b_i) + (ridge/2)||x||^2].

    Component bounds ``U_g``/``U_h`` hold on the level set of f at x0 = 0.
    """

    def __init__(self, A, b, loss, ridge=0.0):
        self.A = np.ascontiguousarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.loss = loss
        self.ridge = float(ridge)
        self.m, self.n = self.A.shape
        self._all = np.arange(self.m)

        norm_A2 = float(np.linalg.norm(self.A, 2)) ** 2
        row_norms = np.sqrt(np.einsum("ij,ij->i", self.A, self.A))
        max_row = float(row_norms.max())
        self.lipschitz_grad = loss.d2_max * norm_A2 / self.m + self.ridge
        self.lipschitz_hess = loss.d3_max * norm_A2 * max_row / self.m
        self.strong_convexity = self.ridge
        self.lower_bound = loss.inf_value
        if self.ridge > 0:
            f0 = self.value(np.zeros(self.n))
            radius = math.sqrt(2 * max(f0 - loss.inf_value, 0.0) / self.ridge)
        else:
            radius = 0.0
        self.level_radius = radius
        self.U_g = loss.d1_max * max_row + self.ridge * radius
        self.U_h = loss.d2_max * max_row**2 + self.ridge

    @property
    def is_finite_sum(self):
        return True

    def value(self, x):
        x = np.asarray(x, dtype=float)
        t = _rowdot(self.A, x)
        return float(np.mean(self.loss.value(t, self.b)) + 0.5 * self.ridge * (x @ x))

    def gradient_subset(self, x, idx):
        idx = np.asarray(idx)
        if idx.size == 0:
            raise ValueError("empty sample")
        Ai = self.A[idx]
        w = self.loss.d1(_rowdot(Ai, x), self.b[idx])
        return _coldot(Ai, w) / idx.size + self.ridge * x

    def hessian_subset(self, x, idx):
        idx = np.asarray(idx)
        if idx.size == 0:
            raise ValueError("empty sample")
        Ai = self.A[idx]
        w = self.loss.d2(_rowdot(Ai, x), self.b[idx])
        H = np.einsum("ij,i,ik->jk", Ai, w, Ai) / idx.size
        H[np.diag_indices(self.n)] += self.ridge
        return 0.5 * (H + H.T)

    def hvp_subset(self, x, v, idx):
        idx = np.asarray(idx)
        if idx.size == 0:
            raise ValueError("empty sample")
        Ai = self.A[idx]
        w = self.loss.d2(_rowdot(Ai, x), self.b[idx])
        return _coldot(Ai, w * _rowdot(Ai, v)) / idx.size + self.ridge * v

    def gradient(self, x):
        return self.gradient_subset(np.asarray(x, dtype=float), self._all)

    def hessian(self, x):
        return self.hessian_subset(np.asarray(x, dtype=float), self._all)

    def hessian_vector(self, x, v):
        return self.hvp_subset(np.asarray(x, dtype=float), np.asarray(v, dtype=float), self._all)

    def component_gradient(self, x, i):
        return self.gradient_subset(x, np.array([i]))


# ------------------------------------------------------------ composite problem


@dataclass
class CompositeProblem:
    """phi = f + h.  ``optimal_value`` is exact when known; ``lower_bound`` falls back
    to a certified lower bound of phi."""

    smooth: SmoothObjective
    nonsmooth: ProxFunction = field(default_factory=ZeroFunction)
    optimal_value: float | None = None
    minimizer: np.ndarray | None = None
    stationary_points: list = field(default_factory=list)
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.nonsmooth, BoxIndicator):
            if self.nonsmooth.lower.size not in (1, self.n):
                raise ValueError("box dimension does not match the smooth part")

    @property
    def n(self):
        return self.smooth.n

    @property
    def lower_bound(self):
        if self.optimal_value is not None:
            return self.optimal_value
        # every built-in h is nonnegative
        return self.smooth.lower_bound

    def value(self, x):
        return self.smooth.value(x) + self.nonsmooth.value(x)

    def x0(self):
        return np.zeros(self.n)


def kkt_residual(x, g, problem):
    """x - prox_h(x - g) with unit step.  With g = grad f(x) this is G(x)."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.shape != (problem.n,) or g.shape != (problem.n,):
        raise ValueError(f"dimension mismatch: x {x.shape}, g {g.shape}, n = {problem.n}")
    return x - problem.nonsmooth.prox(x - g, 1.0)


# -------------------------------------------------------------- audit wrappers


class ObjectiveAudit:
    """Proxy around a problem that counts every f or h evaluation.

    Solvers run their loop against the proxy; a nonzero count means the
    algorithm looked at objective values.
    """

    def __init__(self, problem):
        self._problem = problem
        self.evaluations = 0
        self.smooth = _CountingSmooth(problem.smooth, self)
        self.nonsmooth = _CountingProx(problem.nonsmooth, self)

    def __getattr__(self, name):
        return getattr(self._problem, name)

    def value(self, x):
        self.evaluations += 1
        return self._problem.value(x)


class _CountingSmooth:
    def __init__(self, inner, audit):
        self._inner = inner
        self._audit = audit

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def value(self, x):
        self._audit.evaluations += 1
        return self._inner.value(x)


class _CountingProx:
    def __init__(self, inner, audit):
        self._inner = inner
        self._audit = audit

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def value(self, x):
        self._audit.evaluations += 1
        return self._inner.value(x)


# ------------------------------------------------------------- built-in problems

BUILTIN_NAMES = ("l1-student-t", "ridge-logistic", "quadratic", "saddle-2d")

_DEFAULTS = {
    "l1-student-t": {"m": 200, "n": 50, "seed": 0, "lam": 0.05},
    "ridge-logistic": {"m": 500, "n": 20, "seed": 0, "ridge": 0.1, "scale": 1.0, "balanced": False},
    "quadratic": {"n": 10, "seed": 0, "kind": "spd", "cond": 10.0},
    "saddle-2d": {"variant": "cosine"},
}


def builtin_problem(name, **params):
    """Deterministic instance of a built-in problem from its parameters and seed."""
    if name not in _DEFAULTS:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    unknown = set(params) - set(_DEFAULTS[name]) - {"A", "b"}
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    p = {**_DEFAULTS[name], **params}
    desc = {"name": name, "params": {k: v for k, v in p.items() if k not in ("A", "b")}}

    if name == "l1-student-t":
        rng = np.random.default_rng(p["seed"])
        m, n = p["m"], p["n"]
        A = rng.standard_normal((m, n))
        x_true = 0.5 * rng.standard_normal(n) * (rng.random(n) < 0.5)
        b = A @ x_true + 0.1 * rng.standard_t(2.0, size=m)
        f = FiniteSumGLM(A, b, StudentTLoss())
        h = L1Norm(p["lam"]) if p["lam"] > 0 else ZeroFunction()
        return CompositeProblem(f, h, descriptor=desc)

    if name == "ridge-logistic":
        rng = np.random.default_rng(p["seed"])
        m, n = p["m"], p["n"]
        A = p["scale"] * rng.standard_normal((m, n))
        if p["balanced"]:
            f = FiniteSumGLM(A, np.zeros(m), SymmetricLogisticLoss(), ridge=p["ridge"])
            return CompositeProblem(
                f,
                optimal_value=f.value(np.zeros(n)),
                minimizer=np.zeros(n),
                stationary_points=[np.zeros(n)],
                descriptor=desc,
            )
        x_true = rng.standard_normal(n)
        y = np.where(A @ x_true + 0.5 * p["scale"] * math.sqrt(n) * rng.standard_normal(m) >= 0, 1.0, -1.0)
        f = FiniteSumGLM(A, y, LogisticLoss(), ridge=p["ridge"])
        return CompositeProblem(f, descriptor=desc)

    if name == "quadratic":
        if "A" in params:
            A = np.asarray(params["A"], dtype=float)
            b = np.asarray(params.get("b", np.zeros(A.shape[0])), dtype=float)
        else:
            rng = np.random.default_rng(p["seed"])
            n = p["n"]
            U, _ = np.linalg.qr(rng.standard_normal((n, n)))
            eig = np.logspace(0, math.log10(p["cond"]), n)
            if p["kind"] == "indefinite":
                eig[::2] *= -1
            elif p["kind"] != "spd":
                raise ValueError("quadratic kind must be 'spd' or 'indefinite'")
            A = (U * eig) @ U.T
            A = 0.5 * (A + A.T)
            b = rng.standard_normal(n)
        f = Quadratic(A, b)
        xs = np.linalg.solve(A, b)
        opt = f.lower_bound if f.strong_convexity > 0 else None
        return CompositeProblem(
            f,
            optimal_value=opt,
            minimizer=xs if opt is not None else None,
            stationary_points=[xs],
            descriptor=desc,
        )

    # saddle-2d
    if p["variant"] == "quadratic":
        f = Quadratic(np.diag([1.0, -1.0]), np.zeros(2))
        return CompositeProblem(f, stationary_points=[np.zeros(2)], descriptor=desc)
    if p["variant"] != "cosine":
        raise ValueError("saddle-2d variant must be 'cosine' or 'quadratic'")
    return CompositeProblem(
        CosineSaddle(),
        optimal_value=-1.0,
        minimizer=np.array([0.0, math.pi]),
        stationary_points=[np.zeros(2), np.array([0.0, math.pi]), np.array([0.0, -math.pi])],
        descriptor=desc,
    )


def problem_from_descriptor(desc):
    if isinstance(desc, str):
        desc = json.loads(desc)
    return builtin_problem(desc["name"], **desc.get("params", {}))


def descriptor_json(problem):
    return json.dumps(problem.descriptor, sort_keys=True)


def data_csv(problem):
    """CSV dump of the problem data: one row per sample, ``a_i1..a_in,b_i``."""
    f = problem.smooth
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(f, (FiniteSumGLM, Quadratic)):
        n = f.n
        w.writerow([f"a{j}" for j in range(n)] + ["b"])
        for row, bi in zip(f.A, f.b):
            w.writerow([repr(float(v)) for v in row] + [repr(float(bi))])
    else:
        w.writerow(["note"])
        w.writerow([f"{problem.descriptor.get('name', 'problem')} has no data"])
    return buf.getvalue()


def write_data_csv(problem, path):
    with open(path, "w", newline="") as fh:
        fh.write(data_csv(problem))
