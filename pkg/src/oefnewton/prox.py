"""Prox-friendly convex functions h with closed-form proximal maps."""

from __future__ import annotations

import numpy as np


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to proximal operator")


class ProxFunction:
    """Base class: h(x), prox_{t h}(u) and a subdifferential membership test."""

    name = "abstract"

    def value(self, x):
        raise NotImplementedError

    def prox(self, u, t=1.0):
        raise NotImplementedError

    def is_subgradient(self, x, v, tol=1e-10):
        raise NotImplementedError

    def is_zero(self):
        return False

    def descriptor(self):
        return {"name": self.name}


class ZeroFunction(ProxFunction):
    name = "zero"

    def value(self, x):
        return 0.0

    def prox(self, u, t=1.0):
        u = np.asarray(u, dtype=float)
        if t <= 0:
            raise ValueError("prox step t must be positive")
        _check_finite(u)
        return u.copy()

    def is_subgradient(self, x, v, tol=1e-10):
        return bool(np.linalg.norm(v) <= tol)

    def is_zero(self):
        return True


class L1Norm(ProxFunction):
    """h(x) = lam * ||x||_1; the prox is soft-thresholding at lam * t."""

    name = "l1"

    def __init__(self, lam=1.0):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)

    def value(self, x):
        return self.lam * float(np.abs(x).sum())

    def prox(self, u, t=1.0):
        u = np.asarray(u, dtype=float)
        if t <= 0:
            raise ValueError("prox step t must be positive")
        _check_finite(u)
        thr = self.lam * t
        return np.sign(u) * np.maximum(np.abs(u) - thr, 0.0)

    def is_subgradient(self, x, v, tol=1e-10):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        nz = x != 0
        ok_nz = np.all(np.abs(v[nz] - self.lam * np.sign(x[nz])) <= tol)
        ok_z = np.all(np.abs(v[~nz]) <= self.lam + tol)
        return bool(ok_nz and ok_z)

    def is_zero(self):
        return self.lam == 0.0

    def descriptor(self):
        return {"name": self.name, "lam": self.lam}


class BoxIndicator(ProxFunction):
    """Indicator of the box [lower, upper]; the prox is a projection."""

    name = "box"

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("empty box")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.all(x >= self.lower) and np.all(x <= self.upper)
        return 0.0 if inside else np.inf

    def prox(self, u, t=1.0):
        u = np.asarray(u, dtype=float)
        if t <= 0:
            raise ValueError("prox step t must be positive")
        _check_finite(u)
        return np.clip(u, self.lower, self.upper)

    def is_subgradient(self, x, v, tol=1e-10):
        # normal cone of the box: v_i <= 0 at the lower face, >= 0 at the upper, 0 inside
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not np.isfinite(self.value(x)):
            return False
        at_lo = np.isclose(x, self.lower, rtol=0, atol=tol)
        at_hi = np.isclose(x, self.upper, rtol=0, atol=tol)
        ok = np.ones_like(v, dtype=bool)
        inner = ~(at_lo | at_hi)
        ok[inner] = np.abs(v[inner]) <= tol
        lo_only = at_lo & ~at_hi
        hi_only = at_hi & ~at_lo
        ok[lo_only] = v[lo_only] <= tol
        ok[hi_only] = v[hi_only] >= -tol
        return bool(np.all(ok))

    def descriptor(self):
        return {"name": self.name, "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def prox(u, t, h):
    """Functional form of ``h.prox``."""
    return h.prox(u, t)
