"""Objective oracles: value/gradient/subgradient access with declared
constants (strong convexity mu, smoothness L, subgradient bound M) and an
optional box domain.

Oracles are immutable; composition wrappers (sum, gather, regularization,
penalty) build the lifted objectives of the reformulated problems.  Oracles
that embed linear operators expose ``map_operators`` so a solve session can
re-wire them through instrumented copies without mutating the originals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import LinearOperator, CounterSet


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {u : lo <= u <= hi}."""

    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs lo <= hi of equal shapes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.lo, self.hi)

    def contains(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


class ObjectiveOracle:
    """Base oracle: subclasses fill dim and the declared constants.

    ``mu`` is the strong-convexity modulus (0 for merely convex), ``L`` the
    smoothness constant or None in nonsmooth mode, ``M`` the subgradient bound
    or None in smooth mode.
    """

    dim: int
    mu: float = 0.0
    L: float | None = None
    M: float | None = None
    domain: Box | None = None

    def value(self, u: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no smooth gradient")

    def subgradient(self, u: np.ndarray) -> np.ndarray:
        return self.gradient(u)

    def map_operators(self, fn) -> "ObjectiveOracle":
        return self

    def _check_dim(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected length-{self.dim} vector, got {u.shape}")
        return u


class QuadraticOracle(ObjectiveOracle):
    """(1/2) u^T Q u + q^T u + (mu_shift/2)|u|^2 with exact spectral constants."""

    def __init__(self, Q: np.ndarray, q: np.ndarray, mu_shift: float = 0.0,
                 domain: Box | None = None):
        Q = np.asarray(Q, dtype=float)
        q = np.asarray(q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or q.shape != (Q.shape[0],):
            raise ValueError("Q must be square and q of matching length")
        scale = max(np.abs(Q).max(), 1.0)
        if np.abs(Q - Q.T).max() > 1e-12 * scale:
            raise ValueError("Q must be symmetric")
        eig = np.linalg.eigvalsh(Q)
        if eig.size and eig[0] < -1e-10 * max(eig[-1], 1.0):
            raise ValueError(f"Q must be positive semidefinite (lambda_min={eig[0]:.3e})")
        self.Q = Q
        self.q = q
        self.mu_shift = float(mu_shift)
        self.dim = Q.shape[0]
        self.mu = float(max(eig[0], 0.0) + mu_shift)
        self.L = float(max(eig[-1], 0.0) + mu_shift)
        self.domain = domain
        self.degenerate = self.L == 0.0

    def value(self, u):
        u = self._check_dim(u)
        return float(0.5 * u @ (self.Q @ u) + self.q @ u + 0.5 * self.mu_shift * u @ u)

    def gradient(self, u):
        u = self._check_dim(u)
        return self.Q @ u + self.q + self.mu_shift * u

    def hessian(self) -> np.ndarray:
        return self.Q + self.mu_shift * np.eye(self.dim)


class L1Oracle(ObjectiveOracle):
    """weight * |u|_1; subgradients are sign vectors, bounded by weight*sqrt(dim)."""

    def __init__(self, dim: int, weight: float = 1.0, domain: Box | None = None):
        self.dim = int(dim)
        self.weight = float(weight)
        self.mu = 0.0
        self.L = None
        self.M = self.weight * float(np.sqrt(self.dim))
        self.domain = domain

    def value(self, u):
        u = self._check_dim(u)
        return self.weight * float(np.abs(u).sum())

    def subgradient(self, u):
        u = self._check_dim(u)
        return self.weight * np.sign(u)


class SumOracle(ObjectiveOracle):
    """Pointwise sum of oracles over the same variable."""

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("empty sum")
        dim = parts[0].dim
        if any(p.dim != dim for p in parts):
            raise ValueError("summands must share the variable dimension")
        self.parts = tuple(parts)
        self.dim = dim
        self.mu = float(sum(p.mu for p in parts))
        self.L = (float(sum(p.L for p in parts))
                  if all(p.L is not None for p in parts) else None)
        self.M = (float(sum(p.M for p in parts))
                  if all(p.M is not None for p in parts) else None)
        domains = [p.domain for p in parts if p.domain is not None]
        self.domain = domains[0] if domains else None

    def value(self, u):
        return sum(p.value(u) for p in self.parts)

    def gradient(self, u):
        out = self.parts[0].gradient(u)
        for p in self.parts[1:]:
            out = out + p.gradient(u)
        return out

    def subgradient(self, u):
        out = self.parts[0].subgradient(u)
        for p in self.parts[1:]:
            out = out + p.subgradient(u)
        return out

    def map_operators(self, fn):
        return SumOracle([p.map_operators(fn) for p in self.parts])


class SeparableOracle(ObjectiveOracle):
    """sum_i f_i(u_i) over consecutive blocks of the stacked variable."""

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("empty separable oracle")
        self.parts = tuple(parts)
        self.dim = sum(p.dim for p in parts)
        self._offsets = np.cumsum([0] + [p.dim for p in parts])
        self.mu = float(min(p.mu for p in parts))
        self.L = (float(max(p.L for p in parts))
                  if all(p.L is not None for p in parts) else None)
        self.M = (float(np.sqrt(sum(p.M ** 2 for p in parts)))
                  if all(p.M is not None for p in parts) else None)
        self.domain = None

    def _blocks(self, u):
        for p, o in zip(self.parts, self._offsets):
            yield p, u[o:o + p.dim], o

    def value(self, u):
        u = self._check_dim(u)
        return sum(p.value(blk) for p, blk, _ in self._blocks(u))

    def gradient(self, u):
        u = self._check_dim(u)
        out = np.empty(self.dim)
        for p, blk, o in self._blocks(u):
            out[o:o + p.dim] = p.gradient(blk)
        return out

    def subgradient(self, u):
        u = self._check_dim(u)
        out = np.empty(self.dim)
        for p, blk, o in self._blocks(u):
            out[o:o + p.dim] = p.subgradient(blk)
        return out

    def map_operators(self, fn):
        return SeparableOracle([p.map_operators(fn) for p in self.parts])


class GatherOracle(ObjectiveOracle):
    """Inner oracle evaluated on a gathered index subset of a larger variable.

    Used to place per-node objectives f_i(x_i, xtilde_i) inside the stacked
    variable z = (x, y, xtilde).  Coordinates outside the index set contribute
    nothing, so strong convexity is not claimed (mu = 0); the reformulation
    lemmas supply the aggregate constants instead.
    """

    def __init__(self, inner: ObjectiveOracle, indices, dim: int):
        indices = np.asarray(indices, dtype=int)
        if indices.shape != (inner.dim,):
            raise ValueError("need one target index per inner coordinate")
        self.inner = inner
        self.indices = indices
        self.dim = int(dim)
        self.mu = 0.0
        self.L = inner.L
        self.M = inner.M
        self.domain = None

    def value(self, u):
        u = self._check_dim(u)
        return self.inner.value(u[self.indices])

    def gradient(self, u):
        u = self._check_dim(u)
        out = np.zeros(self.dim)
        out[self.indices] = self.inner.gradient(u[self.indices])
        return out

    def subgradient(self, u):
        u = self._check_dim(u)
        out = np.zeros(self.dim)
        out[self.indices] = self.inner.subgradient(u[self.indices])
        return out

    def map_operators(self, fn):
        return GatherOracle(self.inner.map_operators(fn), self.indices, self.dim)


class QuadraticPenaltyOracle(ObjectiveOracle):
    """(r/2) |B u - b|^2 as a standalone smooth oracle."""

    def __init__(self, op: LinearOperator, rhs: np.ndarray, r: float,
                 sigma_max_sq: float | None = None):
        self.op = op
        self.rhs = np.asarray(rhs, dtype=float)
        self.r = float(r)
        self.dim = op.cols
        self.mu = 0.0
        self.L = r * sigma_max_sq if sigma_max_sq is not None else None
        self.M = None
        self.domain = None
        self._sigma_max_sq = sigma_max_sq

    def residual(self, u):
        return self.op.apply(u) - self.rhs

    def value(self, u):
        u = self._check_dim(u)
        res = self.residual(u)
        return float(0.5 * self.r * res @ res)

    def gradient(self, u):
        u = self._check_dim(u)
        return self.r * self.op.adjoint_apply(self.residual(u))

    def map_operators(self, fn):
        return QuadraticPenaltyOracle(fn(self.op), self.rhs, self.r, self._sigma_max_sq)


class RegularizedOracle(ObjectiveOracle):
    """G(u) + (nu/2)|u0 - u|^2: strong convexity and smoothness shift by nu."""

    def __init__(self, inner: ObjectiveOracle, u0: np.ndarray, nu: float):
        if not nu > 0:
            raise ValueError("nu must be strictly positive")
        self.inner = inner
        self.u0 = np.asarray(u0, dtype=float)
        if self.u0.shape != (inner.dim,):
            raise ValueError("u0 dimension mismatch")
        self.nu = float(nu)
        self.dim = inner.dim
        self.mu = inner.mu + nu
        self.L = inner.L + nu if inner.L is not None else None
        self.M = None
        self.domain = inner.domain

    def value(self, u):
        u = self._check_dim(u)
        diff = self.u0 - u
        return self.inner.value(u) + 0.5 * self.nu * float(diff @ diff)

    def gradient(self, u):
        u = self._check_dim(u)
        return self.inner.gradient(u) + self.nu * (u - self.u0)

    def subgradient(self, u):
        u = self._check_dim(u)
        return self.inner.subgradient(u) + self.nu * (u - self.u0)

    def map_operators(self, fn):
        return RegularizedOracle(self.inner.map_operators(fn), self.u0, self.nu)


class ConstantsOverride(ObjectiveOracle):
    """Same oracle, different declared constants (reformulation lemmas supply
    sharper aggregate values than the naive composition rules)."""

    def __init__(self, inner: ObjectiveOracle, mu=None, L=None, M=None, domain=None):
        self.inner = inner
        self.dim = inner.dim
        self.mu = inner.mu if mu is None else float(mu)
        self.L = inner.L if L is None else float(L)
        self.M = inner.M if M is None else float(M)
        self.domain = inner.domain if domain is None else domain

    def value(self, u):
        return self.inner.value(u)

    def gradient(self, u):
        return self.inner.gradient(u)

    def subgradient(self, u):
        return self.inner.subgradient(u)

    def map_operators(self, fn):
        return ConstantsOverride(self.inner.map_operators(fn),
                                 self.mu, self.L, self.M, self.domain)


class CountingOracle(ObjectiveOracle):
    """Bumps grad_calls on every gradient/subgradient evaluation."""

    def __init__(self, inner: ObjectiveOracle, counters: CounterSet):
        self.inner = inner
        self.counters = counters
        self.dim = inner.dim
        self.mu, self.L, self.M, self.domain = inner.mu, inner.L, inner.M, inner.domain

    def value(self, u):
        return self.inner.value(u)

    def gradient(self, u):
        self.counters.record_grad()
        return self.inner.gradient(u)

    def subgradient(self, u):
        self.counters.record_grad()
        return self.inner.subgradient(u)

    def map_operators(self, fn):
        return CountingOracle(self.inner.map_operators(fn), self.counters)


def quadratic_oracle(Q, q, mu_shift: float = 0.0) -> QuadraticOracle:
    """Oracle for (1/2)x^T Q x + q^T x + (mu_shift/2)|x|^2, Q symmetric PSD."""
    return QuadraticOracle(Q, q, mu_shift)


def regularize(oracle: ObjectiveOracle, u0, nu: float) -> RegularizedOracle:
    """Shifted oracle G + (nu/2)|u0 - u|^2 with mu' = mu + nu, L' = L + nu."""
    return RegularizedOracle(oracle, u0, nu)


def penalize(oracle: ObjectiveOracle, B: LinearOperator, b, r: float,
             sigma_max_sq: float | None = None) -> ObjectiveOracle:
    """H_r = G + (r/2)|Bu - b|^2 with subgradient G'(u) + r B^T(Bu - b)."""
    if not r > 0:
        raise ValueError("penalty coefficient r must be positive")
    penalty = QuadraticPenaltyOracle(B, b, r, sigma_max_sq)
    out = SumOracle([oracle, penalty])
    out.domain = oracle.domain
    return out


def check_gradient(oracle: ObjectiveOracle, rng: np.random.Generator,
                   points: int = 20, h: float = 1e-6, scale: float = 1.0) -> float:
    """Max relative error of the gradient against central finite differences."""
    worst = 0.0
    for _ in range(points):
        u = scale * rng.standard_normal(oracle.dim)
        if oracle.domain is not None:
            u = oracle.domain.project(u)
        g = oracle.gradient(u)
        fd = np.empty_like(g)
        for j in range(oracle.dim):
            e = np.zeros(oracle.dim)
            e[j] = h
            fd[j] = (oracle.value(u + e) - oracle.value(u - e)) / (2 * h)
        denom = max(np.linalg.norm(g), 1.0)
        worst = max(worst, float(np.linalg.norm(fd - g) / denom))
    return worst
