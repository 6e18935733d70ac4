"""Gossip matrices: weighted graph Laplacians whose kernel is the consensus
line, plus the weighted-path construction that hits a prescribed condition
number.

Conventions: a gossip matrix W enters the algorithms as a quadratic form, so
its "gram" bounds are eigenvalue bounds (lambda_max, lambda_min+) and
kappa_W = lambda_max / lambda_min+.  When W appears as a constraint *matrix*,
its squared singular values are the squared eigenvalues; ``operator_bounds``
returns that convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import SpectralBounds, RANK_TOL


@dataclass(frozen=True)
class GossipMatrix:
    n: int
    W: np.ndarray
    edges: tuple

    @property
    def matrix(self) -> np.ndarray:
        return self.W

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.W)

    @property
    def lambda_bounds(self) -> SpectralBounds:
        """(lambda_max, lambda_min+) of W; kappa of this is kappa_W."""
        eig = self.eigenvalues()
        top = eig[-1]
        if top <= 0.0:
            return SpectralBounds(0.0, 0.0)
        pos = eig[eig > RANK_TOL * top]
        return SpectralBounds(float(top), float(pos[0]))

    @property
    def operator_bounds(self) -> SpectralBounds:
        """Squared-singular-value bounds of W viewed as a constraint matrix."""
        lb = self.lambda_bounds
        return SpectralBounds(lb.sigma_max_sq ** 2, lb.sigma_min_plus_sq ** 2)

    @property
    def kappa(self) -> float:
        return self.lambda_bounds.kappa

    def assumption_report(self, tol: float = 1e-10) -> dict:
        """Numeric check of the three gossip-matrix clauses.

        Symmetric PSD; sparsity pattern matches the edge list; nullspace is
        exactly the constant vector (dimension 1, basis parallel to ones).
        """
        W = self.W
        sym = float(np.abs(W - W.T).max())
        eig, vecs = np.linalg.eigh(W)
        psd = bool(eig[0] >= -tol * max(eig[-1], 1.0))
        edge_set = {frozenset(e) for e in self.edges}
        pattern_ok = True
        for i in range(self.n):
            for j in range(i + 1, self.n):
                present = abs(W[i, j]) > tol
                if present != (frozenset((i, j)) in edge_set):
                    pattern_ok = False
        null_dim = int(np.sum(eig < tol * max(eig[-1], 1.0)))
        ones = np.ones(self.n) / np.sqrt(self.n)
        basis_ok = null_dim == 1 and abs(abs(vecs[:, 0] @ ones) - 1.0) < 1e-8
        return {
            "symmetric": sym < tol,
            "psd": psd,
            "pattern": pattern_ok,
            "nullspace_dim": null_dim,
            "nullspace_is_consensus": basis_ok,
            "connected": null_dim == 1,
        }

    def is_valid(self) -> bool:
        rep = self.assumption_report()
        return all([rep["symmetric"], rep["psd"], rep["pattern"],
                    rep["nullspace_is_consensus"]])


def laplacian(edges, weights=None, n: int | None = None) -> GossipMatrix:
    """Weighted Laplacian L = D - A over the given edge list (weights > 0)."""
    edges = [tuple(e) for e in edges]
    if n is None:
        n = max((max(e) for e in edges), default=-1) + 1
    if n < 1:
        raise ValueError("need at least one node")
    if weights is None:
        weights = [1.0] * len(edges)
    if len(weights) != len(edges):
        raise ValueError("one weight per edge required")
    W = np.zeros((n, n))
    for (i, j), w in zip(edges, weights):
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ValueError(f"edge ({i},{j}) out of range for n={n}")
        if not w > 0:
            raise ValueError(f"edge weight must be positive, got {w}")
        W[i, i] += w
        W[j, j] += w
        W[i, j] -= w
        W[j, i] -= w
    return GossipMatrix(n=n, W=W, edges=tuple(edges))


def path_beta(n: int) -> float:
    """Condition number of the unit-weight path Laplacian on n nodes."""
    c = np.cos(np.pi / n)
    return (1.0 + c) / (1.0 - c)


def _weighted_path(n: int, a: float) -> GossipMatrix:
    weights = [1.0 - a if i == 0 else 1.0 for i in range(n - 1)]
    return laplacian([(i, i + 1) for i in range(n - 1)], weights, n)


def path_for_kappa(kappa_target: float, rel_tol: float = 1e-6,
                   max_iter: int = 200) -> GossipMatrix:
    """Weighted path whose Laplacian condition number equals kappa_target.

    Picks n = 3m with beta_n <= kappa_target < beta_{n+3}, then bisects the
    first-edge weight 1 - a on a in [0, 1): kappa grows monotonically from
    beta_n toward infinity as the graph approaches disconnection.
    """
    if kappa_target < path_beta(3):
        raise ValueError(
            f"kappa_target below the floor beta_3 = {path_beta(3):g} of the construction"
        )
    n = 3
    while path_beta(n + 3) <= kappa_target:
        n += 3
    if abs(path_beta(n) - kappa_target) <= rel_tol * kappa_target:
        return _weighted_path(n, 0.0)
    lo, hi = 0.0, 1.0 - 1e-12
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        kappa_mid = _weighted_path(n, mid).kappa
        if abs(kappa_mid - kappa_target) <= rel_tol * kappa_target:
            return _weighted_path(n, mid)
        if kappa_mid < kappa_target:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection did not converge for kappa={kappa_target}")


def standard_topologies(kind: str, n: int) -> GossipMatrix:
    """Unit-weight Laplacian of a named topology (path/cycle/star/complete)."""
    if n < 2:
        raise ValueError("need n >= 2 nodes")
    if kind == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif kind == "cycle":
        edges = [(i, (i + 1) % n) for i in range(n)]
    elif kind == "star":
        edges = [(0, i) for i in range(1, n)]
    elif kind == "complete":
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        raise ValueError(f"unknown topology {kind!r}")
    return laplacian(edges, None, n)
