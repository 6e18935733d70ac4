"""Condition-number calculus for families of per-node constraint matrices,
block-scaling coefficients, and Chebyshev preconditioning.

The central objects are the interaction matrix S_B = (1/n) sum_i B_i B_i^T,
the mixed condition number kappa_hat built from it, and the projected variant
kappa_tilde that restricts the stacked matrix to the kernel of a second
family.  The scaling routines pick the scalar weights that balance a block
constraint matrix; Chebyshev preconditioning then compresses its condition
number to O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .operators import (
    LinearOperator,
    SpectralBounds,
    RANK_TOL,
)


class DegenerateFamilyError(ValueError):
    """All blocks of a matrix family are zero."""


@dataclass(frozen=True)
class MatrixFamily:
    """Per-node constraint blocks (B_1, ..., B_n) as dense matrices."""

    blocks: tuple

    def __init__(self, blocks):
        mats = tuple(np.asarray(b, dtype=float) for b in blocks)
        if not mats:
            raise ValueError("family needs at least one block")
        object.__setattr__(self, "blocks", mats)

    @property
    def n(self) -> int:
        return len(self.blocks)

    def transposed(self) -> "MatrixFamily":
        return MatrixFamily([b.T for b in self.blocks])


@dataclass(frozen=True)
class ScalingCoefficients:
    alpha_sq: float
    beta_sq: float
    gamma_sq: float | None
    regime: str

    def __post_init__(self):
        for name in ("alpha_sq", "beta_sq", "gamma_sq"):
            v = getattr(self, name)
            if v is not None and not v > 0.0:
                raise ValueError(f"{name} must be strictly positive, got {v}")


def lambda_max(S: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(S)[-1]) if S.size else 0.0


def lambda_min_plus(S: np.ndarray, rank_tol: float = RANK_TOL) -> float:
    """Smallest positive eigenvalue of a symmetric PSD matrix (0 if none)."""
    eig = np.linalg.eigvalsh(S)
    top = eig[-1] if eig.size else 0.0
    if top <= 0.0:
        return 0.0
    positive = eig[eig > rank_tol * top]
    return float(positive[0])


def interaction_matrix(family: MatrixFamily) -> np.ndarray:
    """S_B = (1/n) sum_i B_i B_i^T for blocks sharing their row dimension."""
    rows = family.blocks[0].shape[0]
    if any(b.shape[0] != rows for b in family.blocks):
        raise ValueError("interaction matrix needs blocks with a common row dimension")
    S = np.zeros((rows, rows))
    for b in family.blocks:
        S += b @ b.T
    return S / family.n


def _max_block_gram_eig(family: MatrixFamily) -> float:
    return max(lambda_max(b @ b.T) for b in family.blocks)


def mixed_condition_number(family: MatrixFamily, transposed: bool = False) -> float:
    """kappa_hat: max_i lambda_max(B_i B_i^T) over lambda_min+(S_B).

    With ``transposed``, the blocks enter as B_i^T (same numerator, different
    interaction matrix).
    """
    fam = family.transposed() if transposed else family
    num = _max_block_gram_eig(fam)
    if num <= 0.0:
        raise DegenerateFamilyError("all blocks are zero")
    den = lambda_min_plus(interaction_matrix(fam))
    if den <= 0.0:
        raise DegenerateFamilyError("interaction matrix has no positive eigenvalue")
    return num / den


def projected_condition_number(B_family: MatrixFamily, D_family: MatrixFamily,
                               rank_tol: float = RANK_TOL) -> tuple:
    """(mu_tilde, kappa_tilde) of a family restricted to ker of a second one.

    mu_tilde = (1/n) sigma_min+^2(B' P_ker(D)) with B' the horizontally
    stacked blocks and P the block-diagonal kernel projector of the D_i.
    kappa_tilde falls back to 1 exactly when mu_tilde vanishes (within the
    relative gate rank_tol * max_i lambda_max(B_i B_i^T)).
    """
    if B_family.n != D_family.n:
        raise ValueError("families must have the same number of blocks")
    for Bi, Di in zip(B_family.blocks, D_family.blocks):
        if Bi.shape[1] != Di.shape[1]:
            raise ValueError("per-node column dimensions of B_i and D_i must match")
    num = _max_block_gram_eig(B_family)
    if num <= 0.0:
        raise DegenerateFamilyError("all B blocks are zero")

    if all(not Di.any() for Di in D_family.blocks):
        # ker D is everything; kappa_tilde coincides with kappa_hat bit-for-bit
        S = interaction_matrix(B_family)
        mu = lambda_min_plus(S)
        return mu, num / mu

    projected = []
    for Bi, Di in zip(B_family.blocks, D_family.blocks):
        _, svals, vt = np.linalg.svd(Di)
        dmax = svals[0] if svals.size else 0.0
        rank = int(np.sum(svals > rank_tol * dmax)) if dmax > 0 else 0
        null = vt[rank:]
        projected.append(Bi @ (null.T @ null))
    stacked = np.hstack(projected)
    svals = np.linalg.svd(stacked, compute_uv=False)
    smax = svals[0] if svals.size else 0.0
    positive = svals[svals > rank_tol * smax] if smax > 0 else np.array([])
    mu = float(positive[-1] ** 2) / B_family.n if positive.size else 0.0
    if mu <= rank_tol * num:
        return 0.0, 1.0
    return mu, num / mu


def coupled_scaling(A: SpectralBounds, S_A_min: float, W: SpectralBounds) -> float:
    """beta^2 = (lambda_min+(S_A) + sigma_max^2(A)) / sigma_min+^2(W)."""
    if W.sigma_min_plus_sq <= 0.0:
        raise ValueError("gossip matrix bound mu_W must be positive")
    return (S_A_min + A.sigma_max_sq) / W.sigma_min_plus_sq


def mixed_scaling(A: SpectralBounds, mu_tilde_AC: float, L_S: float,
                  C: SpectralBounds, W: SpectralBounds) -> ScalingCoefficients:
    """Block scales for B = ((A, alpha*W), (beta*C, 0)), split on mu_tilde_AC."""
    if W.sigma_min_plus_sq <= 0.0 or C.sigma_min_plus_sq <= 0.0:
        raise ValueError("mu_W and mu_C must be positive")
    L_A = A.sigma_max_sq
    if mu_tilde_AC > 0.0:
        alpha_sq = (L_A + 0.25 * mu_tilde_AC) / W.sigma_min_plus_sq
        beta_sq = (L_S + 0.5 * mu_tilde_AC) / C.sigma_min_plus_sq
        regime = "coupled_local_mu_pos"
    else:
        alpha_sq = 2.0 * L_A / W.sigma_min_plus_sq
        beta_sq = (L_S + 2.0 * L_A) / C.sigma_min_plus_sq
        regime = "coupled_local_mu_zero"
    return ScalingCoefficients(alpha_sq, beta_sq, None, regime)


def shared_scaling(C_tilde_family: MatrixFamily, W: SpectralBounds) -> float:
    """gamma^2 for the stack (C_tilde^T, gamma*W): the coupled scaling of the
    transposed family."""
    if W.sigma_min_plus_sq <= 0.0:
        raise ValueError("gossip matrix bound mu_W must be positive")
    S = interaction_matrix(C_tilde_family.transposed())
    smin = lambda_min_plus(S)
    smax = _max_block_gram_eig(C_tilde_family)
    return (smin + smax) / W.sigma_min_plus_sq


def identical_local_scaling(A_family: MatrixFamily, C_tilde: SpectralBounds,
                            W: SpectralBounds) -> ScalingCoefficients:
    """Scales for diag(alpha*(A, beta*W), (I (x) C_tilde; gamma*W)) with equal
    shared-variable blocks; certifies sigma_min+^2(B) >= sigma_min+^2(C_tilde)."""
    if W.sigma_min_plus_sq <= 0.0:
        raise ValueError("mu_W must be positive")
    S_A_min = lambda_min_plus(interaction_matrix(A_family))
    if S_A_min <= 0.0 or C_tilde.sigma_min_plus_sq <= 0.0:
        raise ValueError("S_A and C_tilde must have positive lower spectral bounds")
    alpha_sq = 2.0 * C_tilde.sigma_min_plus_sq / S_A_min
    beta_sq = (S_A_min + _max_block_gram_eig(A_family)) / W.sigma_min_plus_sq
    gamma_sq = C_tilde.sigma_min_plus_sq / W.sigma_min_plus_sq
    return ScalingCoefficients(alpha_sq, beta_sq, gamma_sq, "identical_local")


# --- Chebyshev preconditioning -------------------------------------------

def chebyshev_degree(bounds: SpectralBounds) -> int:
    """ceil(sqrt(kappa)) with a guard against float roundoff pushing over."""
    if bounds.sigma_min_plus_sq <= 0.0:
        raise ValueError("Chebyshev preconditioning needs a positive lower bound")
    s = math.sqrt(bounds.sigma_max_sq / bounds.sigma_min_plus_sq)
    return max(1, math.ceil(s - 1e-9))


def chebyshev_apply(v: np.ndarray, B: LinearOperator, b: np.ndarray,
                    bounds: SpectralBounds, gram: bool = False) -> np.ndarray:
    """One Chebyshev sweep toward the solution of B u = b, started at v.

    Runs ceil(sqrt(kappa_B)) iterations of the recurrence on the normal
    residual B^T(Bv - b).  With ``gram=True`` the operator passed is already
    the symmetric PSD normal matrix (e.g. a gossip matrix) and the residual is
    Bv - b directly; ``bounds`` then describe its eigenvalues.
    """
    v = np.asarray(v, dtype=float)
    b = np.asarray(b, dtype=float)

    def residual_grad(u):
        if gram:
            return B.apply(u) - b
        return B.adjoint_apply(B.apply(u) - b)

    k = chebyshev_degree(bounds)
    smax, smin = bounds.sigma_max_sq, bounds.sigma_min_plus_sq
    rho = (smax - smin) ** 2 / 16.0
    nu = (smax + smin) / 2.0
    delta = -nu / 2.0
    p = -residual_grad(v) / nu
    v = v + p
    for _ in range(1, k):
        beta = rho / delta
        delta = -(nu + beta)
        p = (residual_grad(v) + beta * p) / delta
        v = v + p
    return v


class ChebyshevOperator(LinearOperator):
    """K = P_B(B^T B) realized through the Chebyshev recurrence.

    K u = u - Chebyshev(u, B, 0); the scaled-and-shifted polynomial vanishes
    exactly on the null singular values and maps the certified spectrum range
    into [11/15, 19/15], so kappa_K <= (19/11)^2.  Symmetric, hence
    self-adjoint.  One apply costs ``degree`` forward and ``degree`` adjoint
    applies of the wrapped operator (``degree`` applies in gram mode).
    """

    def __init__(self, inner: LinearOperator, bounds: SpectralBounds, gram: bool = False):
        self.inner = inner
        self.bounds = bounds
        self.gram = gram
        self.degree = chebyshev_degree(bounds)
        self.rows = self.cols = inner.cols
        self.tag = "other"
        self._zero = np.zeros(inner.rows if not gram else inner.cols)

    def _apply(self, x):
        return x - chebyshev_apply(x, self.inner, self._zero, self.bounds, gram=self.gram)

    _adjoint_apply = _apply

    def children(self):
        return (self.inner,)

    def with_children(self, children):
        (inner,) = children
        return ChebyshevOperator(inner, self.bounds, self.gram)


def chebyshev_operator(B: LinearOperator, b: np.ndarray, bounds: SpectralBounds,
                       gram: bool = False) -> tuple:
    """Preconditioned pair (K, b') with {u : K u = b'} = {u : B u = b}.

    b' is the Chebyshev sweep started from zero, so the identity
    K u - b' = u - Chebyshev(u, B, b) makes the preconditioned system
    consistent by construction.
    """
    K = ChebyshevOperator(B, bounds, gram=gram)
    b_prime = chebyshev_apply(np.zeros(K.cols), B, b, bounds, gram=gram)
    return K, b_prime


def chebyshev_polynomial_values(lams, bounds: SpectralBounds) -> np.ndarray:
    """P(lambda) for squared singular values lambda, via the scalar recurrence.

    The spectrum of the preconditioned operator P(B^T B) is exactly the image
    of the spectrum of B^T B under this map, which makes certified bounds for
    wrapped gossip matrices exact without materializing the lifting.
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    k = chebyshev_degree(bounds)
    smax, smin = bounds.sigma_max_sq, bounds.sigma_min_plus_sq
    rho = (smax - smin) ** 2 / 16.0
    nu = (smax + smin) / 2.0
    delta = -nu / 2.0
    v = np.ones_like(lams)
    p = -lams * v / nu
    v = v + p
    for _ in range(1, k):
        beta = rho / delta
        delta = -(nu + beta)
        p = (lams * v + beta * p) / delta
        v = v + p
    return 1.0 - v


def chebyshev_spectrum(eigenvalues, bounds: SpectralBounds,
                       rank_tol: float = RANK_TOL) -> SpectralBounds:
    """Exact spectral bounds of P(S) given the eigenvalues of the PSD map S."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    top = float(eigenvalues.max())
    positive = eigenvalues[eigenvalues > rank_tol * top]
    vals = chebyshev_polynomial_values(positive, bounds)
    return SpectralBounds(float(np.max(vals) ** 2), float(np.min(vals) ** 2))


def chebyshev_interval(bounds: SpectralBounds) -> SpectralBounds:
    """Certified band of the preconditioning polynomial over the whole input
    interval: 1 +/- 1/T_k(c) with c = (smax + smin)/(smax - smin).

    This is the uniform bound the complexity statements transport (and all a
    node could certify without the exact spectrum); the realized spectrum of
    a particular operator, available via :func:`chebyshev_spectrum`, can only
    be tighter.
    """
    k = chebyshev_degree(bounds)
    smax, smin = bounds.sigma_max_sq, bounds.sigma_min_plus_sq
    if smax == smin:
        return SpectralBounds(1.0, 1.0)
    c = (smax + smin) / (smax - smin)
    dev = 1.0 / math.cosh(k * math.acosh(c))
    return SpectralBounds((1.0 + dev) ** 2, (1.0 - dev) ** 2)
