"""Finite truncations of the hard instances behind the lower bounds: path
networks bracketing a target condition number, interleaved splittings of the
bidiagonal root of the classic tridiagonal worst-case quadratic, and the
closed-form geometric dual solution they induce.

The truncation replaces the sequence-space instances by T-dimensional ones;
the planted weights are corrected for the truncation boundary so the measured
constraint-family condition numbers equal their targets exactly, and the
geometric decay rate of the solution is reported for the effective condition
product the finite instance realizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import MatrixFamily, interaction_matrix, lambda_min_plus, lambda_max
from .network import GossipMatrix, path_for_kappa, standard_topologies
from .oracles import QuadraticOracle
from .problems import MixedProblemData


class ConstructionInfeasibleError(ValueError):
    """Measured condition numbers missed their targets at this truncation."""


@dataclass(frozen=True)
class WorstInstanceSpec:
    kind: str
    kappa_f: float
    kappa_C: float
    kappa_A: float | None = None
    kappa_W: float | None = None
    truncation: int = 64
    n: int = 3
    l: int | None = None

    def __post_init__(self):
        if self.kind not in ("shared_local", "coupled_local"):
            raise ValueError(f"unknown worst-instance kind {self.kind!r}")
        if self.truncation < 4:
            raise ValueError("truncation must be at least 4")
        if self.n % 3 != 0 or self.n < 3:
            raise ValueError("node count must be a positive multiple of 3")
        for name in ("kappa_f", "kappa_C", "kappa_A", "kappa_W"):
            v = getattr(self, name)
            if v is not None and v < 1.0:
                raise ValueError(f"{name} must be >= 1")


def nesterov_tridiagonal(T: int) -> tuple:
    """(M, E): lower-bidiagonal E (1 diagonal, -1 subdiagonal) and M = E^T E.

    M is tridiagonal with 2 on the diagonal and -1 off it, except the final
    diagonal entry, which the truncation reduces to 1.
    """
    if T < 2:
        raise ValueError("need T >= 2")
    E = np.eye(T)
    for i in range(1, T):
        E[i, i - 1] = -1.0
    return E.T @ E, E


def split_interleaved(E: np.ndarray) -> tuple:
    """(E1^T, E2^T, I1, I2): odd rows of E^T (with the matching coordinate
    selectors) versus even rows, zero-padded in place so E1^T + E2^T = E^T
    and I1 + I2 = I."""
    T = E.shape[0]
    Et = E.T
    E1t = np.zeros_like(Et)
    E2t = np.zeros_like(Et)
    I1 = np.zeros((T, T))
    I2 = np.zeros((T, T))
    for k in range(T):
        if k % 2 == 0:
            E1t[k] = Et[k]
            I1[k, k] = 1.0
        else:
            E2t[k] = Et[k]
            I2[k, k] = 1.0
    return E1t, E2t, I1, I2


def nesterov_rho(kappa_product: float) -> float:
    """Decay rate of the geometric worst-case solution for a condition product."""
    if kappa_product < 1.0:
        raise ValueError("kappa_product must be >= 1")
    s = math.sqrt((2.0 / 3.0) * kappa_product + 1.0)
    return (s - 1.0) / (s + 1.0)


def nesterov_dual_solution(kappa_product: float, T: int) -> np.ndarray:
    """(rho^1, ..., rho^T) for rho = nesterov_rho(kappa_product)."""
    rho = nesterov_rho(kappa_product)
    return rho ** np.arange(1, T + 1)


def _path_gossip(n: int, kappa_W: float | None) -> GossipMatrix:
    if kappa_W is None:
        return standard_topologies("path", n) if n > 1 else GossipMatrix(1, np.zeros((1, 1)), ())
    return path_for_kappa(kappa_W)


def build_worst_shared(spec: WorstInstanceSpec) -> MixedProblemData:
    """Shared-variable worst instance at truncation T.

    Nodes in the first third carry the odd difference rows, the last third
    the even ones, the middle third no constraints; the constraint weights
    are corrected for the truncation boundary so the measured family
    quantities max_i lambda_max(C_i C_i^T) and lambda_min+(S_{C^T}) hit
    (L_C, mu_C) exactly.  The instance's solution has a geometrically
    decaying t-block with the rate reported in meta["rho"].
    """
    if spec.kind != "shared_local":
        raise ValueError("spec.kind must be 'shared_local'")
    if spec.kappa_C < 3.0:
        raise ValueError("the interleaved split needs kappa_C >= 3")
    T = spec.truncation
    mu_C = 1.0
    mu_f = 1.0
    L_C = spec.kappa_C * mu_C
    L_f = spec.kappa_f * mu_f

    M, E = nesterov_tridiagonal(T)
    lam0 = float(np.linalg.eigvalsh(M)[0])
    # truncation-corrected split weights: 2 L' + mu' = L_C and
    # mu' + lam0 L' = 3 mu_C exactly
    L_prime = (L_C - 3.0 * mu_C) / (2.0 - lam0)
    mu_prime = 3.0 * mu_C - lam0 * L_prime
    if L_prime < 0.0 or mu_prime <= 0.0:
        raise ConstructionInfeasibleError(
            f"split weights degenerate at T={T}: L'={L_prime:.3e}, mu'={mu_prime:.3e}"
        )
    E1t, E2t, I1, I2 = split_interleaved(E)
    sqL, sqmu = math.sqrt(L_prime), math.sqrt(mu_prime)

    gossip = _path_gossip(spec.n, spec.kappa_W)
    n = gossip.n
    if n % 3 != 0:
        raise ConstructionInfeasibleError(f"gossip construction produced n={n}, not a multiple of 3")
    group = n // 3
    zero = np.zeros((T, 2 * T))
    C1 = np.hstack([sqL * E1t, sqmu * I1])
    C3 = np.hstack([sqL * E2t, sqmu * I2])
    C_tilde = [C1] * group + [zero] * group + [C3] * group
    c_tilde = [np.zeros(T) for _ in range(n)]

    # f(p, t) = (mu_f/2)|p|^2 + (L_f/2)|t + s e1|^2 with s = L'/mu_f
    shift = L_prime / mu_f
    Q = np.diag(np.concatenate([mu_f * np.ones(T), L_f * np.ones(T)]))
    q = np.zeros(2 * T)
    q[T] = L_f * shift
    oracles = [QuadraticOracle(Q, q.copy()) for _ in range(n)]

    family = MatrixFamily(C_tilde)
    measured_max = max(lambda_max(Ci @ Ci.T) for Ci in C_tilde)
    measured_min = lambda_min_plus(interaction_matrix(family.transposed()))
    q_dual = mu_prime * mu_f / (2.0 * L_prime * L_f) if L_prime > 0 else math.inf
    kappa_eff = 3.0 / q_dual if math.isfinite(q_dual) else 1.0
    rho = nesterov_rho(kappa_eff) if math.isfinite(q_dual) else 0.0
    tail_tol = rho ** T
    if abs(measured_max - L_C) > max(tail_tol, 1e-9) * L_C or \
       abs(measured_min - mu_C) > max(tail_tol, 1e-9) * mu_C:
        raise ConstructionInfeasibleError(
            f"targets (L_C={L_C}, mu_C={mu_C}) vs measured "
            f"({measured_max:.12g}, {measured_min:.12g}) at T={T}"
        )

    return MixedProblemData(
        n=n, d=[0] * n, d_tilde=2 * T, f=oracles, W=gossip,
        C_tilde=C_tilde, c_tilde=c_tilde,
        meta={
            "kind": "shared_local",
            "rho": rho,
            "kappa_product_effective": kappa_eff,
            "kappa_product_target": spec.kappa_C * spec.kappa_f,
            "L_prime": L_prime,
            "mu_prime": mu_prime,
            "measured_L_C": measured_max,
            "measured_mu_C": measured_min,
            "tail_tol": tail_tol,
            "truncation": T,
            "t_slice": (T, 2 * T),
        },
    )


def _masked_kron(mask: np.ndarray, block: np.ndarray) -> np.ndarray:
    return np.kron(np.diag(mask), block)


def build_worst_coupled_local(spec: WorstInstanceSpec) -> MixedProblemData:
    """Coupled+local worst instance: within-node consensus as the local
    constraint, two-level path structure, masked difference splits as the
    coupled blocks.

    Local constraints C_i pin each node's l sub-blocks to agree; the coupled
    blocks act on sub-blocks selected by the node's third of the inner path.
    """
    if spec.kind != "coupled_local":
        raise ValueError("spec.kind must be 'coupled_local'")
    if spec.kappa_A is None or spec.kappa_A < 9.0:
        raise ValueError("the masked split needs kappa_A >= 9")
    T = spec.truncation
    mu_tilde = 1.0
    mu_A = mu_tilde
    L_A = spec.kappa_A * mu_tilde
    mu_f = 1.0
    L_f = spec.kappa_f * mu_f

    # inner path supplying the local-constraint condition number
    W_C = path_for_kappa(spec.kappa_C) if spec.kappa_C > 3.0 else standard_topologies(
        "path", spec.l or 3)
    l = W_C.n
    if l % 3 != 0:
        raise ConstructionInfeasibleError(f"inner path has l={l} nodes, not a multiple of 3")
    eigval, eigvec = np.linalg.eigh(W_C.W)
    # snap the consensus eigenvalue to an exact zero so the square root keeps
    # the within-node consensus kernel instead of a ~1e-8 residual direction
    eigval = np.where(eigval > 1e-12 * eigval[-1], eigval, 0.0)
    sqrt_WC = eigvec @ np.diag(np.sqrt(eigval)) @ eigvec.T
    sqrt_block = np.kron(sqrt_WC, np.eye(T))
    C_block = np.block([
        [sqrt_block, np.zeros_like(sqrt_block)],
        [np.zeros_like(sqrt_block), sqrt_block],
    ])

    L_prime = 0.5 * L_A - 4.5 * mu_A
    mu_prime = 9.0 * mu_tilde
    if L_prime <= 0.0:
        raise ConstructionInfeasibleError(f"kappa_A={spec.kappa_A} gives L'_A={L_prime:.3e} <= 0")
    _, E = nesterov_tridiagonal(T)
    # masked splits along the H-style pattern: e1 row plus interleaved pairs
    E1 = np.zeros((T, T))
    E2 = np.zeros((T, T))
    E1[0, 0] = 1.0
    for j in range(1, T, 2):
        if j + 1 < T:
            E1[j, j] = 1.0
            E1[j, j + 1] = -1.0
    for j in range(0, T, 2):
        if j + 1 < T:
            E2[j, j] = 1.0
            E2[j, j + 1] = -1.0
    sqL, sqmu = math.sqrt(L_prime), math.sqrt(mu_prime)
    A_bar_1 = np.hstack([sqL * E1.T, sqmu * np.eye(T)])
    A_bar_2 = np.hstack([sqL * E2.T, sqmu * np.eye(T)])

    gossip = _path_gossip(spec.n, spec.kappa_W)
    n = gossip.n
    if n % 3 != 0:
        raise ConstructionInfeasibleError(f"gossip construction produced n={n}, not a multiple of 3")
    group = n // 3
    thirds = l // 3
    mask1 = np.zeros(l)
    mask3 = np.zeros(l)
    mask1[:thirds] = 1.0
    mask3[2 * thirds:] = 1.0

    def lift(mask, bar):
        p_part = _masked_kron(mask, bar[:, :T])
        t_part = _masked_kron(mask, bar[:, T:])
        return np.hstack([p_part, t_part])

    A1 = lift(mask1, A_bar_1)
    A3 = lift(mask3, A_bar_2)
    zero = np.zeros_like(A1)
    A = [A1] * group + [zero] * group + [A3] * group
    b = [np.zeros(l * T) for _ in range(n)]
    C = [C_block] * n
    c = [np.zeros(2 * l * T) for _ in range(n)]

    # f_i = (mu_f/2)(1/l) sum_j |p_ij + s e1|^2 + (L_f/2)(1/l) sum_j |t_ij|^2
    shift = math.sqrt(L_prime) / (2.0 * mu_f)
    Q = np.diag(np.concatenate([(mu_f / l) * np.ones(l * T),
                                (L_f / l) * np.ones(l * T)]))
    q = np.zeros(2 * l * T)
    q[:l * T] = (mu_f / l) * shift * np.tile(np.eye(T)[0], l)
    oracles = [QuadraticOracle(Q, q.copy()) for _ in range(n)]

    measured_LA = max(lambda_max(Ai @ Ai.T) for Ai in A)
    sv1 = np.linalg.svd(A_bar_1, compute_uv=False)
    measured_mu_tilde = float(sv1[sv1 > 1e-9 * sv1[0]][-1] ** 2) / 9.0
    if abs(measured_LA - L_A) > 1e-9 * L_A or abs(measured_mu_tilde - mu_tilde) > 1e-9:
        raise ConstructionInfeasibleError(
            f"targets (L_A={L_A}, mu_tilde={mu_tilde}) vs measured "
            f"({measured_LA:.12g}, {measured_mu_tilde:.12g})"
        )

    return MixedProblemData(
        n=n, d=[2 * l * T] * n, d_tilde=0, f=oracles, W=gossip,
        A=A, b=b, C=C, c=c,
        meta={
            "kind": "coupled_local",
            "l": l,
            "truncation": T,
            "kappa_C_measured": W_C.kappa,
            "L_prime_A": L_prime,
            "mu_prime_A": mu_prime,
            "measured_L_A": measured_LA,
            "measured_mu_tilde_AC": measured_mu_tilde,
            "A_bar": (A_bar_1, A_bar_2),
            "masks": (mask1, mask3),
        },
    )
