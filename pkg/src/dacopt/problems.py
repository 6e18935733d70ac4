"""Reformulation builders: lift the five constraint regimes (consensus,
shared-variable, coupled, coupled+local, mixed) into the canonical form

    min_z G(z)  s.t.  B z = v,

with decentralized-friendly block constraint matrices, lemma-certified block
scalings, optional Chebyshev preconditioning at the gossip, local-constraint
and whole-block levels, and augmented-Lagrangian penalization where the
auxiliary variable destroys strong convexity.

Also owns the JSON instance format and the random instance generators used by
tests and the CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import conditioning as cond
from .conditioning import (
    MatrixFamily,
    ChebyshevOperator,
    chebyshev_apply,
    chebyshev_interval,
)
from .network import GossipMatrix, standard_topologies
from .operators import (
    LinearOperator,
    DenseOperator,
    ZeroOperator,
    SpectralBounds,
    block_diag,
    block_stack,
    kron_gossip,
    materialize,
    spectral_bounds,
)
from .oracles import (
    ObjectiveOracle,
    QuadraticOracle,
    SeparableOracle,
    SumOracle,
    GatherOracle,
    QuadraticPenaltyOracle,
    ConstantsOverride,
)

FEASIBILITY_TOL = 1e-8

CERTIFIED_CHEB_BOUNDS = SpectralBounds((19.0 / 15.0) ** 2, (11.0 / 15.0) ** 2)


class InfeasibleInstanceError(ValueError):
    """The declared affine constraints admit no common solution."""


@dataclass
class BuildOptions:
    """Assembly switches for the reformulation pipeline.

    chebyshev_w / chebyshev_local replace the gossip and local-constraint
    blocks by their Chebyshev polynomials before the block matrix is formed;
    chebyshev_outer wraps each diagonal constraint block afterwards.  The
    smooth augmented-Lagrangian penalty is added whenever a coupled block is
    present, the objective is strongly convex and ``penalize`` is set.
    """

    chebyshev_w: bool = False
    chebyshev_local: bool = False
    chebyshev_outer: bool = False
    penalize: bool = True
    nonsmooth: bool = False


def full_pipeline() -> BuildOptions:
    """Options used by the solver CLI: all preconditioning levels on."""
    return BuildOptions(chebyshev_w=True, chebyshev_local=True, chebyshev_outer=True)


@dataclass
class MixedProblemData:
    """Per-node data of the mixed-constraint problem.

    ``f[i]`` is an oracle over the concatenation (x_i, xtilde); d[i] or
    d_tilde may be zero when a variable group is absent.  Constraint groups
    are None when not present.
    """

    n: int
    d: list
    d_tilde: int
    f: list
    W: GossipMatrix
    A: list | None = None
    b: list | None = None
    C: list | None = None
    c: list | None = None
    C_tilde: list | None = None
    c_tilde: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1 or len(self.d) != self.n or len(self.f) != self.n:
            raise ValueError("need per-node dims and oracles for each of the n nodes")
        if self.W.n != self.n:
            raise ValueError("gossip matrix size must equal the node count")
        for i, fi in enumerate(self.f):
            if fi.dim != self.d[i] + self.d_tilde:
                raise ValueError(
                    f"node {i}: oracle dim {fi.dim} != d_i + d_tilde = {self.d[i] + self.d_tilde}"
                )
        for name in ("A", "C"):
            group = getattr(self, name)
            if group is not None:
                for i, Mi in enumerate(group):
                    if np.asarray(Mi).shape[1] != self.d[i]:
                        raise ValueError(f"{name}_{i} column count != d_{i}")
        if self.C_tilde is not None:
            for i, Mi in enumerate(self.C_tilde):
                if np.asarray(Mi).shape[1] != self.d_tilde:
                    raise ValueError(f"C_tilde_{i} column count != d_tilde")

    @property
    def mu_f(self) -> float:
        return min(fi.mu for fi in self.f)

    @property
    def L_f(self) -> float:
        Ls = [fi.L for fi in self.f]
        if any(L is None for L in Ls):
            raise ValueError("objective is nonsmooth: no stack smoothness constant")
        return max(Ls)

    @property
    def M_f(self) -> float | None:
        Ms = [fi.M for fi in self.f]
        if any(M is None for M in Ms):
            return None
        return float(np.sqrt(sum(M ** 2 for M in Ms)))


@dataclass
class AffineProblem:
    """Canonical affine-constrained problem min G(u) s.t. B u = b."""

    objective: ObjectiveOracle
    B: LinearOperator
    b: np.ndarray
    bounds: SpectralBounds
    u0: np.ndarray
    solution_hint: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.B.cols

    def constraint_residual(self, u: np.ndarray) -> float:
        return float(np.linalg.norm(self.B.apply(u) - self.b))


# --- assembly helpers ------------------------------------------------------


def _check_gossip(W: GossipMatrix):
    report = W.assumption_report()
    if not all([report["symmetric"], report["psd"], report["nullspace_is_consensus"]]):
        raise ValueError(f"gossip matrix violates the consensus-kernel assumption: {report}")


def _w_block(W: GossipMatrix, block_dim: int, options: BuildOptions) -> dict:
    """Gossip block as used in constraints: raw lifting or its Chebyshev wrap.

    Returns the operator together with squared-singular-value bounds of the
    block and the lambda-ratio condition number it contributes to smoothness.
    Wrapped blocks report the certified equioscillation band, the uniform
    constant the complexity statements transport, rather than the (tighter)
    spectrum a central eigensolve of the particular instance would give.
    """
    lb = W.lambda_bounds
    lift = kron_gossip(W.W, block_dim)
    if lb.sigma_max_sq == 0.0:
        # single node: the gossip matrix is zero and the constraint is vacuous
        return {"op": lift, "bounds": SpectralBounds(0.0, 0.0), "kappa_w": 1.0,
                "degree": None}
    if options.chebyshev_w:
        K = ChebyshevOperator(lift, lb, gram=True)
        op_bounds = chebyshev_interval(lb)
        return {"op": K, "bounds": op_bounds,
                "kappa_w": float(np.sqrt(op_bounds.kappa)), "degree": K.degree}
    op_bounds = SpectralBounds(lb.sigma_max_sq ** 2, lb.sigma_min_plus_sq ** 2)
    return {"op": lift, "bounds": op_bounds, "kappa_w": lb.kappa, "degree": None}


def _block_diag_dense(mats, tag: str) -> LinearOperator:
    """Stacked per-node blocks; the composite carries the tag, so one apply of
    the stack counts as one parallel multiplication round."""
    return block_diag([DenseOperator(np.asarray(m, dtype=float)) for m in mats], tag=tag)


def _node_offsets(dims) -> np.ndarray:
    return np.cumsum([0] + list(dims))


def _stack_objective_x(data: MixedProblemData) -> ObjectiveOracle:
    """sum_i f_i(x_i) over the stacked x (pure-x regimes, d_tilde = 0)."""
    return SeparableOracle(data.f)


def _gathered_objective(data: MixedProblemData, dim_total: int,
                        x_offsets, xt_offset: int | None) -> ObjectiveOracle:
    """sum_i f_i(x_i, xtilde_i) placed inside the stacked variable."""
    parts = []
    for i, fi in enumerate(data.f):
        idx = list(range(x_offsets[i], x_offsets[i] + data.d[i]))
        if data.d_tilde > 0:
            if xt_offset is None:
                raise ValueError("objective touches xtilde but layout has no xtilde block")
            start = xt_offset + i * data.d_tilde
            idx += list(range(start, start + data.d_tilde))
        parts.append(GatherOracle(fi, np.array(idx, dtype=int), dim_total))
    return SumOracle(parts)


def _quadratic_nodes(data: MixedProblemData) -> bool:
    return all(isinstance(fi, QuadraticOracle) for fi in data.f)


def _original_kkt(data: MixedProblemData) -> tuple:
    """Dense KKT solution (x_stack, x_tilde) of the original formulation.

    Requires quadratic per-node oracles.  Raises InfeasibleInstanceError when
    the stacked constraints are inconsistent.
    """
    if not _quadratic_nodes(data):
        raise ValueError("dense KKT hint needs quadratic per-node objectives")
    n, d, dt = data.n, data.d, data.d_tilde
    xoff = _node_offsets(d)
    dx = int(xoff[-1])
    D = dx + dt
    H = np.zeros((D, D))
    g0 = np.zeros(D)
    for i, fi in enumerate(data.f):
        idx = list(range(xoff[i], xoff[i] + d[i])) + list(range(dx, dx + dt))
        idx = np.array(idx, dtype=int)
        H[np.ix_(idx, idx)] += fi.hessian()
        g0[idx] += fi.q

    rows = []
    rhs = []
    if data.A is not None:
        m = np.asarray(data.A[0]).shape[0]
        row = np.zeros((m, D))
        for i in range(n):
            row[:, xoff[i]:xoff[i] + d[i]] = data.A[i]
        rows.append(row)
        rhs.append(np.sum([np.asarray(bi, dtype=float) for bi in data.b], axis=0))
    if data.C is not None:
        for i in range(n):
            Ci = np.asarray(data.C[i], dtype=float)
            row = np.zeros((Ci.shape[0], D))
            row[:, xoff[i]:xoff[i] + d[i]] = Ci
            rows.append(row)
            rhs.append(np.asarray(data.c[i], dtype=float))
    if data.C_tilde is not None:
        for i in range(n):
            Ci = np.asarray(data.C_tilde[i], dtype=float)
            row = np.zeros((Ci.shape[0], D))
            row[:, dx:dx + dt] = Ci
            rows.append(row)
            rhs.append(np.asarray(data.c_tilde[i], dtype=float))

    if rows:
        E = np.vstack(rows)
        r = np.concatenate(rhs)
        # feasibility of the affine system alone
        ls = np.linalg.lstsq(E, r, rcond=None)[0]
        if np.linalg.norm(E @ ls - r) > FEASIBILITY_TOL * (1.0 + np.linalg.norm(r)):
            raise InfeasibleInstanceError("declared affine constraints are inconsistent")
        s = E.shape[0]
        KKT = np.block([[H, E.T], [E, np.zeros((s, s))]])
        full_rhs = np.concatenate([-g0, r])
        sol = np.linalg.lstsq(KKT, full_rhs, rcond=None)[0]
        v = sol[:D]
        if np.linalg.norm(E @ v - r) > FEASIBILITY_TOL * (1.0 + np.linalg.norm(r)):
            raise InfeasibleInstanceError("KKT solve failed to satisfy the constraints")
    else:
        v = np.linalg.lstsq(H, -g0, rcond=None)[0]
    return v[:dx], v[dx:]


def _lift_y(w_op: LinearOperator, w_scale: float, target: np.ndarray) -> np.ndarray:
    """Minimum-norm y with w_scale * W y = target (lives in the image of W)."""
    Wd = materialize(w_op)
    y = np.linalg.lstsq(w_scale * Wd, target, rcond=None)[0]
    resid = np.linalg.norm(w_scale * (Wd @ y) - target)
    if resid > FEASIBILITY_TOL * (1.0 + np.linalg.norm(target)):
        raise InfeasibleInstanceError(
            f"coupled right-hand side is not reachable through the gossip block ({resid:.2e})"
        )
    return y


def _outer_chebyshev(blocks: list, meta: dict) -> tuple:
    """Per-diagonal-block Chebyshev wrap of the assembled constraint.

    blocks: list of (operator, rhs, certified_bounds); certified bounds come
    from the scaling lemmas and fall back to a dense measurement when a
    degenerate assembly leaves no certificate.  Returns (B, b, bounds) with
    bounds the certified post-preconditioning interval.
    """
    ops, rhss, degrees = [], [], []
    for op, rhs, cert in blocks:
        bd = cert if cert is not None else spectral_bounds(op)
        K, b_prime = cond.chebyshev_operator(op, rhs, bd)
        ops.append(K)
        rhss.append(b_prime)
        degrees.append(K.degree)
    meta["outer_degrees"] = degrees
    B = ops[0] if len(ops) == 1 else block_diag(ops)
    return B, np.concatenate(rhss), CERTIFIED_CHEB_BOUNDS


def _finalize(objective, blocks, options, u0, hint, meta) -> AffineProblem:
    """Assemble the constraint from diagonal blocks, optionally preconditioning."""
    if options.chebyshev_outer:
        B, b, bounds = _outer_chebyshev(blocks, meta)
    else:
        B = blocks[0][0] if len(blocks) == 1 else block_diag([op for op, _, _ in blocks])
        b = np.concatenate([rhs for _, rhs, _ in blocks])
        bounds = spectral_bounds(B)
    problem = AffineProblem(objective=objective, B=B, b=b, bounds=bounds,
                            u0=u0, solution_hint=hint, meta=meta)
    if hint is not None:
        resid = problem.constraint_residual(hint)
        if resid > 1e-6 * (1.0 + np.linalg.norm(b)):
            raise AssertionError(f"assembled hint violates the constraint ({resid:.2e})")
    return problem


# --- builders --------------------------------------------------------------


def build_consensus(data: MixedProblemData, options: BuildOptions | None = None) -> AffineProblem:
    """Consensus lifting: copies of the shared variable tied by the gossip kernel.

    The gossip wrap itself is the whole preconditioning here (B = P_W(W) is
    already O(1)-conditioned), so ``chebyshev_outer`` folds into the W level.
    """
    options = options or BuildOptions()
    if data.A is not None or data.C is not None or data.C_tilde is not None:
        raise ValueError("consensus builder expects no affine constraint groups (use build_mixed)")
    if data.d_tilde == 0:
        raise ValueError("consensus problem needs a shared variable")
    _check_gossip(data.W)
    w_opts = BuildOptions(chebyshev_w=options.chebyshev_w or options.chebyshev_outer)
    wb = _w_block(data.W, data.d_tilde, w_opts)
    dim = data.n * data.d_tilde
    objective = SeparableOracle(data.f)
    hint = None
    if _quadratic_nodes(data):
        _, xt = _original_kkt(data)
        hint = np.tile(xt, data.n)
    meta = {
        "regime": "consensus",
        "slices": {"xt": (0, dim)},
        "w_degree": wb["degree"],
        "kappa_w": data.W.kappa if data.n > 1 else 1.0,
        "kappa_w_used": wb["kappa_w"],
        "quadratic": _quadratic_nodes(data),
        "degenerate_constraint": data.n == 1,
        "mu": data.mu_f,
        "L": data.L_f,
    }
    problem = AffineProblem(objective=objective, B=wb["op"], b=np.zeros(dim),
                            bounds=wb["bounds"], u0=np.zeros(dim),
                            solution_hint=hint, meta=meta)
    if hint is not None and wb["bounds"].sigma_max_sq > 0:
        resid = problem.constraint_residual(hint)
        if resid > 1e-6 * (1.0 + np.linalg.norm(hint)):
            raise AssertionError(f"consensus hint violates the constraint ({resid:.2e})")
    return problem


def _shared_cert(family: MatrixFamily, gamma_sq: float, wb: dict) -> SpectralBounds | None:
    """Certified bounds of the stack (C_tilde; gamma W) from the coupled-spectrum
    lemma applied to its transpose."""
    S_min = cond.lambda_min_plus(cond.interaction_matrix(family.transposed()))
    if S_min <= 0:
        return None
    smax_ct = max(cond.lambda_max(Ci @ Ci.T) for Ci in family.blocks)
    smax_cert = smax_ct + gamma_sq * wb["bounds"].sigma_max_sq
    return SpectralBounds(smax_cert, S_min / 2.0)


def build_shared(data: MixedProblemData, options: BuildOptions | None = None) -> AffineProblem:
    """Shared-variable constraints via local copies plus consensus rows."""
    options = options or BuildOptions()
    if data.A is not None or data.C is not None:
        raise ValueError("shared builder handles only shared-variable constraints")
    if data.C_tilde is None:
        raise ValueError("shared builder needs C_tilde blocks")
    _check_gossip(data.W)
    n, dt = data.n, data.d_tilde
    dim = n * dt

    stacked = np.vstack([np.asarray(Ci, dtype=float) for Ci in data.C_tilde])
    rhs_all = np.concatenate([np.asarray(ci, dtype=float) for ci in data.c_tilde])
    ls = np.linalg.lstsq(stacked, rhs_all, rcond=None)[0]
    if np.linalg.norm(stacked @ ls - rhs_all) > FEASIBILITY_TOL * (1.0 + np.linalg.norm(rhs_all)):
        raise InfeasibleInstanceError("shared-variable constraints are mutually inconsistent")

    wb = _w_block(data.W, dt, options)
    family = MatrixFamily(data.C_tilde)
    gamma_sq = cond.shared_scaling(family, wb["bounds"])
    gamma = float(np.sqrt(gamma_sq))
    Ct = _block_diag_dense(data.C_tilde, tag="C_tilde")
    Bt = block_stack([[Ct], [wb["op"]]], [[1.0], [gamma]])
    b = np.concatenate([rhs_all, np.zeros(dim)])
    cert = _shared_cert(family, gamma_sq, wb)

    objective = SeparableOracle(data.f)
    hint = None
    if _quadratic_nodes(data):
        _, xt = _original_kkt(data)
        hint = np.tile(xt, n)
    meta = {
        "regime": "shared",
        "slices": {"xt": (0, dim)},
        "gamma_sq": gamma_sq,
        "w_degree": wb["degree"],
        "kappa_w": data.W.kappa,
        "kappa_w_used": wb["kappa_w"],
        "kappa_hat_Ct_T": cond.mixed_condition_number(family, transposed=True),
        "quadratic": _quadratic_nodes(data),
        "mu": data.mu_f,
        "L": data.L_f if objective.L is not None else None,
    }
    return _finalize(objective, [(Bt, b, cert)], options, np.zeros(dim), hint, meta)


def _coupled_assembly(data: MixedProblemData, options: BuildOptions,
                      with_local: bool) -> dict:
    """Shared machinery of the coupled and coupled+local builders."""
    _check_gossip(data.W)
    if data.A is None:
        raise ValueError("coupled builder needs A blocks")
    n, d = data.n, data.d
    xoff = _node_offsets(d)
    dx = int(xoff[-1])
    m = np.asarray(data.A[0]).shape[0]
    if any(np.asarray(Ai).shape[0] != m for Ai in data.A):
        raise ValueError("all A_i must share the coupled row dimension m")
    dy = m * n

    A_bd = _block_diag_dense(data.A, tag="A")
    A_bounds = spectral_bounds(A_bd)
    A_family = MatrixFamily(data.A)
    S_A = cond.interaction_matrix(A_family)
    S_A_min = cond.lambda_min_plus(S_A)
    wb = _w_block(data.W, m, options)
    b_stack = np.concatenate([np.asarray(bi, dtype=float) for bi in data.b])

    try:
        kappa_hat_A = cond.mixed_condition_number(A_family)
    except cond.DegenerateFamilyError:
        kappa_hat_A = 1.0
    meta = {
        "w_degree": wb["degree"],
        "kappa_w": data.W.kappa,
        "kappa_w_used": wb["kappa_w"],
        "kappa_hat_A": kappa_hat_A,
        "L_A": A_bounds.sigma_max_sq,
        "quadratic": _quadratic_nodes(data),
    }
    mu_W_used = wb["bounds"].sigma_min_plus_sq

    if with_local:
        if data.C is None:
            raise ValueError("coupled+local builder needs C blocks")
        # per-node local feasibility
        for i in range(n):
            Ci = np.asarray(data.C[i], dtype=float)
            ci = np.asarray(data.c[i], dtype=float)
            sol = np.linalg.lstsq(Ci, ci, rcond=None)[0]
            if np.linalg.norm(Ci @ sol - ci) > FEASIBILITY_TOL * (1.0 + np.linalg.norm(ci)):
                raise InfeasibleInstanceError(f"local constraints of node {i} are inconsistent")
        C_bd = _block_diag_dense(data.C, tag="C")
        C_bounds_raw = spectral_bounds(C_bd)
        c_stack = np.concatenate([np.asarray(ci, dtype=float) for ci in data.c])
        if options.chebyshev_local and C_bounds_raw.sigma_max_sq > 0:
            C_used = ChebyshevOperator(C_bd, C_bounds_raw)
            c_used = chebyshev_apply(np.zeros(dx), C_bd, c_stack, C_bounds_raw)
            C_used_bounds = chebyshev_interval(C_bounds_raw)
            meta["c_degree"] = C_used.degree
        else:
            C_used, c_used, C_used_bounds = C_bd, c_stack, C_bounds_raw
            meta["c_degree"] = None
        C_family = MatrixFamily(data.C)
        try:
            mu_tilde, kappa_tilde = cond.projected_condition_number(A_family, C_family)
        except cond.DegenerateFamilyError:
            mu_tilde, kappa_tilde = 0.0, 1.0
        Ap = np.hstack([np.asarray(Ai, dtype=float) for Ai in data.A])
        L_S = float(np.linalg.svd(Ap, compute_uv=False)[0] ** 2) / n
        if A_bounds.sigma_max_sq == 0.0:
            # zero coupled blocks: any positive scales satisfy the lemmas
            alpha_sq, beta_sq = 1.0, 1.0
        else:
            scal = cond.mixed_scaling(A_bounds, mu_tilde, L_S, C_used_bounds, wb["bounds"])
            alpha_sq, beta_sq = scal.alpha_sq, scal.beta_sq
            if options.nonsmooth:
                alpha_sq = (A_bounds.sigma_min_plus_sq + A_bounds.sigma_max_sq) / mu_W_used
        alpha = float(np.sqrt(alpha_sq))
        beta = float(np.sqrt(beta_sq))
        B_op = block_stack([[A_bd, wb["op"]], [C_used, None]],
                           [[1.0, alpha], [beta, 0.0]])
        rhs = np.concatenate([b_stack, beta * c_used])
        # lemma-certified bounds of the assembled block
        smin_cert = 0.25 * mu_tilde if mu_tilde > 0.0 else A_bounds.sigma_max_sq
        smax_cert = (A_bounds.sigma_max_sq + alpha_sq * wb["bounds"].sigma_max_sq
                     + beta_sq * C_used_bounds.sigma_max_sq)
        cert = SpectralBounds(smax_cert, smin_cert) if smin_cert > 0 else None
        meta.update({
            "regime": "coupled_local",
            "mu_tilde_AC": mu_tilde,
            "kappa_tilde_AC": kappa_tilde,
            "kappa_C": C_bounds_raw.kappa if C_bounds_raw.sigma_max_sq > 0 else 1.0,
            "alpha_sq": alpha_sq,
            "beta_sq": beta_sq,
            "L_S": L_S,
        })
    else:
        if data.C is not None:
            raise ValueError("pure coupled builder got local constraints (use build_coupled_local)")
        if A_bounds.sigma_max_sq == 0.0:
            beta_sq = 1.0
        elif options.nonsmooth:
            beta_sq = (A_bounds.sigma_min_plus_sq + A_bounds.sigma_max_sq) / mu_W_used
        else:
            beta_sq = cond.coupled_scaling(A_bounds, S_A_min, wb["bounds"])
        alpha = float(np.sqrt(beta_sq))
        B_op = block_stack([[A_bd, wb["op"]]], [[1.0, alpha]])
        rhs = b_stack
        smax_cert = A_bounds.sigma_max_sq + beta_sq * wb["bounds"].sigma_max_sq
        cert = SpectralBounds(smax_cert, S_A_min / 2.0) if S_A_min > 0 else None
        meta.update({"regime": "coupled", "beta_sq": beta_sq, "alpha_sq": beta_sq})

    # penalty row (A, alpha*W) over (x, y); the same first-row operator
    pen_op = block_stack([[A_bd, wb["op"]]], [[1.0, alpha]])
    return {
        "A_bd": A_bd, "A_bounds": A_bounds, "S_A_min": S_A_min,
        "wb": wb, "B_op": B_op, "rhs": rhs, "cert": cert, "pen_op": pen_op,
        "b_stack": b_stack, "alpha": alpha, "dx": dx, "dy": dy, "m": m,
        "xoff": xoff, "meta": meta,
    }


def _penalized_objective(data: MixedProblemData, asm: dict, options: BuildOptions,
                         dim_total: int, xt_offset: int | None) -> tuple:
    """Objective over the lifted variable, penalized when strongly convex."""
    xoff = asm["xoff"]
    if data.d_tilde > 0:
        base = _gathered_objective(data, dim_total, xoff, xt_offset)
    else:
        F = _stack_objective_x(data)
        base = GatherOracle(F, np.arange(asm["dx"]), dim_total)

    mu_f = data.mu_f
    L_f = data.L_f
    meta = asm["meta"]
    meta["mu_f"] = mu_f
    meta["L_f"] = L_f
    if options.nonsmooth or not options.penalize or mu_f <= 0.0:
        meta["penalty_r"] = 0.0
        meta["needs_regularization"] = mu_f <= 0.0
        objective = ConstantsOverride(base, mu=0.0, L=L_f)
        return objective, meta

    L_A = asm["A_bounds"].sigma_max_sq
    if L_A > 0.0:
        r = mu_f / (2.0 * L_A)
    else:
        # zero coupled blocks: pick the smallest r restoring mu_f/4 convexity in y
        r = mu_f / (asm["alpha"] ** 2 * asm["wb"]["bounds"].sigma_min_plus_sq)
    pen_cols = asm["pen_op"].cols
    if pen_cols != dim_total:
        pen = block_stack([[asm["pen_op"], ZeroOperator(asm["pen_op"].rows,
                                                        dim_total - pen_cols)]])
    else:
        pen = asm["pen_op"]
    penalty = QuadraticPenaltyOracle(pen, asm["b_stack"], r,
                                     sigma_max_sq=None)
    kw = asm["wb"]["kappa_w"]
    objective = ConstantsOverride(SumOracle([base, penalty]),
                                  mu=mu_f / 4.0, L=2.0 * L_f * kw ** 2)
    meta["penalty_r"] = r
    meta["mu_G"] = mu_f / 4.0
    meta["L_G"] = 2.0 * L_f * kw ** 2
    return objective, meta


def _coupled_hint(data: MixedProblemData, asm: dict, x_star: np.ndarray) -> np.ndarray:
    target = asm["b_stack"] - asm["A_bd"].apply(x_star)
    y_star = _lift_y(asm["wb"]["op"], asm["alpha"], target)
    return np.concatenate([x_star, y_star])


def build_coupled(data: MixedProblemData, options: BuildOptions | None = None) -> AffineProblem:
    """Coupled constraints sum_i (A_i x_i - b_i) = 0 via the gossip-range lift."""
    options = options or BuildOptions()
    if data.C_tilde is not None or data.d_tilde != 0:
        raise ValueError("coupled builder expects no shared variable (use build_mixed)")
    asm = _coupled_assembly(data, options, with_local=False)
    dim = asm["dx"] + asm["dy"]
    objective, meta = _penalized_objective(data, asm, options, dim, None)
    hint = None
    if _quadratic_nodes(data):
        x_star, _ = _original_kkt(data)
        hint = _coupled_hint(data, asm, x_star)
    meta["slices"] = {"x": (0, asm["dx"]), "y": (asm["dx"], dim)}
    meta["mu"] = objective.mu
    meta["L"] = objective.L
    return _finalize(objective, [(asm["B_op"], asm["rhs"], asm["cert"])], options,
                     np.zeros(dim), hint, meta)


def build_coupled_local(data: MixedProblemData,
                        options: BuildOptions | None = None) -> AffineProblem:
    """Coupled plus per-node local constraints as one 2x2 block matrix.

    Identically-zero local blocks reduce exactly to the pure coupled build
    (the all-zero constraint row carries no information).
    """
    options = options or BuildOptions()
    if data.C_tilde is not None or data.d_tilde != 0:
        raise ValueError("coupled+local builder expects no shared variable (use build_mixed)")
    if data.C is not None and all(not np.asarray(Ci).any() for Ci in data.C):
        if data.c is not None and any(np.asarray(ci).any() for ci in data.c):
            raise InfeasibleInstanceError("zero local blocks with nonzero right-hand sides")
        stripped = MixedProblemData(n=data.n, d=data.d, d_tilde=data.d_tilde,
                                    f=data.f, W=data.W, A=data.A, b=data.b,
                                    meta=data.meta)
        return build_coupled(stripped, options)
    asm = _coupled_assembly(data, options, with_local=True)
    dim = asm["dx"] + asm["dy"]
    objective, meta = _penalized_objective(data, asm, options, dim, None)
    hint = None
    if _quadratic_nodes(data):
        x_star, _ = _original_kkt(data)
        hint = _coupled_hint(data, asm, x_star)
    meta["slices"] = {"x": (0, asm["dx"]), "y": (asm["dx"], dim)}
    meta["mu"] = objective.mu
    meta["L"] = objective.L
    return _finalize(objective, [(asm["B_op"], asm["rhs"], asm["cert"])], options,
                     np.zeros(dim), hint, meta)


def build_mixed(data: MixedProblemData, options: BuildOptions | None = None) -> AffineProblem:
    """Full mixed problem: coupled+local block plus shared-variable block.

    Degenerates to the dedicated builders when a constraint group is absent.
    """
    options = options or BuildOptions()
    has_coupled = data.A is not None
    has_local = data.C is not None
    has_shared = data.C_tilde is not None or data.d_tilde > 0

    if not has_coupled and not has_local:
        if data.C_tilde is None:
            return build_consensus(data, options)
        return build_shared(data, options)
    if not has_shared:
        if has_local:
            return build_coupled_local(data, options)
        return build_coupled(data, options)

    if not has_coupled:
        raise ValueError("local constraints without a coupled group are not a supported layout")
    if data.C_tilde is None:
        raise ValueError("mixed build with a shared variable needs C_tilde (or use consensus)")

    asm = _coupled_assembly(data, options, with_local=has_local)
    n, dt = data.n, data.d_tilde
    dxy = asm["dx"] + asm["dy"]
    dim = dxy + n * dt

    # shared block over the xtilde copies
    stacked = np.vstack([np.asarray(Ci, dtype=float) for Ci in data.C_tilde])
    rhs_all = np.concatenate([np.asarray(ci, dtype=float) for ci in data.c_tilde])
    ls = np.linalg.lstsq(stacked, rhs_all, rcond=None)[0]
    if np.linalg.norm(stacked @ ls - rhs_all) > FEASIBILITY_TOL * (1.0 + np.linalg.norm(rhs_all)):
        raise InfeasibleInstanceError("shared-variable constraints are mutually inconsistent")
    wb_t = _w_block(data.W, dt, options)
    family = MatrixFamily(data.C_tilde)
    gamma_sq = cond.shared_scaling(family, wb_t["bounds"])
    gamma = float(np.sqrt(gamma_sq))
    Ct = _block_diag_dense(data.C_tilde, tag="C_tilde")
    Bt = block_stack([[Ct], [wb_t["op"]]], [[1.0], [gamma]])
    bt = np.concatenate([rhs_all, np.zeros(n * dt)])
    cert_t = _shared_cert(family, gamma_sq, wb_t)

    objective, meta = _penalized_objective(data, asm, options, dim, dxy)
    hint = None
    if _quadratic_nodes(data):
        x_star, xt_star = _original_kkt(data)
        hint = np.concatenate([_coupled_hint(data, asm, x_star), np.tile(xt_star, n)])
    meta.update({
        "regime": "mixed",
        "slices": {"x": (0, asm["dx"]), "y": (asm["dx"], dxy), "xt": (dxy, dim)},
        "gamma_sq": gamma ** 2,
        "kappa_hat_Ct_T": cond.mixed_condition_number(family, transposed=True),
        "mu": objective.mu,
        "L": objective.L,
    })
    blocks = [(asm["B_op"], asm["rhs"], asm["cert"]), (Bt, bt, cert_t)]
    return _finalize(objective, blocks, options, np.zeros(dim), hint, meta)


def nonsmooth_strongly_convex_penalty_config(M: float, mu_f: float,
                                             A: SpectralBounds, W: SpectralBounds,
                                             eps: float,
                                             B: SpectralBounds | None = None) -> tuple:
    """(alpha_sq, r, eps_checked) for the nonsmooth strongly convex penalty.

    alpha^2 = (mu_A + L_A)/mu_W; the dual-multiplier radius caps r at
    M/sigma_min+(B) (bounds of the assembled constraint block, exact at desk
    scale); eps is clipped to 4 r^2 mu_A / mu_f so the penalized objective
    stays (mu_f/2)-strongly convex on the product of the domain with the
    zero-sum subspace.
    """
    if mu_f <= 0 or W.sigma_min_plus_sq <= 0:
        raise ValueError("mu_f and mu_W must be positive")
    if A.sigma_min_plus_sq <= 0:
        raise ValueError("mu_A must be positive for the strong-convexity condition")
    alpha_sq = (A.sigma_min_plus_sq + A.sigma_max_sq) / W.sigma_min_plus_sq
    if B is None:
        raise ValueError("pass the assembled constraint bounds B to size the dual radius")
    r = M / float(np.sqrt(B.sigma_min_plus_sq))
    eps_cap = 4.0 * r ** 2 * A.sigma_min_plus_sq / mu_f
    eps_checked = min(eps, eps_cap)
    return alpha_sq, r, eps_checked


# --- instance JSON ---------------------------------------------------------


def _matrix_list(group):
    if group is None:
        return None
    return [np.asarray(g, dtype=float).tolist() for g in group]


def save_instance(data: MixedProblemData, path: str):
    """Write the instance in the canonical JSON schema (bit-exact round trip)."""
    if not _quadratic_nodes(data):
        raise ValueError("only quadratic objectives are serializable")
    doc = {
        "n": data.n,
        "A": _matrix_list(data.A),
        "b": _matrix_list(data.b),
        "C": _matrix_list(data.C),
        "c": _matrix_list(data.c),
        "C_tilde": _matrix_list(data.C_tilde),
        "c_tilde": _matrix_list(data.c_tilde),
        "W": data.W.W.tolist(),
        "objective": [
            {"type": "quadratic", "Q": fi.Q.tolist(), "q": fi.q.tolist(),
             "mu_shift": fi.mu_shift}
            for fi in data.f
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_instance(path: str) -> MixedProblemData:
    with open(path) as fh:
        doc = json.load(fh)
    n = int(doc["n"])
    W = np.asarray(doc["W"], dtype=float)
    edges = tuple((i, j) for i in range(n) for j in range(i + 1, n) if W[i, j] != 0.0)
    gossip = GossipMatrix(n=n, W=W, edges=edges)

    def group(name):
        val = doc.get(name)
        if val is None:
            return None
        return [np.asarray(v, dtype=float) for v in val]

    A, b, C, c = group("A"), group("b"), group("C"), group("c")
    C_tilde, c_tilde = group("C_tilde"), group("c_tilde")
    oracles = []
    for spec in doc["objective"]:
        if spec["type"] != "quadratic":
            raise ValueError(f"unsupported objective type {spec['type']!r}")
        oracles.append(QuadraticOracle(np.asarray(spec["Q"], dtype=float),
                                       np.asarray(spec["q"], dtype=float),
                                       float(spec.get("mu_shift", 0.0))))
    # infer per-node x dims and the shared dim
    if A is not None:
        d = [Ai.shape[1] for Ai in A]
    elif C is not None:
        d = [Ci.shape[1] for Ci in C]
    else:
        d = [0] * n
    if C_tilde is not None:
        d_tilde = C_tilde[0].shape[1]
    else:
        d_tilde = oracles[0].dim - d[0]
    return MixedProblemData(n=n, d=d, d_tilde=d_tilde, f=oracles, W=gossip,
                            A=A, b=b, C=C, c=c, C_tilde=C_tilde, c_tilde=c_tilde)


# --- random generators -----------------------------------------------------


def random_quadratic(rng: np.random.Generator, dim: int, mu: float, L: float,
                     pin_extremes: bool = True) -> QuadraticOracle:
    """Random quadratic oracle with spectrum inside [mu, L]."""
    if dim == 1:
        lam = np.array([L if pin_extremes else rng.uniform(mu, L)])
    else:
        interior = np.exp(rng.uniform(np.log(mu), np.log(L), dim - 2)) if dim > 2 else np.array([])
        lam = np.concatenate([[mu, L], interior]) if pin_extremes else \
            np.exp(rng.uniform(np.log(mu), np.log(L), dim))
    V, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    Q = V @ np.diag(lam) @ V.T
    Q = 0.5 * (Q + Q.T)
    q = rng.standard_normal(dim)
    return QuadraticOracle(Q, q)


def random_mixed_instance(rng: np.random.Generator, regime: str, n: int = 3,
                          d: int = 2, d_tilde: int = 2, m: int = 2, p: int = 1,
                          p_tilde: int = 1, kappa_f: float = 10.0,
                          mu_f: float = 1.0,
                          gossip: GossipMatrix | None = None,
                          normalize: float | None = 1.0,
                          identical_blocks: bool = False) -> MixedProblemData:
    """Feasible random instance of the requested constraint regime.

    Right-hand sides are planted from a feasible point; the stack attains the
    objective condition number kappa_f exactly (extreme eigenvalues pinned on
    node 0).  With ``normalize``, the linear data (q, b, c, c_tilde) is scaled
    so the original-formulation optimum has that norm: iteration counts then
    measure the rate, not instance-size drift across condition sweeps.
    """
    if regime not in ("consensus", "shared", "coupled", "coupled_local", "mixed"):
        raise ValueError(f"unknown regime {regime!r}")
    W = gossip if gossip is not None else standard_topologies("path", n)
    L_f = kappa_f * mu_f
    has_x = regime in ("coupled", "coupled_local", "mixed")
    has_xt = regime in ("consensus", "shared", "mixed")
    dims_x = d if has_x else 0
    dims_xt = d_tilde if has_xt else 0

    oracles = []
    for i in range(n):
        block_dim = dims_x + dims_xt
        if i == 0:
            node = random_quadratic(rng, block_dim, mu_f, L_f, pin_extremes=True)
        else:
            node = random_quadratic(rng, block_dim, mu_f, L_f, pin_extremes=False)
        if has_x and has_xt:
            # keep the x / xtilde blocks uncoupled (per-block strong convexity)
            Q = node.Q.copy()
            Q[:dims_x, dims_x:] = 0.0
            Q[dims_x:, :dims_x] = 0.0
            node = QuadraticOracle(Q, node.q)
        oracles.append(node)

    xbar = [rng.standard_normal(dims_x) for _ in range(n)]
    xtbar = rng.standard_normal(dims_xt)

    A = b = C = c = C_tilde = c_tilde = None
    if regime in ("coupled", "coupled_local", "mixed"):
        if identical_blocks:
            A0 = rng.standard_normal((m, dims_x))
            A = [A0.copy() for _ in range(n)]
        else:
            A = [rng.standard_normal((m, dims_x)) for _ in range(n)]
        slack = [rng.standard_normal(m) for _ in range(n - 1)]
        slack.append(-np.sum(slack, axis=0) if n > 1 else np.zeros(m))
        b = [A[i] @ xbar[i] - slack[i] for i in range(n)]
    if regime in ("coupled_local", "mixed"):
        C = [rng.standard_normal((p, dims_x)) for _ in range(n)]
        c = [C[i] @ xbar[i] for i in range(n)]
    if regime in ("shared", "mixed"):
        C_tilde = [rng.standard_normal((p_tilde, dims_xt)) for _ in range(n)]
        c_tilde = [Ci @ xtbar for Ci in C_tilde]

    data = MixedProblemData(
        n=n, d=[dims_x] * n, d_tilde=dims_xt, f=oracles, W=W,
        A=A, b=b, C=C, c=c, C_tilde=C_tilde, c_tilde=c_tilde,
        meta={"planted_x": xbar, "planted_xt": xtbar, "kappa_f": kappa_f},
    )
    if normalize is not None:
        x_star, xt_star = _original_kkt(data)
        norm = float(np.linalg.norm(np.concatenate([x_star, xt_star])))
        if norm > 1e-12:
            s = normalize / norm
            for fi in data.f:
                fi.q *= s
            for group in (data.b, data.c, data.c_tilde):
                if group is not None:
                    for v in group:
                        np.multiply(v, s, out=v)
            data.meta["planted_x"] = [s * xb for xb in xbar]
            data.meta["planted_xt"] = s * xtbar
    return data


BUILDERS = {
    "consensus": build_consensus,
    "shared": build_shared,
    "coupled": build_coupled,
    "coupled_local": build_coupled_local,
    "mixed": build_mixed,
}
