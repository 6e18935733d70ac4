"""Acceptance suite: one test per exit criterion, each printing a PASS line
with the measured quantities once its assertions hold.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; the whole suite is also what ``pytest`` runs by default.
"""

import json
import math

import numpy as np
import pytest

from conftest import random_with_kappa

from dacopt.cli import main as cli_main, run_solve, run_sweep
from dacopt.conditioning import (
    MatrixFamily,
    chebyshev_degree,
    chebyshev_operator,
    interaction_matrix,
    lambda_min_plus,
    mixed_condition_number,
    projected_condition_number,
)
from dacopt.network import path_for_kappa, standard_topologies
from dacopt.operators import (
    CounterSet,
    DenseOperator,
    SpectralBounds,
    instrument_tree,
    instrumented,
    materialize,
    spectral_bounds,
)
from dacopt.oracles import Box, ConstantsOverride, L1Oracle, QuadraticOracle, SumOracle
from dacopt.problems import (
    BUILDERS,
    AffineProblem,
    BuildOptions,
    full_pipeline,
    nonsmooth_strongly_convex_penalty_config,
    random_mixed_instance,
)
from dacopt.reporting import fit_loglog
from dacopt.solvers import (
    SlidingSchedule,
    StopRule,
    apapc,
    gradient_sliding,
    restarted_sliding,
    solve_convex_regularized,
)
from dacopt.worstcase import WorstInstanceSpec, build_worst_shared, nesterov_rho


def report(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS - {detail}")


REGIMES = ("consensus", "shared", "coupled", "coupled_local", "mixed")


def test_criterion_01_apapc_exactness():
    """20 random strongly convex instances per regime match the dense KKT
    solution to 1e-6 relative."""
    worst = 0.0
    total = 0
    for regime in REGIMES:
        for trial in range(20):
            n = (3, 6, 9)[trial % 3]
            rng = np.random.default_rng(1000 + 100 * total + trial)
            data = random_mixed_instance(rng, regime, n=n, d=2, d_tilde=2,
                                         m=1, p=1, p_tilde=1,
                                         kappa_f=float(rng.uniform(2, 30)))
            problem = BUILDERS[regime](data, full_pipeline())
            hint = problem.solution_hint
            scale = np.linalg.norm(hint)
            stop = StopRule(max_iters=200_000, tol=0.5e-6 * scale, metric="distance")
            rep = apapc(problem, stop=stop)
            rel = np.linalg.norm(rep.final_point - hint) / scale
            assert rep.converged, f"{regime} n={n} trial={trial} did not converge"
            assert rel <= 1e-6, f"{regime} n={n} trial={trial}: rel={rel:.2e}"
            worst = max(worst, rel)
            total += 1
    report(1, f"{total} solves across {len(REGIMES)} regimes, worst relative error {worst:.2e}")


def test_criterion_02_kappa_f_scaling():
    """Gradient calls to reach 1e-8 scale like sqrt(kappa_f)."""
    config = {
        "instance": {"generator": {"regime": "consensus", "n": 3, "d_tilde": 2}},
        "solver": {"method": "apapc", "max_iters": 400_000},
        "sweep": {"parameter": "kappa_f",
                  "grid": [4.0, 16.0, 64.0, 256.0, 1024.0],
                  "count": "grad_calls"},
        "target_accuracy": 1e-8,
        "seed": 0,
    }
    rows, grid, values, fit, metric = run_sweep(config)
    assert abs(fit.slope - 0.5) <= 0.15, f"slope {fit.slope:.3f}"
    report(2, f"grad_calls slope {fit.slope:.3f} +/- {fit.stderr:.3f} over kappa_f {grid}")


def test_criterion_03_kappa_w_scaling():
    """Communication rounds on a coupled instance scale like sqrt(kappa_W).

    The per-node data is one fixed prototype replicated across the (growing)
    path, so only the network conditioning varies along the grid.
    """
    from dacopt.problems import MixedProblemData

    rng = np.random.default_rng(77)
    A0 = rng.standard_normal((2, 2))
    V, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    Q0 = V @ np.diag([1.0, 8.0]) @ V.T
    q0 = rng.standard_normal(2)
    xbar = rng.standard_normal(2)
    grid = [4.0, 16.0, 64.0, 256.0]
    counts = []
    for kw in grid:
        gossip = path_for_kappa(kw)
        n = gossip.n
        data = MixedProblemData(
            n=n, d=[2] * n, d_tilde=0,
            f=[QuadraticOracle(Q0.copy(), q0.copy()) for _ in range(n)],
            W=gossip, A=[A0.copy() for _ in range(n)],
            b=[A0 @ xbar for _ in range(n)])
        problem = BUILDERS["coupled"](data, full_pipeline())
        scale = np.linalg.norm(problem.solution_hint)
        rep = apapc(problem, stop=StopRule(max_iters=200_000, tol=1e-8 * scale,
                                           metric="distance"), record_every=10 ** 9)
        assert rep.converged
        counts.append(rep.counters["communications"])
    fit = fit_loglog(grid, counts)
    assert abs(fit.slope - 0.5) <= 0.15, f"slope {fit.slope:.3f} counts={counts}"
    report(3, f"communications slope {fit.slope:.3f} over kappa_W {grid} (counts {counts})")


def test_criterion_04_condition_number_conventions():
    """Coordinate family gives exactly (n, 1); projected variant honors the
    D = 0 and invertible-D conventions exactly."""
    n = 6
    fam = MatrixFamily([np.eye(n)[:, [i]] for i in range(n)])
    k_hat = mixed_condition_number(fam)
    k_hat_T = mixed_condition_number(fam, transposed=True)
    assert abs(k_hat - n) <= 1e-12 * n
    assert abs(k_hat_T - 1.0) <= 1e-12
    rng = np.random.default_rng(4)
    B = [rng.standard_normal((2, 3)) for _ in range(3)]
    mu0, kt0 = projected_condition_number(MatrixFamily(B),
                                          MatrixFamily([np.zeros((1, 3))] * 3))
    assert kt0 == mixed_condition_number(MatrixFamily(B))
    D_inv = [rng.standard_normal((3, 3)) + 4 * np.eye(3) for _ in range(3)]
    mu1, kt1 = projected_condition_number(MatrixFamily(B), MatrixFamily(D_inv))
    assert mu1 == 0.0 and kt1 == 1.0
    report(4, f"kappa_hat = ({k_hat:.15g}, {k_hat_T:.15g}); D=0 gives kappa_hat "
              f"bit-exact; invertible D gives (0, 1)")


def _dense_block_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r:r + m.shape[0], c:c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def test_criterion_05_spectral_lemma_certification():
    """50 randomized instances per scaling lemma, zero violations."""
    from dacopt.conditioning import (coupled_scaling, identical_local_scaling,
                                     mixed_scaling)

    rng = np.random.default_rng(5)
    gossip = standard_topologies("path", 3)
    W = gossip.W
    kappa_W = gossip.kappa
    violations = {"coupled": 0, "mixed_pos": 0, "mixed_zero": 0, "identical": 0}

    def sv_bounds(M):
        sv = np.linalg.svd(M, compute_uv=False)
        pos = sv[sv > 1e-9 * sv[0]]
        return SpectralBounds(sv[0] ** 2, pos[-1] ** 2)

    for _ in range(50):
        A = [rng.standard_normal((2, 3)) for _ in range(3)]
        Abd = _dense_block_diag(A)
        bounds_A = sv_bounds(Abd)
        S_min = lambda_min_plus(interaction_matrix(MatrixFamily(A)))
        beta_sq = coupled_scaling(bounds_A, S_min, gossip.operator_bounds)
        Bd = np.hstack([Abd, math.sqrt(beta_sq) * np.kron(W, np.eye(2))])
        sv = np.linalg.svd(Bd, compute_uv=False)
        if sv[sv > 1e-9 * sv[0]][-1] ** 2 < S_min / 2 * (1 - 1e-9):
            violations["coupled"] += 1
        if sv[0] ** 2 > (bounds_A.sigma_max_sq
                         + (bounds_A.sigma_max_sq + S_min) * kappa_W ** 2) * (1 + 1e-9):
            violations["coupled"] += 1

    for case in ("mixed_pos", "mixed_zero"):
        for _ in range(50):
            A = [rng.standard_normal((2, 4)) for _ in range(3)]
            if case == "mixed_pos":
                C = [rng.standard_normal((1, 4)) for _ in range(3)]
            else:
                C = [rng.standard_normal((4, 4)) + 4 * np.eye(4) for _ in range(3)]
            mu_tilde, _ = projected_condition_number(MatrixFamily(A), MatrixFamily(C))
            if case == "mixed_pos" and mu_tilde == 0.0:
                continue
            Abd, Cbd = _dense_block_diag(A), _dense_block_diag(C)
            L_S = np.linalg.svd(np.hstack(A), compute_uv=False)[0] ** 2 / 3
            coeffs = mixed_scaling(sv_bounds(Abd), mu_tilde, L_S, sv_bounds(Cbd),
                                   gossip.operator_bounds)
            top = np.hstack([Abd, math.sqrt(coeffs.alpha_sq) * np.kron(W, np.eye(2))])
            bottom = np.hstack([math.sqrt(coeffs.beta_sq) * Cbd,
                                np.zeros((Cbd.shape[0], 6))])
            Bd = np.vstack([top, bottom])
            sv = np.linalg.svd(Bd, compute_uv=False)
            smin = sv[sv > 1e-9 * sv[0]][-1] ** 2
            target = 0.25 * mu_tilde if case == "mixed_pos" else sv_bounds(Abd).sigma_max_sq
            if smin < target * (1 - 1e-9):
                violations[case] += 1

    for _ in range(50):
        A = [rng.standard_normal((2, 3)) for _ in range(3)]
        Ct = rng.standard_normal((2, 4))
        ct_b = sv_bounds(Ct)
        coeffs = identical_local_scaling(MatrixFamily(A), ct_b, gossip.operator_bounds)
        kappa_hat_A = mixed_condition_number(MatrixFamily(A))
        B1 = math.sqrt(coeffs.alpha_sq) * np.hstack(
            [_dense_block_diag(A), math.sqrt(coeffs.beta_sq) * np.kron(W, np.eye(2))])
        B2 = np.vstack([_dense_block_diag([Ct] * 3),
                        math.sqrt(coeffs.gamma_sq) * np.kron(W, np.eye(4))])
        Bd = np.block([
            [B1, np.zeros((B1.shape[0], B2.shape[1]))],
            [np.zeros((B2.shape[0], B1.shape[1])), B2],
        ])
        sv = np.linalg.svd(Bd, compute_uv=False)
        smin = sv[sv > 1e-9 * sv[0]][-1] ** 2
        if smin < ct_b.sigma_min_plus_sq * (1 - 1e-9):
            violations["identical"] += 1
        cap = 4 * (ct_b.sigma_max_sq
                   + ct_b.sigma_min_plus_sq * kappa_W ** 2 * (kappa_hat_A + 1))
        if sv[0] ** 2 > cap * (1 + 1e-9):
            violations["identical"] += 1

    assert all(v == 0 for v in violations.values()), violations
    report(5, f"certified sigma bounds on 50 instances per lemma, violations {violations}")


def test_criterion_06_chebyshev_compression():
    """50 random operators, kappa_B in [10, 1e4]: kappa_K <= 3.1, exact
    degree, solution-set preservation below 1e-8."""
    rng = np.random.default_rng(6)
    worst_kappa = 0.0
    worst_resid = 0.0
    for _ in range(50):
        d = int(rng.integers(3, 9))
        kappa = float(10 ** rng.uniform(1, 4))
        M = random_with_kappa(rng, d, d, kappa)
        op = DenseOperator(M)
        bounds = spectral_bounds(op)
        ustar = rng.standard_normal(d)
        K, bp = chebyshev_operator(op, M @ ustar, bounds)
        assert K.degree == math.ceil(math.sqrt(bounds.kappa) - 1e-9)
        kb = spectral_bounds(K)
        assert math.sqrt(kb.sigma_min_plus_sq) >= 11 / 15 - 1e-9
        assert math.sqrt(kb.sigma_max_sq) <= 19 / 15 + 1e-9
        assert kb.kappa <= 3.1
        resid = float(np.linalg.norm(K.apply(ustar) - bp))
        assert resid <= 1e-8
        worst_kappa = max(worst_kappa, kb.kappa)
        worst_resid = max(worst_resid, resid)
    report(6, f"50 operators: max kappa_K {worst_kappa:.3f} <= 3.1, "
              f"max preservation residual {worst_resid:.1e}")


def _projected_hessian(problem, subspaces):
    dim = problem.dim
    g0 = problem.objective.gradient(np.zeros(dim))
    H = np.column_stack([problem.objective.gradient(np.eye(dim)[j]) - g0
                         for j in range(dim)])
    Z = subspaces
    Hp = Z.T @ (0.5 * (H + H.T)) @ Z
    return np.linalg.eigvalsh(0.5 * (Hp + Hp.T))


def _zero_sum_basis(n, m):
    ones = np.kron(np.ones((1, n)), np.eye(m))
    _, _, vt = np.linalg.svd(ones)
    return vt[m:].T


def test_criterion_07_penalized_strong_convexity():
    """Penalized Hessian extremes match the lemma constants on quadratic
    instances: mu_f/4 and 2 L_f kappa_W^2 for the smooth coupled penalty;
    mu_f/2 for the nonsmooth configuration on the restricted product."""
    rng = np.random.default_rng(7)
    for trial in range(10):
        data = random_mixed_instance(rng, "coupled", n=3, d=2, m=2,
                                     kappa_f=float(rng.uniform(2, 20)))
        problem = BUILDERS["coupled"](data, full_pipeline())
        mu_f, L_f = problem.meta["mu_f"], problem.meta["L_f"]
        kw = problem.meta["kappa_w_used"]
        dx = problem.meta["slices"]["x"][1]
        dy = problem.dim - dx
        m = dy // 3
        perp = _zero_sum_basis(3, m)
        Z = np.zeros((problem.dim, dx + perp.shape[1]))
        Z[:dx, :dx] = np.eye(dx)
        Z[dx:, dx:] = perp
        eig = _projected_hessian(problem, Z)
        assert eig[0] >= mu_f / 4 * (1 - 1e-9), f"trial {trial}: {eig[0]} vs {mu_f / 4}"
        assert eig[-1] <= 2 * L_f * kw ** 2 * (1 + 1e-9)

    # nonsmooth configuration: full mixed constraint, penalty r^2-style
    for trial in range(10):
        data = random_mixed_instance(rng, "mixed", n=3, d=2, d_tilde=2, m=1,
                                     p=1, p_tilde=1, kappa_f=8.0)
        options = full_pipeline()
        options.nonsmooth = True
        options.penalize = False
        problem = BUILDERS["mixed"](data, options)
        mu_f = problem.meta["mu_f"]
        A_blocks = _dense_block_diag([np.asarray(a) for a in data.A])
        svA = np.linalg.svd(A_blocks, compute_uv=False)
        A_bounds = SpectralBounds(svA[0] ** 2, svA[svA > 1e-9 * svA[0]][-1] ** 2)
        M_nominal = 5.0
        _, r, eps_checked = nonsmooth_strongly_convex_penalty_config(
            M_nominal, mu_f, A_bounds,
            SpectralBounds(problem.meta["kappa_w_used"] ** 2, 1.0),
            eps=1e-6, B=problem.bounds)
        rho_pen = 2.0 * r ** 2 / eps_checked
        Kd = materialize(problem.B)
        g0 = problem.objective.gradient(np.zeros(problem.dim))
        H_F = np.column_stack([problem.objective.gradient(np.eye(problem.dim)[j]) - g0
                               for j in range(problem.dim)])
        H = 0.5 * (H_F + H_F.T) + rho_pen * Kd.T @ Kd
        xs = problem.meta["slices"]
        dx, dy = xs["x"][1], xs["y"][1] - xs["y"][0]
        dxt = problem.dim - xs["xt"][0]
        m = dy // 3
        perp = _zero_sum_basis(3, m)
        Z = np.zeros((problem.dim, dx + perp.shape[1] + dxt))
        Z[:dx, :dx] = np.eye(dx)
        Z[xs["y"][0]:xs["y"][1], dx:dx + perp.shape[1]] = perp
        Z[xs["xt"][0]:, dx + perp.shape[1]:] = np.eye(dxt)
        eig = np.linalg.eigvalsh(Z.T @ H @ Z)
        assert eig[0] >= mu_f / 2 * (1 - 1e-9), f"trial {trial}: {eig[0]} vs {mu_f / 2}"
    report(7, "projected Hessians: smooth penalty in [mu_f/4, 2 L_f kappa_W^2], "
              "nonsmooth configuration >= mu_f/2 on the restricted product")


def _l1_line_problem():
    dim = 2
    box = Box(-2.0 * np.ones(dim), 2.0 * np.ones(dim))
    oracle = L1Oracle(dim, domain=box)
    op = DenseOperator(np.ones((1, 2)))
    bounds = spectral_bounds(op)
    K, bp = chebyshev_operator(op, np.ones(1), bounds)
    return AffineProblem(objective=oracle, B=K, b=bp, bounds=spectral_bounds(K),
                         u0=np.zeros(dim),
                         meta={"raw": (np.ones((1, 2)), np.ones(1))})


def _strongly_convex_l1_problem():
    dim = 1
    rad = 2.0
    box = Box(-rad * np.ones(dim), rad * np.ones(dim))
    l1 = L1Oracle(dim, domain=box)
    quad = QuadraticOracle(np.eye(dim), np.zeros(dim))
    oracle = ConstantsOverride(SumOracle([l1, quad]), mu=1.0,
                               M=l1.M + rad * math.sqrt(dim), domain=box)
    op = DenseOperator(np.eye(1))
    K, bp = chebyshev_operator(op, np.zeros(1), spectral_bounds(op))
    return AffineProblem(objective=oracle, B=K, b=bp, bounds=spectral_bounds(K),
                         u0=np.full(dim, 1.5), meta={})


def test_criterion_08_nonsmooth_rates():
    """Subgradient and constraint-multiplication counts scale with the
    advertised exponents over an accuracy sweep."""
    grid = [1e-1, 3e-2, 1e-2, 3e-3]
    sub_counts, b_counts = [], []
    for eps in grid:
        problem = _l1_line_problem()
        rep = gradient_sliding(problem, eps=eps, R=2.0)
        sub_counts.append(rep.counters["grad_calls"])
        b_counts.append(rep.counters["mul_B"])
        # accuracy contract at every sweep point
        u = rep.final_point
        assert np.abs(u).sum() - 1.0 <= eps
    fit_sub = fit_loglog([1.0 / e for e in grid], sub_counts)
    fit_b = fit_loglog([1.0 / e for e in grid], b_counts)
    assert abs(fit_sub.slope - 2.0) <= 0.3, f"subgradient slope {fit_sub.slope:.3f}"
    assert abs(fit_b.slope - 1.0) <= 0.2, f"mul_B slope {fit_b.slope:.3f}"

    rsub, rb = [], []
    for eps in grid:
        problem = _strongly_convex_l1_problem()
        rep = restarted_sliding(problem, eps=eps, mu=1.0)
        rsub.append(rep.counters["grad_calls"])
        rb.append(rep.counters["mul_B"])
        assert abs(rep.final_point[0]) + 0.5 * rep.final_point[0] ** 2 <= eps
    fit_rsub = fit_loglog([1.0 / e for e in grid], rsub)
    fit_rb = fit_loglog([1.0 / e for e in grid], rb)
    assert abs(fit_rsub.slope - 1.0) <= 0.2, f"restarted subgradient slope {fit_rsub.slope:.3f}"
    assert abs(fit_rb.slope - 0.5) <= 0.15, f"restarted mul_B slope {fit_rb.slope:.3f}"
    report(8, f"convex: subgrad {fit_sub.slope:.2f} (target -2), mul_B {fit_b.slope:.2f} "
              f"(target -1); strongly convex: subgrad {fit_rsub.slope:.2f} (target -1), "
              f"mul_B {fit_rb.slope:.2f} (target -0.5); slopes vs 1/eps")


def test_criterion_09_convex_smooth_reduction():
    """Regularized APAPC meets the gap and feasibility contracts on random
    convex quadratics at eps in {1e-2, 1e-3}."""
    checked = 0
    worst_gap_ratio = 0.0
    worst_feas_ratio = 0.0
    for trial in range(20):
        rng = np.random.default_rng(900 + trial)
        d = 5
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        lam = np.concatenate([[0.0], rng.uniform(0.3, 3.0, d - 1)])
        Q = U @ np.diag(lam) @ U.T
        Q = 0.5 * (Q + Q.T)
        q = rng.standard_normal(d)
        Bd = rng.standard_normal((2, d))
        b = Bd @ rng.standard_normal(d)
        op = DenseOperator(Bd)
        K, bp = chebyshev_operator(op, b, spectral_bounds(op))
        oracle = QuadraticOracle(Q, q)
        problem = AffineProblem(objective=oracle, B=K, b=bp,
                                bounds=spectral_bounds(K), u0=np.zeros(d),
                                meta={"quadratic": True})
        # dense constrained optimum for the gap reference
        s = Bd.shape[0]
        KKT = np.block([[Q, Bd.T], [Bd, np.zeros((s, s))]])
        sol = np.linalg.lstsq(KKT, np.concatenate([-q, b]), rcond=None)[0]
        gstar = oracle.value(sol[:d])
        eps = (1e-2, 1e-3)[trial % 2]
        rep = solve_convex_regularized(problem, eps=eps, R=4.0)
        gap = oracle.value(rep.final_point) - gstar
        feas = float(np.linalg.norm(Bd @ rep.final_point - b))
        sigma_max = math.sqrt(spectral_bounds(op).sigma_max_sq)
        assert gap <= eps, f"trial {trial}: gap {gap:.2e} > {eps}"
        assert feas <= 10 * sigma_max * eps, f"trial {trial}: residual {feas:.2e}"
        worst_gap_ratio = max(worst_gap_ratio, gap / eps)
        worst_feas_ratio = max(worst_feas_ratio, feas / (10 * sigma_max * eps))
        checked += 1
    report(9, f"{checked} convex quadratics: max gap / eps = {worst_gap_ratio:.2f}, "
              f"max residual / cap = {worst_feas_ratio:.2f}")


def test_criterion_10_worst_case_structure():
    """The shared worst instance at T = 64: measured family condition numbers
    equal targets within rho^T and the solver's t-block decays at 1/rho."""
    spec = WorstInstanceSpec(kind="shared_local", kappa_f=16.0, kappa_C=30.0,
                             truncation=64, n=3)
    data = build_worst_shared(spec)
    rho = data.meta["rho"]
    tail = rho ** spec.truncation
    assert abs(data.meta["measured_L_C"] - 30.0) <= max(tail, 1e-9) * 30.0
    assert abs(data.meta["measured_mu_C"] - 1.0) <= max(tail, 1e-9)

    problem = BUILDERS["shared"](data, full_pipeline())
    scale = np.linalg.norm(problem.solution_hint)
    rep = apapc(problem, stop=StopRule(max_iters=300_000, tol=1e-10 * (1 + scale),
                                       metric="distance"), record_every=10 ** 9)
    assert rep.converged
    T = spec.truncation
    t0, t1 = data.meta["t_slice"]
    t_block = rep.final_point[t0:t1]
    ratios = t_block[:-1] / t_block[1:]
    ks = np.arange(1, T)
    tols = 10 * rho ** (T - ks)
    sel = slice(1, T // 2)
    errs = np.abs(ratios[sel] - 1.0 / rho)
    assert np.all(errs <= tols[sel]), f"max err {errs.max():.2e}"
    report(10, f"rho = {rho:.6f}; measured (L_C, mu_C) exact to {tail:.1e}; "
               f"t-ratio error max {errs.max():.2e} within 10 rho^(T-k)")


def test_criterion_11_determinism_and_counters(tmp_path):
    """Byte-identical CSV across reruns; closed-form oracle accounting."""
    config = {
        "instance": {"generator": {"regime": "coupled_local", "n": 3, "d": 2,
                                   "m": 1, "p": 1, "kappa_f": 6.0}},
        "solver": {"method": "apapc", "max_iters": 100_000},
        "target_accuracy": 1e-7,
        "seed": 11,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(config))
    out1, out2 = str(tmp_path / "r1.csv"), str(tmp_path / "r2.csv")
    assert cli_main(["solve", "--config", str(cfg_path), "--out", out1,
                     "--no-figures"]) == 0
    assert cli_main(["solve", "--config", str(cfg_path), "--out", out2,
                     "--no-figures"]) == 0
    b1, b2 = open(out1, "rb").read(), open(out2, "rb").read()
    assert b1 == b2

    # per-iteration accounting: one gradient, one forward and one adjoint B
    rng = np.random.default_rng(11)
    data = random_mixed_instance(rng, "coupled", n=3, d=2, m=1, kappa_f=5.0)
    problem = BUILDERS["coupled"](data, full_pipeline())
    rep = apapc(problem, stop=StopRule(max_iters=123, metric="none"))
    assert rep.counters["grad_calls"] == 123
    assert rep.counters["mul_B_forward"] == 123
    assert rep.counters["mul_B_adjoint"] == 123

    # Chebyshev wrapping multiplies inner counts by exactly the degree
    from dacopt.conditioning import ChebyshevOperator

    M = random_with_kappa(rng, 4, 4, 50.0)
    counters = CounterSet()
    inner = instrumented(DenseOperator(M, tag="A"), counters)
    bounds = spectral_bounds(DenseOperator(M))
    K = ChebyshevOperator(inner, bounds)
    for _ in range(3):
        K.apply(rng.standard_normal(4))
    assert counters.forward["A"] == 3 * K.degree
    assert counters.adjoint["A"] == 3 * K.degree
    report(11, f"CSV bytes identical across reruns ({len(b1)} bytes); "
               f"APAPC counters = N exactly; Chebyshev multiplies inner counts "
               f"by its degree {K.degree}")
