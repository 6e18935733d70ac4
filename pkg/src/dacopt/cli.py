"""Experiment runner: build instances, solve with oracle counters, sweep
condition numbers, fit log-log slopes, and verify the library invariants.

Subcommands: solve, sweep, spectrum, worstcase, check.  Exit status 0 on
success, 1 on solver failure, 2 on I/O or configuration errors.  CSV outputs
are byte-deterministic for a fixed config and seed; figures are rendered next
to them unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import conditioning as cond
from . import problems as prob
from . import worstcase as wc
from .network import path_for_kappa, standard_topologies
from .operators import DenseOperator, SpectralBounds, materialize, spectral_bounds
from .oracles import Box, L1Oracle, QuadraticOracle, SumOracle
from .problems import AffineProblem, BuildOptions, MixedProblemData, full_pipeline
from .reporting import (
    FitRefusedError,
    fit_loglog,
    render_solve_figure,
    render_sweep_figure,
    write_csv,
)
from .solvers import (
    DivergenceError,
    SlidingSchedule,
    StopRule,
    apapc,
    gradient_sliding,
    restarted_sliding,
    solve_convex_regularized,
)


class ConfigError(ValueError):
    pass


SOLVE_HEADER = [
    "regime", "method", "n", "dim", "eps", "target_accuracy",
    "kappa_f", "kappa_W", "kappa_B", "kappa_hat_A", "kappa_tilde_AC",
    "kappa_hat_Ct_T", "kappa_C",
    "iterations", "converged", "grad_calls", "mul_A", "mul_C", "mul_Ctilde",
    "communications", "mul_B", "final_residual", "final_distance",
]


def _load_config(path: str | None, overrides: dict) -> dict:
    config: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path) as fh:
            config = json.load(fh)
    config = dict(config)
    for key, val in overrides.items():
        if val is not None:
            config[key] = val
    return config


def _infer_regime(data: MixedProblemData) -> str:
    has_A, has_C, has_Ct = data.A is not None, data.C is not None, data.C_tilde is not None
    if has_Ct and (has_A or has_C):
        return "mixed"
    if has_Ct:
        return "shared"
    if has_A and has_C:
        return "coupled_local"
    if has_A:
        return "coupled"
    return "consensus"


def _generator_instance(spec: dict, rng: np.random.Generator) -> MixedProblemData:
    kwargs = dict(spec)
    regime = kwargs.pop("regime", "consensus")
    kappa_W = kwargs.pop("kappa_W", None)
    topology = kwargs.pop("topology", "path")
    n = kwargs.pop("n", 3)
    kappa_A = kwargs.pop("kappa_A", None)
    kappa_C = kwargs.pop("kappa_C", None)
    if kappa_W is not None:
        gossip = path_for_kappa(float(kappa_W))
        n = gossip.n
    else:
        gossip = standard_topologies(topology, n) if n > 1 else None
    data = prob.random_mixed_instance(rng, regime, n=n, gossip=gossip, **kwargs)
    if kappa_A is not None and data.A is not None:
        data = _plant_block_kappa(data, rng, "A", float(kappa_A))
    if kappa_C is not None and data.C is not None:
        data = _plant_block_kappa(data, rng, "C", float(kappa_C))
    return data


def _plant_block_kappa(data: MixedProblemData, rng, group: str, kappa: float) -> MixedProblemData:
    """Re-plant a constraint group with singular values spanning [1, sqrt(kappa)]."""
    mats = getattr(data, group)
    new = []
    for i, Mi in enumerate(mats):
        rows, cols = np.asarray(Mi).shape
        k = min(rows, cols)
        if k >= 2:
            sv = np.concatenate([[1.0, math.sqrt(kappa)],
                                 np.exp(rng.uniform(0, 0.5 * math.log(kappa), k - 2))])
        else:
            sv = np.array([math.sqrt(kappa) if i == 0 else 1.0])
        U, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
        V, _ = np.linalg.qr(rng.standard_normal((cols, cols)))
        new.append(U[:, :k] @ np.diag(sv) @ V[:, :k].T)
    planted = dict(A=data.A, b=data.b, C=data.C, c=data.c,
                   C_tilde=data.C_tilde, c_tilde=data.c_tilde)
    planted[group] = new
    # refresh right-hand sides from the planted feasible point
    xbar = data.meta["planted_x"]
    if group == "A":
        slack = [np.asarray(bi) - np.asarray(Ai) @ xb
                 for Ai, bi, xb in zip(data.A, data.b, xbar)]
        planted["b"] = [new[i] @ xbar[i] - slack[i] for i in range(data.n)]
    if group == "C":
        planted["c"] = [new[i] @ xbar[i] for i in range(data.n)]
    out = MixedProblemData(n=data.n, d=data.d, d_tilde=data.d_tilde, f=data.f,
                           W=data.W, meta=data.meta, **planted)
    # restore the unit-solution normalization after the re-plant
    x_star, xt_star = prob._original_kkt(out)
    norm = float(np.linalg.norm(np.concatenate([x_star, xt_star])))
    if norm > 1e-12:
        s = 1.0 / norm
        for fi in out.f:
            fi.q *= s
        for grp in (out.b, out.c, out.c_tilde):
            if grp is not None:
                for v in grp:
                    np.multiply(v, s, out=v)
    return out


def _l1_problem(spec: dict, rng: np.random.Generator) -> AffineProblem:
    """Nonsmooth toy: weight*|u|_1 (+ (mu/2)|u|^2) subject to a dense constraint."""
    dim = int(spec.get("dim", 2))
    Bd = np.asarray(spec["B"], dtype=float) if "B" in spec else \
        np.ones((1, dim)) / math.sqrt(dim)
    rhs = np.asarray(spec.get("b", [0.0] * Bd.shape[0]), dtype=float)
    radius = float(spec.get("box", 2.0))
    box = Box(-radius * np.ones(dim), radius * np.ones(dim))
    mu = float(spec.get("mu", 0.0))
    oracle = L1Oracle(dim, weight=float(spec.get("weight", 1.0)), domain=box)
    if mu > 0:
        from .oracles import ConstantsOverride

        quad = QuadraticOracle(mu * np.eye(dim), np.zeros(dim))
        oracle = ConstantsOverride(
            SumOracle([oracle, quad]),
            mu=mu,
            M=oracle.M + mu * radius * math.sqrt(dim),
            domain=box,
        )
    op = DenseOperator(Bd)
    bounds = spectral_bounds(op)
    K, b_prime = cond.chebyshev_operator(op, rhs, bounds)
    kb = spectral_bounds(K)
    return AffineProblem(objective=oracle, B=K, b=b_prime, bounds=kb,
                         u0=np.zeros(dim),
                         solution_hint=np.asarray(spec["hint"], dtype=float)
                         if "hint" in spec else None,
                         meta={"regime": "l1", "mu": mu, "kappa_w": 1.0,
                               "quadratic": False, "raw_B": op, "raw_b": rhs})


def _build_problem(config: dict, rng: np.random.Generator) -> AffineProblem:
    inst = config.get("instance")
    if inst is None:
        raise ConfigError("config needs an 'instance' entry")
    method = config.get("solver", {}).get("method", "apapc")
    nonsmooth = method in ("sliding", "sliding_restart")
    if "l1" in inst:
        return _l1_problem(inst["l1"], rng)
    if "file" in inst:
        path = inst["file"]
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        data = prob.load_instance(path)
    elif "generator" in inst:
        data = _generator_instance(inst["generator"], rng)
    elif "worstcase" in inst:
        spec = wc.WorstInstanceSpec(**inst["worstcase"])
        builder = wc.build_worst_shared if spec.kind == "shared_local" \
            else wc.build_worst_coupled_local
        data = builder(spec)
    else:
        raise ConfigError(f"unrecognized instance spec: {sorted(inst)}")
    regime = config.get("regime") or _infer_regime(data)
    options = full_pipeline()
    options.nonsmooth = nonsmooth
    options.penalize = not nonsmooth
    problem = prob.BUILDERS[regime](data, options)
    problem.meta["instance_meta"] = data.meta
    return problem


def _dispatch_solver(problem: AffineProblem, solver_cfg: dict,
                     target_accuracy: float | None):
    method = solver_cfg.get("method", "apapc")
    eps = float(solver_cfg.get("eps", 1e-6))
    R = float(solver_cfg.get("R", 1.0))
    max_iters = int(solver_cfg.get("max_iters", 200_000))
    overrides = solver_cfg.get("schedule_overrides", {})
    schedule = SlidingSchedule(**overrides) if overrides else SlidingSchedule()
    if method == "apapc":
        tol = target_accuracy if target_accuracy is not None else float(
            solver_cfg.get("tol", 1e-8))
        metric = "distance" if problem.solution_hint is not None else "fixed_point"
        return apapc(problem, stop=StopRule(max_iters=max_iters, tol=tol,
                                            metric=metric),
                     record_every=max(1, max_iters // 2000))
    if method == "apapc_regularized":
        return solve_convex_regularized(problem, eps, R, max_iters=max_iters)
    if method == "sliding":
        return gradient_sliding(problem, eps, R, schedule=schedule)
    if method == "sliding_restart":
        mu = float(solver_cfg.get("mu", problem.meta.get("mu", 0.0)))
        return restarted_sliding(problem, eps, mu, schedule=schedule,
                                 R0=solver_cfg.get("R0"))
    raise ConfigError(f"unknown solver method {method!r}")


def _solve_row(problem: AffineProblem, report, config: dict) -> list:
    meta = problem.meta
    solver_cfg = config.get("solver", {})
    hint = problem.solution_hint
    dist = float(np.linalg.norm(report.final_point - hint)) if hint is not None else None
    counters = report.counters
    return [
        meta.get("regime", ""), solver_cfg.get("method", "apapc"),
        meta.get("instance_meta", {}).get("n", meta.get("n", "")),
        problem.dim,
        solver_cfg.get("eps", ""), config.get("target_accuracy", ""),
        meta.get("instance_meta", {}).get("kappa_f", meta.get("kappa_f", "")),
        meta.get("kappa_w", ""),
        problem.bounds.kappa if problem.bounds.sigma_min_plus_sq > 0 else "",
        meta.get("kappa_hat_A", ""), meta.get("kappa_tilde_AC", ""),
        meta.get("kappa_hat_Ct_T", ""), meta.get("kappa_C", ""),
        report.iterations, report.converged,
        counters["grad_calls"], counters["mul_A"], counters["mul_C"],
        counters["mul_Ctilde"], counters["communications"], counters["mul_B"],
        report.final_residual, dist,
    ]


def run_solve(config: dict) -> tuple:
    seed = int(config.get("seed", 0))
    rng = np.random.default_rng(seed)
    problem = _build_problem(config, rng)
    target = config.get("target_accuracy")
    report = _dispatch_solver(problem, config.get("solver", {}),
                              float(target) if target is not None else None)
    row = _solve_row(problem, report, config)
    return problem, report, row


def cmd_solve(args) -> int:
    config = _load_config(args.config, {"seed": args.seed, "out": args.out})
    if args.eps is not None:
        config.setdefault("solver", {})["eps"] = args.eps
    problem, report, row = run_solve(config)
    out = config.get("out")
    if out:
        write_csv(out, SOLVE_HEADER, [row])
        if args.figures:
            render_solve_figure(report, _fig_path(out, "convergence"),
                                title=f"{problem.meta.get('regime', 'solve')}")
    print(f"method={config.get('solver', {}).get('method', 'apapc')} "
          f"regime={problem.meta.get('regime')} iterations={report.iterations} "
          f"converged={report.converged} residual={report.final_residual:.3e} "
          f"wall_time={report.wall_time:.3f}s")
    print("counters: " + ", ".join(f"{k}={v}" for k, v in report.counters.items()
                                   if not k.startswith("mul_B_")))
    if not report.converged and config.get("require_convergence", True) and \
            config.get("solver", {}).get("method", "apapc") == "apapc":
        print("solver failed to reach the requested accuracy", file=sys.stderr)
        return 1
    return 0


SWEEP_PARAMETERS = ("kappa_f", "kappa_W", "kappa_A_hat", "kappa_C",
                    "kappa_AC_tilde", "eps")


def _sweep_point_config(config: dict, parameter: str, value: float) -> dict:
    point = json.loads(json.dumps(config))  # deep copy, JSON-typed
    inst = point.get("instance", {})
    if parameter == "eps":
        point.setdefault("solver", {})["eps"] = value
    elif parameter == "kappa_f":
        inst.setdefault("generator", {})["kappa_f"] = value
    elif parameter == "kappa_W":
        if "generator" in inst:
            inst["generator"]["kappa_W"] = value
        elif "worstcase" in inst:
            inst["worstcase"]["kappa_W"] = value
        else:
            raise ConfigError("kappa_W sweeps need a generator or worstcase instance")
    elif parameter == "kappa_A_hat":
        inst.setdefault("generator", {})["kappa_A"] = value
    elif parameter == "kappa_C":
        if "generator" in inst:
            inst["generator"]["kappa_C"] = value
        else:
            inst.setdefault("worstcase", {})["kappa_C"] = value
    elif parameter == "kappa_AC_tilde":
        inst.setdefault("worstcase", {})["kappa_A"] = value
    else:
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    return point


DEFAULT_COUNTS = {"apapc": "grad_calls", "apapc_regularized": "grad_calls",
                  "sliding": "grad_calls", "sliding_restart": "grad_calls"}


def run_sweep(config: dict) -> tuple:
    sweep = config.get("sweep")
    if not sweep or "parameter" not in sweep or "grid" not in sweep:
        raise ConfigError("sweep config needs 'parameter' and 'grid'")
    parameter = sweep["parameter"]
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
    grid = [float(g) for g in sweep["grid"]]
    if len(grid) < 4 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("sweep grid must be strictly increasing with >= 4 points")
    metric = sweep.get("count", DEFAULT_COUNTS.get(
        config.get("solver", {}).get("method", "apapc"), "grad_calls"))
    rows, values = [], []
    for value in grid:
        point = _sweep_point_config(config, parameter, value)
        _, report, row = run_solve(point)
        counts = report.counters.get(metric)
        rows.append([parameter, value, metric, counts] + row)
        values.append(counts)
    try:
        fit = fit_loglog(grid, values)
    except FitRefusedError:
        raise
    return rows, grid, values, fit, metric


SWEEP_HEADER = ["parameter", "value", "metric", "count"] + SOLVE_HEADER


def cmd_sweep(args) -> int:
    config = _load_config(args.config, {"seed": args.seed, "out": args.out})
    rows, grid, values, fit, metric = run_sweep(config)
    out = config.get("out")
    if out:
        write_csv(out, SWEEP_HEADER, rows)
        if args.figures:
            render_sweep_figure(grid, values, fit, _fig_path(out, "fit"),
                                xlabel=config["sweep"]["parameter"], ylabel=metric,
                                title=f"{metric} vs {config['sweep']['parameter']}")
    print(f"sweep {config['sweep']['parameter']}: metric={metric} "
          f"slope={fit.slope:.4f} stderr={fit.stderr:.4f} points={fit.points}")
    return 0


def cmd_spectrum(args) -> int:
    config = _load_config(args.config, {"seed": args.seed, "out": args.out})
    rng = np.random.default_rng(int(config.get("seed", 0)))
    inst = config.get("instance", {})
    if "file" in inst:
        if not os.path.exists(inst["file"]):
            raise FileNotFoundError(inst["file"])
        data = prob.load_instance(inst["file"])
    elif "generator" in inst:
        data = _generator_instance(inst["generator"], rng)
    elif "worstcase" in inst:
        spec = wc.WorstInstanceSpec(**inst["worstcase"])
        data = wc.build_worst_shared(spec) if spec.kind == "shared_local" \
            else wc.build_worst_coupled_local(spec)
    else:
        raise ConfigError("spectrum needs an instance (file, generator or worstcase)")
    regime = config.get("regime") or _infer_regime(data)
    raw = prob.BUILDERS[regime](data, BuildOptions())
    pre = prob.BUILDERS[regime](data, full_pipeline())
    lines = [("regime", regime), ("n", data.n)]
    if data.n > 1:
        lines.append(("kappa_W", data.W.kappa))
    raw_bounds = raw.bounds
    lines += [
        ("sigma_max_sq_raw", raw_bounds.sigma_max_sq),
        ("sigma_min_plus_sq_raw", raw_bounds.sigma_min_plus_sq),
        ("kappa_B_raw", raw_bounds.kappa if raw_bounds.sigma_min_plus_sq > 0 else float("inf")),
        ("kappa_B_preconditioned",
         spectral_bounds(pre.B).kappa if pre.B.cols <= 400 else pre.bounds.kappa),
    ]
    for key in ("kappa_hat_A", "kappa_tilde_AC", "mu_tilde_AC", "kappa_hat_Ct_T", "kappa_C"):
        if key in raw.meta:
            lines.append((key, raw.meta[key]))
    for key, val in lines:
        print(f"{key} = {val}")
    if config.get("out"):
        write_csv(config["out"], [k for k, _ in lines], [[v for _, v in lines]])
    return 0


def cmd_worstcase(args) -> int:
    config = _load_config(args.config, {"seed": args.seed, "out": args.out})
    spec_dict = config.get("instance", {}).get("worstcase") or config.get("worstcase")
    if spec_dict is None:
        raise ConfigError("worstcase needs an instance.worstcase spec")
    spec = wc.WorstInstanceSpec(**spec_dict)
    data = wc.build_worst_shared(spec) if spec.kind == "shared_local" \
        else wc.build_worst_coupled_local(spec)
    out = config.get("out")
    if out is None:
        raise ConfigError("worstcase needs an output path (--out)")
    prob.save_instance(data, out)
    printable = {k: v for k, v in data.meta.items()
                 if isinstance(v, (int, float, str))}
    print(f"wrote {out}")
    for key in sorted(printable):
        print(f"{key} = {printable[key]}")
    return 0


# --- invariant suite -------------------------------------------------------


def _check_operators(rng) -> list:
    from .operators import (adjoint_mismatch, block_diag, block_stack,
                            kernel_projector, kron_gossip)
    results = []
    worst = 0.0
    for _ in range(20):
        blocks = [DenseOperator(rng.standard_normal((rng.integers(1, 4), rng.integers(1, 4))))
                  for _ in range(3)]
        op = block_diag(blocks)
        dense = np.zeros((op.rows, op.cols))
        r = c = 0
        for blk in blocks:
            dense[r:r + blk.rows, c:c + blk.cols] = blk.matrix
            r += blk.rows
            c += blk.cols
        x = rng.standard_normal(op.cols)
        worst = max(worst, np.linalg.norm(op.apply(x) - dense @ x) /
                    max(np.linalg.norm(dense @ x), 1e-30))
        worst = max(worst, adjoint_mismatch(op, rng, 5))
    results.append(("operators.block_diag_fidelity", worst < 1e-12, f"max rel err {worst:.2e}"))

    W = standard_topologies("path", 5).W
    K = kron_gossip(W, 3)
    ref = np.kron(W, np.eye(3))
    x = rng.standard_normal(15)
    err = np.linalg.norm(K.apply(x) - ref @ x)
    results.append(("operators.kron_gossip", err < 1e-12, f"err {err:.2e}"))

    M = DenseOperator(rng.standard_normal((2, 5)))
    P = kernel_projector(M)
    Pd = materialize(P)
    laws = max(np.abs(Pd @ Pd - Pd).max(), np.abs(Pd - Pd.T).max(),
               np.abs(materialize(M) @ Pd).max())
    results.append(("operators.kernel_projector", laws < 1e-10, f"law defect {laws:.2e}"))
    return results


def _check_conditioning(rng, trials: int) -> list:
    results = []
    n = 4
    fam = cond.MatrixFamily([np.eye(n)[:, [i]] for i in range(n)])
    k1 = cond.mixed_condition_number(fam)
    k2 = cond.mixed_condition_number(fam, transposed=True)
    ok = abs(k1 - n) < 1e-9 and abs(k2 - 1.0) < 1e-9
    results.append(("conditioning.coordinate_family", ok, f"kappa_hat=({k1:g},{k2:g})"))

    violations = 0
    for _ in range(trials):
        A = [rng.standard_normal((3, 4)) for _ in range(3)]
        Wg = standard_topologies("path", 3)
        bounds_A = spectral_bounds(DenseOperator(np.block(
            [[A[i] if i == j else np.zeros((3, 4)) for j in range(3)] for i in range(3)])))
        S_min = cond.lambda_min_plus(cond.interaction_matrix(cond.MatrixFamily(A)))
        beta_sq = cond.coupled_scaling(bounds_A, S_min, Wg.operator_bounds)
        Bd = np.hstack([np.block([[A[i] if i == j else np.zeros((3, 4)) for j in range(3)]
                                  for i in range(3)]),
                        math.sqrt(beta_sq) * np.kron(Wg.W, np.eye(3))])
        sv = np.linalg.svd(Bd, compute_uv=False)
        smin = sv[sv > 1e-9 * sv[0]][-1] ** 2
        if smin < S_min / 2 * (1 - 1e-9):
            violations += 1
    results.append(("conditioning.coupled_spectrum_lemma", violations == 0,
                    f"{violations}/{trials} violations"))

    worst_hi = 0.0
    for _ in range(trials):
        d = int(rng.integers(3, 7))
        kappa = float(10 ** rng.uniform(1, 3))
        sv = np.concatenate([[1.0, math.sqrt(kappa)],
                             rng.uniform(1, math.sqrt(kappa), d - 2)])
        U, _ = np.linalg.qr(rng.standard_normal((d, d)))
        V, _ = np.linalg.qr(rng.standard_normal((d, d)))
        Bd = U @ np.diag(sv) @ V.T
        op = DenseOperator(Bd)
        K, _ = cond.chebyshev_operator(op, np.zeros(d), spectral_bounds(op))
        kk = spectral_bounds(K).kappa
        worst_hi = max(worst_hi, kk)
    results.append(("conditioning.chebyshev_compression", worst_hi <= 3.1,
                    f"max kappa_K {worst_hi:.3f}"))
    return results


def _check_network(rng) -> list:
    results = []
    ok = True
    for kind in ("path", "cycle", "star", "complete"):
        g = standard_topologies(kind, 5)
        ok = ok and g.is_valid()
    results.append(("network.assumption_clauses", ok, "4 topologies"))
    target = 137.0
    g = path_for_kappa(target)
    err = abs(g.kappa - target) / target
    results.append(("network.path_for_kappa", err <= 1e-6, f"rel err {err:.2e}"))
    return results


def _check_solvers(rng) -> list:
    results = []
    data = prob.random_mixed_instance(rng, "coupled_local", n=3, d=2, m=2, p=1,
                                      kappa_f=8.0)
    problem = prob.build_coupled_local(data, full_pipeline())
    report = apapc(problem, stop=StopRule(max_iters=40_000, tol=1e-8,
                                          metric="distance"))
    dist = float(np.linalg.norm(report.final_point - problem.solution_hint))
    results.append(("solvers.apapc_vs_kkt", dist <= 1e-6, f"distance {dist:.2e}"))
    n_iters = report.iterations
    ok = (report.counters["grad_calls"] == n_iters
          and report.counters["mul_B_forward"] == n_iters
          and report.counters["mul_B_adjoint"] == n_iters)
    results.append(("solvers.apapc_oracle_accounting", ok,
                    f"N={n_iters}, counters={report.counters['grad_calls']}"))
    return results


def cmd_check(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    trials = 50 if args.deep else 10
    groups = (_check_operators(rng) + _check_conditioning(rng, trials)
              + _check_network(rng) + _check_solvers(rng))
    failed = 0
    for name, ok, detail in groups:
        print(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(groups) - failed}/{len(groups)} invariant groups passed")
    return 0 if failed == 0 else 1


def _fig_path(out: str, suffix: str) -> str:
    stem, _ = os.path.splitext(out)
    return f"{stem}_{suffix}.png"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dacopt",
        description="decentralized affine-constrained optimization runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--no-figures", dest="figures", action="store_false",
                       help="skip figure rendering next to CSV outputs")
        p.set_defaults(figures=True)

    for name, fn in (("solve", cmd_solve), ("sweep", cmd_sweep),
                     ("spectrum", cmd_spectrum), ("worstcase", cmd_worstcase)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(handler=fn)

    p = sub.add_parser("check", help="run the randomized invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deep", action="store_true", help="more sampled instances")
    p.set_defaults(handler=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except DivergenceError as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
