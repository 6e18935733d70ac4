"""Matrix-free linear operators with a small composition algebra.

Every constraint matrix in this package (block-diagonal stacks of per-node
matrices, gossip liftings ``W (x) I``, scaled 2x2 block layouts, Chebyshev
wrappers) is represented as a :class:`LinearOperator`.  Operators are
immutable; the only mutable state is a :class:`CounterSet`, which belongs to
exactly one solve session.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DENSE_CAP = 4000
RANK_TOL = 1e-9

TAGS = ("A", "C", "C_tilde", "W", "B", "other")


class CapacityError(RuntimeError):
    """Operator too large to materialize under the desk-scale cap."""


@dataclass(frozen=True)
class SpectralBounds:
    """Certified bounds on the squared extreme singular values of an operator.

    ``sigma_max_sq`` upper-bounds sigma_max^2 and ``sigma_min_plus_sq``
    lower-bounds the smallest *positive* squared singular value.  Exact values
    (from a dense SVD) are valid bounds, which is how this package produces
    them at desk scale.
    """

    sigma_max_sq: float
    sigma_min_plus_sq: float

    def __post_init__(self):
        if not (self.sigma_max_sq >= self.sigma_min_plus_sq >= 0.0):
            raise ValueError(
                "need sigma_max_sq >= sigma_min_plus_sq >= 0, got "
                f"({self.sigma_max_sq}, {self.sigma_min_plus_sq})"
            )

    @property
    def kappa(self) -> float:
        """Condition number sigma_max^2 / sigma_min+^2 (1.0 for the zero map)."""
        if self.sigma_max_sq == 0.0:
            return 1.0
        if self.sigma_min_plus_sq <= 0.0:
            raise ValueError("kappa undefined: sigma_min_plus_sq = 0")
        return self.sigma_max_sq / self.sigma_min_plus_sq


class CounterSet:
    """Per-solve oracle call counters, keyed by operator tag.

    ``forward``/``adjoint`` count applies of tagged operators; gradient and
    subgradient evaluations land in ``grad_calls``.  A ``W`` apply in either
    direction is one communication round.
    """

    def __init__(self):
        self.forward = {t: 0 for t in TAGS}
        self.adjoint = {t: 0 for t in TAGS}
        self.grad_calls = 0

    def record_apply(self, tag: str):
        self.forward[tag] = self.forward.get(tag, 0) + 1

    def record_adjoint(self, tag: str):
        self.adjoint[tag] = self.adjoint.get(tag, 0) + 1

    def record_grad(self):
        self.grad_calls += 1

    def total(self, tag: str) -> int:
        return self.forward.get(tag, 0) + self.adjoint.get(tag, 0)

    @property
    def mul_A(self) -> int:
        return self.total("A")

    @property
    def mul_C(self) -> int:
        return self.total("C")

    @property
    def mul_Ctilde(self) -> int:
        return self.total("C_tilde")

    @property
    def communications(self) -> int:
        return self.total("W")

    @property
    def mul_B(self) -> int:
        return self.total("B")

    def snapshot(self) -> dict:
        return {
            "grad_calls": self.grad_calls,
            "mul_A": self.mul_A,
            "mul_C": self.mul_C,
            "mul_Ctilde": self.mul_Ctilde,
            "communications": self.communications,
            "mul_B": self.mul_B,
            "mul_B_forward": self.forward.get("B", 0),
            "mul_B_adjoint": self.adjoint.get("B", 0),
        }


class LinearOperator:
    """Abstract matrix with forward/adjoint apply and tree structure.

    Subclasses set ``rows``, ``cols``, ``tag`` and implement ``_apply`` and
    ``_adjoint_apply``.  ``children``/``with_children`` expose the composition
    tree so counters can be attached without mutating anything.
    """

    rows: int
    cols: int
    tag: str = "other"

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cols,):
            raise ValueError(f"expected length-{self.cols} vector, got shape {x.shape}")
        return self._apply(x)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.rows,):
            raise ValueError(f"expected length-{self.rows} vector, got shape {y.shape}")
        return self._adjoint_apply(y)

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint_apply(self, y):
        raise NotImplementedError

    def children(self) -> tuple:
        return ()

    def with_children(self, children: tuple) -> "LinearOperator":
        if children:
            raise ValueError("leaf operator has no children")
        return self

    def transform(self, fn) -> "LinearOperator":
        """Rebuild the tree bottom-up, passing every node through ``fn``."""
        kids = tuple(c.transform(fn) for c in self.children())
        return fn(self.with_children(kids) if kids else self)

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)


class DenseOperator(LinearOperator):
    """Dense matrix wrapped as an operator."""

    def __init__(self, matrix: np.ndarray, tag: str = "other"):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        self.matrix = matrix
        self.rows, self.cols = matrix.shape
        self.tag = tag

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint_apply(self, y):
        return self.matrix.T @ y


class IdentityOperator(LinearOperator):
    def __init__(self, n: int, tag: str = "other"):
        self.rows = self.cols = int(n)
        self.tag = tag

    def _apply(self, x):
        return x.copy()

    _adjoint_apply = _apply


class ZeroOperator(LinearOperator):
    def __init__(self, rows: int, cols: int, tag: str = "other"):
        self.rows, self.cols = int(rows), int(cols)
        self.tag = tag

    def _apply(self, x):
        return np.zeros(self.rows)

    def _adjoint_apply(self, y):
        return np.zeros(self.cols)


class ScaledOperator(LinearOperator):
    def __init__(self, inner: LinearOperator, scale: float):
        self.inner = inner
        self.scale = float(scale)
        self.rows, self.cols = inner.rows, inner.cols
        self.tag = "other"

    def _apply(self, x):
        return self.scale * self.inner.apply(x)

    def _adjoint_apply(self, y):
        return self.scale * self.inner.adjoint_apply(y)

    def children(self):
        return (self.inner,)

    def with_children(self, children):
        (inner,) = children
        return ScaledOperator(inner, self.scale)


class BlockDiagOperator(LinearOperator):
    """Per-node blocks stacked diagonally.

    A tag on the composite means one apply of the whole stack counts as a
    single (parallel, per-node) multiplication round.
    """

    def __init__(self, ops: list, tag: str = "other"):
        if not ops:
            raise ValueError("block_diag of an empty list")
        self.ops = tuple(ops)
        self.rows = sum(op.rows for op in ops)
        self.cols = sum(op.cols for op in ops)
        self._row_offsets = np.cumsum([0] + [op.rows for op in ops])
        self._col_offsets = np.cumsum([0] + [op.cols for op in ops])
        self.tag = tag

    def _apply(self, x):
        out = np.empty(self.rows)
        for op, r0, c0 in zip(self.ops, self._row_offsets, self._col_offsets):
            out[r0:r0 + op.rows] = op.apply(x[c0:c0 + op.cols])
        return out

    def _adjoint_apply(self, y):
        out = np.empty(self.cols)
        for op, r0, c0 in zip(self.ops, self._row_offsets, self._col_offsets):
            out[c0:c0 + op.cols] = op.adjoint_apply(y[r0:r0 + op.rows])
        return out

    def children(self):
        return self.ops

    def with_children(self, children):
        return BlockDiagOperator(list(children), tag=self.tag)


class BlockStackOperator(LinearOperator):
    """Grid of optional blocks with per-cell scalar scales.

    Absent cells act as zero blocks; row/column dimensions must be consistent
    across the grid.
    """

    def __init__(self, grid: list, scales=None):
        if not grid or not grid[0]:
            raise ValueError("empty block grid")
        nrows, ncols = len(grid), len(grid[0])
        if any(len(row) != ncols for row in grid):
            raise ValueError("ragged block grid")
        if scales is None:
            scales = [[1.0] * ncols for _ in range(nrows)]
        row_dims = [None] * nrows
        col_dims = [None] * ncols
        for i, row in enumerate(grid):
            for j, op in enumerate(row):
                if op is None:
                    continue
                if row_dims[i] is None:
                    row_dims[i] = op.rows
                elif row_dims[i] != op.rows:
                    raise ValueError(f"row {i}: inconsistent block heights")
                if col_dims[j] is None:
                    col_dims[j] = op.cols
                elif col_dims[j] != op.cols:
                    raise ValueError(f"column {j}: inconsistent block widths")
        if any(d is None for d in row_dims) or any(d is None for d in col_dims):
            raise ValueError("a grid row/column has no blocks; dimensions undetermined")
        self.grid = tuple(tuple(row) for row in grid)
        self.scales = tuple(tuple(float(s) for s in row) for row in scales)
        self._row_dims, self._col_dims = row_dims, col_dims
        self._row_offsets = np.cumsum([0] + row_dims)
        self._col_offsets = np.cumsum([0] + col_dims)
        self.rows = int(sum(row_dims))
        self.cols = int(sum(col_dims))
        self.tag = "other"

    def _apply(self, x):
        out = np.zeros(self.rows)
        for i, row in enumerate(self.grid):
            r0 = self._row_offsets[i]
            for j, op in enumerate(row):
                if op is None or self.scales[i][j] == 0.0:
                    continue
                c0 = self._col_offsets[j]
                out[r0:r0 + op.rows] += self.scales[i][j] * op.apply(x[c0:c0 + op.cols])
        return out

    def _adjoint_apply(self, y):
        out = np.zeros(self.cols)
        for i, row in enumerate(self.grid):
            r0 = self._row_offsets[i]
            for j, op in enumerate(row):
                if op is None or self.scales[i][j] == 0.0:
                    continue
                c0 = self._col_offsets[j]
                out[c0:c0 + op.cols] += self.scales[i][j] * op.adjoint_apply(y[r0:r0 + op.rows])
        return out

    def children(self):
        return tuple(op for row in self.grid for op in row if op is not None)

    def with_children(self, children):
        kids = list(children)
        grid = [[(kids.pop(0) if op is not None else None) for op in row] for row in self.grid]
        return BlockStackOperator(grid, [list(r) for r in self.scales])


class KronGossipOperator(LinearOperator):
    """(W (x) I_b) applied without materializing the Kronecker product.

    One apply corresponds to one communication round, so the tag is ``W``.
    """

    def __init__(self, W: np.ndarray, block_dim: int, tag: str = "W"):
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("W must be square")
        asym = np.abs(W - W.T).max() if W.size else 0.0
        scale = max(np.abs(W).max(), 1.0)
        if asym > 1e-12 * scale:
            raise ValueError(f"W is not symmetric (asymmetry {asym:.2e})")
        self.W = W
        self.block_dim = int(block_dim)
        self.n = W.shape[0]
        self.rows = self.cols = self.n * self.block_dim
        self.tag = tag

    def _apply(self, x):
        blocks = x.reshape(self.n, self.block_dim)
        return (self.W @ blocks).reshape(-1)

    # W symmetric, so the lifted operator is self-adjoint
    _adjoint_apply = _apply


class InstrumentedOperator(LinearOperator):
    """Wrapper incrementing a counter keyed by the wrapped operator's tag."""

    def __init__(self, inner: LinearOperator, counters: CounterSet, tag: str | None = None):
        self.inner = inner
        self.counters = counters
        self.rows, self.cols = inner.rows, inner.cols
        self.tag = inner.tag if tag is None else tag

    def _apply(self, x):
        self.counters.record_apply(self.tag)
        return self.inner.apply(x)

    def _adjoint_apply(self, y):
        self.counters.record_adjoint(self.tag)
        return self.inner.adjoint_apply(y)

    def children(self):
        return (self.inner,)

    def with_children(self, children):
        (inner,) = children
        return InstrumentedOperator(inner, self.counters, self.tag)


def block_diag(ops: list, tag: str = "other") -> LinearOperator:
    """Block-diagonal composition of operators (nonempty list)."""
    return BlockDiagOperator(ops, tag=tag)


def block_stack(grid: list, scales=None) -> LinearOperator:
    """Blocked layout with optional cells and per-cell scalar scales."""
    return BlockStackOperator(grid, scales)


def kron_gossip(W: np.ndarray, block_dim: int) -> LinearOperator:
    """Lift a symmetric gossip matrix to (W (x) I_block_dim)."""
    return KronGossipOperator(W, block_dim)


def instrumented(op: LinearOperator, counters: CounterSet, tag: str | None = None) -> LinearOperator:
    """Wrap ``op`` so every apply/adjoint_apply bumps the tag's counter."""
    return InstrumentedOperator(op, counters, tag)


def instrument_tree(op: LinearOperator, counters: CounterSet) -> LinearOperator:
    """Rebuild ``op`` wrapping every tagged node (tag != "other") with counters."""

    def wrap(node):
        if node.tag != "other" and not isinstance(node, InstrumentedOperator):
            return InstrumentedOperator(node, counters)
        return node

    return op.transform(wrap)


def materialize(op: LinearOperator, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    """Dense matrix of ``op`` via applies to identity columns (desk scale only)."""
    if max(op.rows, op.cols) > cap:
        raise CapacityError(
            f"operator is {op.rows}x{op.cols}; dense materialization capped at dimension {cap}"
        )
    if isinstance(op, DenseOperator):
        return op.matrix.copy()
    cols = np.empty((op.rows, op.cols))
    e = np.zeros(op.cols)
    for j in range(op.cols):
        e[j] = 1.0
        cols[:, j] = op.apply(e)
        e[j] = 0.0
    return cols


def spectral_bounds(op: LinearOperator, cap: int = DEFAULT_DENSE_CAP,
                    rank_tol: float = RANK_TOL) -> SpectralBounds:
    """Exact sigma_max^2 / sigma_min+^2 from a dense SVD of the operator.

    Singular values <= rank_tol * sigma_max are treated as zero.  The zero
    operator yields (0, 0).
    """
    dense = materialize(op, cap=cap)
    svals = np.linalg.svd(dense, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return SpectralBounds(0.0, 0.0)
    smax = svals[0]
    positive = svals[svals > rank_tol * smax]
    smin = positive[-1]
    return SpectralBounds(float(smax ** 2), float(smin ** 2))


def kernel_projector(op: LinearOperator, cap: int = DEFAULT_DENSE_CAP,
                     rank_tol: float = RANK_TOL) -> LinearOperator:
    """Orthogonal projector onto ker(op), from the dense nullspace basis."""
    dense = materialize(op, cap=cap)
    _, svals, vt = np.linalg.svd(dense)
    smax = svals[0] if svals.size else 0.0
    rank = int(np.sum(svals > rank_tol * smax)) if smax > 0 else 0
    null_basis = vt[rank:]
    return DenseOperator(null_basis.T @ null_basis)


def adjoint_mismatch(op: LinearOperator, rng: np.random.Generator, trials: int = 20) -> float:
    """Max relative defect |<Bu,v> - <u,B'v>| / (|u||v|) over random probes."""
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.cols)
        v = rng.standard_normal(op.rows)
        lhs = float(op.apply(u) @ v)
        rhs = float(u @ op.adjoint_apply(v))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return worst
