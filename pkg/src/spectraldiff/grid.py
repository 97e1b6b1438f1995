"""Uniform grids, finite-difference assembly and sparse-access oracles.

Operators have the form ``-sum_i d/dx_i (a_i d/dx_i) + a_0`` on the box
``(L, U)^d`` with Dirichlet boundaries.  Coefficient fields are callables
taking an ``(M, d)`` array of points and returning ``M`` values.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

Field = Callable[[np.ndarray], np.ndarray]


class AssemblyError(RuntimeError):
    """A coefficient field could not be evaluated at a grid point."""


class PositivityWarning(UserWarning):
    """A diffusion coefficient is non-positive at a sampled point."""


@dataclass(frozen=True)
class DomainBox:
    lower: float
    upper: float
    dim: int = 1

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError(f"upper ({self.upper}) must exceed lower ({self.lower})")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class OperatorSpec:
    domain: DomainBox
    a0: Field
    a: Sequence[Field]
    name: str = "operator"

    def __post_init__(self):
        if len(self.a) != self.domain.dim:
            raise ValueError(f"need {self.domain.dim} diffusion fields, got {len(self.a)}")


@dataclass(frozen=True)
class UniformGrid:
    domain: DomainBox
    n_gr: int

    def __post_init__(self):
        if self.n_gr < 1:
            raise ValueError("n_gr must be >= 1")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def h(self) -> float:
        return self.domain.width / (self.n_gr + 1)

    @property
    def total(self) -> int:
        return self.n_gr ** self.dim

    def axis(self) -> np.ndarray:
        """Node coordinates ``(j + 1) h + L`` for ``j`` in ``[n_gr]_0``."""
        return (np.arange(self.n_gr) + 1) * self.h + self.domain.lower

    def half_axis(self) -> np.ndarray:
        """Half-step coordinates ``(m + 1/2) h + L`` for ``m = 0..n_gr``.

        Node ``j`` has left half-step ``m = j`` and right half-step ``m = j + 1``.
        """
        return (np.arange(self.n_gr + 1) + 0.5) * self.h + self.domain.lower

    def multi_indices(self) -> np.ndarray:
        """All multi-indices, shape ``(N_gr, d)``, row ``J`` holds ``J^{-1}(J)``."""
        J = np.arange(self.total)
        return np.stack([(J // self.n_gr**i) % self.n_gr for i in range(self.dim)], axis=1)

    def points(self) -> np.ndarray:
        return self.axis()[self.multi_indices()]


@dataclass
class GridVector:
    values: np.ndarray
    grid: UniformGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.total,):
            raise ValueError(f"expected {self.grid.total} values, got shape {self.values.shape}")

    def norm(self) -> float:
        return grid_norm(self)


def grid_norm(v: GridVector) -> float:
    """``sqrt(h^d sum_J v_J^2)``."""
    return math.sqrt(v.grid.h ** v.grid.dim * float(v.values @ v.values))


@dataclass
class FDMatrix:
    csr: sp.csr_matrix
    grid: UniformGrid
    max_abs_entry: float = field(init=False)

    def __post_init__(self):
        self.max_abs_entry = float(abs(self.csr).max()) if self.csr.nnz else 0.0

    @property
    def dim(self) -> int:
        return self.csr.shape[0]

    @property
    def sparsity(self) -> int:
        return 2 * self.grid.dim + 1

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()


def flatten_index(j: Sequence[int], n_gr: int) -> int:
    """``J(j) = sum_i n_gr^(i-1) j_i`` (first axis varies fastest)."""
    J = 0
    for i, ji in enumerate(j):
        ji = int(ji)
        if not 0 <= ji < n_gr:
            raise ValueError(f"component {i} = {ji} outside [0, {n_gr})")
        J += ji * n_gr**i
    return J


def unflatten_index(K: int, n_gr: int, d: int) -> tuple[int, ...]:
    """Division cascade recovering the multi-index of ``K``."""
    K = int(K)
    if not 0 <= K < n_gr**d:
        raise ValueError(f"K = {K} outside [0, {n_gr**d})")
    out = [0] * d
    rem = K
    for i in range(d - 1, 0, -1):
        out[i], rem = divmod(rem, n_gr**i)
    out[0] = rem
    return tuple(out)


def _eval(f: Field, pts: np.ndarray, what: str) -> np.ndarray:
    try:
        vals = np.broadcast_to(np.asarray(f(pts), dtype=float), (pts.shape[0],))
    except Exception as exc:  # noqa: BLE001 - any user-field failure is an assembly failure
        raise AssemblyError(f"evaluating {what} failed: {exc}") from exc
    bad = ~np.isfinite(vals)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise AssemblyError(f"{what} is not finite at grid point {pts[k].tolist()}")
    return vals


def _half_step_values(spec: OperatorSpec, grid: UniformGrid, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """``a_axis`` at ``x_J - (h/2) e_axis`` and ``x_J + (h/2) e_axis`` for every node.

    Each edge is evaluated once, so the two matrix entries sharing an edge (and
    the neighbouring diagonals) use the identical number.
    """
    n, d = grid.n_gr, grid.dim
    shape = [n] * d
    shape[axis] = n + 1
    strides = np.cumprod([1] + shape[:-1])
    E = np.arange(int(np.prod(shape)))
    eidx = np.stack([(E // strides[i]) % shape[i] for i in range(d)], axis=1)
    pts = grid.axis()[np.minimum(eidx, n - 1)]
    pts[:, axis] = grid.half_axis()[eidx[:, axis]]
    edge = _eval(spec.a[axis], pts, f"a_{axis + 1}")
    idx = grid.multi_indices()
    left = idx @ strides
    return edge[left], edge[left + strides[axis]]


def assemble_fd_matrix(spec: OperatorSpec, n_gr: int) -> FDMatrix:
    """Second-order conservative stencil with half-step diffusion coefficients."""
    grid = UniformGrid(spec.domain, n_gr)
    d, h2, N = grid.dim, grid.h**2, grid.total
    idx = grid.multi_indices()
    pts = grid.axis()[idx]
    a0 = _eval(spec.a0, pts, "a_0")
    diag = a0.copy()
    rows, cols, vals = [], [], []
    J = np.arange(N)
    for i in range(d):
        left, right = _half_step_values(spec, grid, i)
        if (left <= 0).any() or (right <= 0).any():
            warnings.warn(f"a_{i + 1} is non-positive at some half-step points", PositivityWarning, stacklevel=2)
        j = idx[:, i]
        diag += (left + right) / h2
        has_right = j < n_gr - 1
        src = J[has_right]
        dst = src + n_gr**i
        w = -right[has_right] / h2
        rows += [src, dst]
        cols += [dst, src]
        vals += [w, w]
    rows.append(J)
    cols.append(J)
    vals.append(diag)
    csr = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    csr.sort_indices()
    return FDMatrix(csr, grid)


def apply_fd_operator(m: FDMatrix, v: GridVector) -> GridVector:
    if v.grid.total != m.dim:
        raise ValueError(f"dimension mismatch: matrix {m.dim}, vector {v.grid.total}")
    return GridVector(m.csr @ v.values, m.grid)


def _shift(k: int, d: int) -> np.ndarray:
    if not 1 <= k <= 2 * d + 1:
        raise ValueError(f"k = {k} outside [1, {2 * d + 1}]")
    s = np.zeros(d, dtype=int)
    if k <= d:
        s[k - 1] = -1
    elif k >= d + 2:
        s[k - d - 2] = 1
    return s


def row_oracle(m: FDMatrix, i: int, k: int) -> int:
    """Index of the ``k``-th structural neighbour of row ``i``.

    Shift order is ``-e_1 .. -e_d, 0, +e_1 .. +e_d``.  Shifts leaving the grid
    return the sentinel ``i + N_gr``.
    """
    g = m.grid
    s = _shift(k, g.dim)
    j = np.asarray(unflatten_index(i, g.n_gr, g.dim)) + s
    if (j < 0).any() or (j >= g.n_gr).any():
        return int(i) + g.total
    return flatten_index(j, g.n_gr)


def col_oracle(m: FDMatrix, k: int, i: int) -> int:
    # L_ngr is symmetric, so the column structure equals the row structure.
    return row_oracle(m, i, k)


def entry_oracle(spec: OperatorSpec, grid: UniformGrid, K: int, Kp: int, ledger=None) -> float:
    """``(L_ngr)_{K,K'}`` computed from coefficient evaluations only.

    Evaluates ``a_0`` at ``x_k`` and every ``a_i`` at ``x_k +- (h/2) e_i``
    (``2d + 1`` evaluations), then selects the entry by ``k' - k``.
    """
    d, n = grid.dim, grid.n_gr
    k = np.asarray(unflatten_index(K, n, d))
    kp = np.asarray(unflatten_index(Kp, n, d))
    x = grid.axis()[k][None, :]
    half = grid.half_axis()
    a0 = float(_eval(spec.a0, x, "a_0")[0])
    plus, minus = np.empty(d), np.empty(d)
    for i in range(d):
        p = x.copy()
        p[0, i] = half[k[i] + 1]
        plus[i] = _eval(spec.a[i], p, f"a_{i + 1}")[0]
        p[0, i] = half[k[i]]
        minus[i] = _eval(spec.a[i], p, f"a_{i + 1}")[0]
    if ledger is not None:
        ledger.coefficient_evals += 2 * d + 1
        ledger.entry_oracle_calls += 1
    h2 = grid.h**2
    diff = kp - k
    nz = np.flatnonzero(diff)
    if nz.size == 0:
        return float((plus + minus).sum() / h2 + a0)
    if nz.size == 1 and abs(diff[nz[0]]) == 1:
        i = nz[0]
        return float(-(plus[i] if diff[i] == 1 else minus[i]) / h2)
    return 0.0


def sample_function(f: Field, grid: UniformGrid) -> GridVector:
    """Evaluate ``f`` at every grid point in flattened-index order."""
    pts = grid.points()
    try:
        vals = np.broadcast_to(np.asarray(f(pts), dtype=float), (grid.total,))
    except Exception as exc:  # noqa: BLE001
        raise ValueError(f"sampling failed: {exc}") from exc
    bad = ~np.isfinite(vals)
    if bad.any():
        raise ValueError(f"function not finite at {pts[np.flatnonzero(bad)[0]].tolist()}")
    return GridVector(np.array(vals), grid)


def check_positivity(spec: OperatorSpec, n_gr: int) -> list[int]:
    """Axes whose diffusion coefficient is non-positive at some grid or half-step point."""
    grid = UniformGrid(spec.domain, n_gr)
    pts = grid.points()
    bad = []
    for i in range(grid.dim):
        left, right = _half_step_values(spec, grid, i)
        if (_eval(spec.a[i], pts, f"a_{i + 1}") <= 0).any() or (left <= 0).any() or (right <= 0).any():
            bad.append(i)
    return bad


# -- builtin coefficient fields ---------------------------------------------


def constant_field(c: float) -> Field:
    return lambda x: np.full(x.shape[0], float(c))


def axis_polynomial(coeffs: Sequence[float], axis: int) -> Field:
    """``sum_k c_k x_axis^k`` (ascending powers)."""
    c = np.asarray(coeffs, dtype=float)
    return lambda x: np.polynomial.polynomial.polyval(x[:, axis], c)


def separable_sum(coeff_lists: Sequence[Sequence[float]]) -> Field:
    """``sum_i p_i(x_i)`` for per-axis polynomials ``p_i``."""
    polys = [np.asarray(c, dtype=float) for c in coeff_lists]
    return lambda x: sum(np.polynomial.polynomial.polyval(x[:, i], c) for i, c in enumerate(polys))


def laplacian_spec(lower: float = 0.0, upper: float = 1.0, dim: int = 1, a0: float = 0.0) -> OperatorSpec:
    """``-Laplacian + a0`` on ``(lower, upper)^dim``."""
    return OperatorSpec(
        DomainBox(lower, upper, dim),
        constant_field(a0),
        [constant_field(1.0)] * dim,
        name="laplacian",
    )
