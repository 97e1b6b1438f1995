"""Tests for grids, finite-difference assembly and the sparse-access oracles."""
import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from spectraldiff.grid import (
    AssemblyError,
    DomainBox,
    GridVector,
    OperatorSpec,
    PositivityWarning,
    UniformGrid,
    apply_fd_operator,
    assemble_fd_matrix,
    axis_polynomial,
    check_positivity,
    col_oracle,
    constant_field,
    entry_oracle,
    flatten_index,
    grid_norm,
    laplacian_spec,
    row_oracle,
    sample_function,
    separable_sum,
    unflatten_index,
)
from spectraldiff.qsvt import QueryLedger


def variable_spec(dim: int) -> OperatorSpec:
    """Smooth positive coefficients that differ per axis."""
    a = [lambda x, i=i: 1.0 + 0.3 * np.sin(x[:, i] + i) + 0.1 * x.sum(axis=1) ** 2 for i in range(dim)]
    return OperatorSpec(DomainBox(-0.5, 1.0, dim), lambda x: 1.0 + np.cos(x).prod(axis=1), a, "variable")


# -- indices ------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(n=st.integers(1, 6), d=st.integers(1, 4), data=st.data())
def test_flatten_round_trip(n, d, data):
    K = data.draw(st.integers(0, n**d - 1))
    assert flatten_index(unflatten_index(K, n, d), n) == K


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 6), d=st.integers(1, 4), data=st.data())
def test_unflatten_round_trip(n, d, data):
    j = tuple(data.draw(st.lists(st.integers(0, n - 1), min_size=d, max_size=d)))
    assert unflatten_index(flatten_index(j, n), n, d) == j


def test_first_axis_fastest():
    assert flatten_index((1, 0), 4) == 1
    assert flatten_index((0, 1), 4) == 4
    assert unflatten_index(6, 4, 2) == (2, 1)


def test_multi_indices_match_unflatten():
    g = UniformGrid(DomainBox(0, 1, 3), 3)
    assert [tuple(r) for r in g.multi_indices()] == [unflatten_index(K, 3, 3) for K in range(27)]


@pytest.mark.parametrize(("K", "n", "d"), [(-1, 3, 1), (9, 3, 2), (27, 3, 3)])
def test_unflatten_out_of_range(K, n, d):
    with pytest.raises(ValueError):
        unflatten_index(K, n, d)


def test_flatten_out_of_range():
    with pytest.raises(ValueError):
        flatten_index((0, 3), 3)


# -- grid objects -----------------------------------------------------------------


def test_grid_geometry():
    g = UniformGrid(DomainBox(-1.0, 1.0, 2), 3)
    assert g.h == pytest.approx(0.5)
    np.testing.assert_allclose(g.axis(), [-0.5, 0.0, 0.5])
    np.testing.assert_allclose(g.half_axis(), [-0.75, -0.25, 0.25, 0.75])
    assert g.total == 9
    assert g.points()[1].tolist() == [0.0, -0.5]


@pytest.mark.parametrize(("lower", "upper", "dim"), [(1.0, 1.0, 1), (2.0, 1.0, 1), (0.0, 1.0, 0), (0.0, 1.0, 1.5)])
def test_domain_validation(lower, upper, dim):
    with pytest.raises(ValueError):
        DomainBox(lower, upper, dim)


def test_grid_norm_constant():
    g = UniformGrid(DomainBox(0.0, 2.0, 2), 9)
    v = GridVector(np.ones(g.total), g)
    assert grid_norm(v) == pytest.approx(np.sqrt(g.h**2 * 81))
    assert v.norm() == grid_norm(v)


def test_grid_vector_shape_check():
    with pytest.raises(ValueError):
        GridVector(np.ones(3), UniformGrid(DomainBox(0, 1), 4))


def test_sample_function_rejects_nonfinite():
    g = UniformGrid(DomainBox(0, 1), 5)
    with np.errstate(divide="ignore"), pytest.raises(ValueError, match="not finite"):
        sample_function(lambda x: 1.0 / (x[:, 0] - g.axis()[2]), g)


# -- assembly ------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 7, 31])
def test_laplacian_1d_full_spectrum(n):
    m = assemble_fd_matrix(laplacian_spec(), n)
    h = 1.0 / (n + 1)
    k = np.arange(1, n + 1)
    expected = 4.0 / h**2 * np.sin(k * np.pi * h / 2) ** 2
    np.testing.assert_allclose(np.linalg.eigvalsh(m.toarray()), np.sort(expected), rtol=1e-12)


def test_laplacian_tridiagonal_entries():
    m = assemble_fd_matrix(laplacian_spec(), 4).toarray()
    h2 = (1 / 5) ** 2
    expected = (2 * np.eye(4) - np.eye(4, k=1) - np.eye(4, k=-1)) / h2
    np.testing.assert_allclose(m, expected, rtol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_symmetry_exact(d):
    m = assemble_fd_matrix(variable_spec(d), 5)
    assert abs(m.csr - m.csr.T).max() == 0.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_sign_pattern_and_dominance(d):
    spec = variable_spec(d)
    m = assemble_fd_matrix(spec, 5)
    A = m.toarray()
    a0 = spec.a0(m.grid.points())
    off = A - np.diag(np.diag(A))
    assert (off <= 0).all()
    excess = np.diag(A) - a0 - np.abs(off).sum(axis=1)
    # interior rows balance exactly; boundary rows keep the wall edges
    assert (excess >= -1e-9 * np.abs(A).max()).all()
    assert excess.min() == pytest.approx(0.0, abs=1e-9 * np.abs(A).max())


def test_csr_sorted_no_duplicates():
    m = assemble_fd_matrix(variable_spec(2), 6)
    assert m.csr.has_sorted_indices
    coo = m.csr.tocoo()
    assert len(set(zip(coo.row.tolist(), coo.col.tolist()))) == coo.nnz


@pytest.mark.parametrize("c", [1.0, 2.5])
def test_stencil_exact_on_quadratics(c):
    spec = OperatorSpec(DomainBox(0.0, 1.0), constant_field(0.0), [constant_field(c)])
    n = 15
    m = assemble_fd_matrix(spec, n)
    f = sample_function(lambda x: x[:, 0] * (1 - x[:, 0]), m.grid)
    out = apply_fd_operator(m, f).values
    # -c f'' = 2c everywhere, also at the boundary-adjacent nodes since f vanishes there
    np.testing.assert_allclose(out[1:-1], 2 * c, rtol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_separable_laplacian_eigenvalue(d):
    n = 6
    m = assemble_fd_matrix(laplacian_spec(dim=d), n)
    h = 1 / (n + 1)
    lam1 = 4 / h**2 * np.sin(np.pi * h / 2) ** 2
    assert np.linalg.eigvalsh(m.toarray())[0] == pytest.approx(d * lam1, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_apply_linearity(a, b, seed):
    m = assemble_fd_matrix(variable_spec(2), 4)
    rng = np.random.default_rng(seed)
    u, v = (GridVector(rng.standard_normal(m.dim), m.grid) for _ in range(2))
    lhs = apply_fd_operator(m, GridVector(a * u.values + b * v.values, m.grid)).values
    rhs = a * apply_fd_operator(m, u).values + b * apply_fd_operator(m, v).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


def test_apply_dimension_mismatch():
    m = assemble_fd_matrix(laplacian_spec(), 4)
    with pytest.raises(ValueError):
        apply_fd_operator(m, GridVector(np.ones(5), UniformGrid(DomainBox(0, 1), 5)))


def test_assembly_error_on_nonfinite_coefficient():
    spec = OperatorSpec(DomainBox(0, 1), lambda x: np.log(x[:, 0] - 0.5), [constant_field(1.0)])
    with np.errstate(divide="ignore", invalid="ignore"), pytest.raises(AssemblyError):
        assemble_fd_matrix(spec, 5)


def test_assembly_error_on_raising_coefficient():
    def boom(x):
        raise RuntimeError("no")

    spec = OperatorSpec(DomainBox(0, 1), constant_field(0.0), [boom])
    with pytest.raises(AssemblyError):
        assemble_fd_matrix(spec, 3)


def test_positivity_warning_and_check():
    spec = OperatorSpec(DomainBox(-1, 1), constant_field(0.0), [lambda x: x[:, 0]])
    with pytest.warns(PositivityWarning):
        assemble_fd_matrix(spec, 5)
    assert check_positivity(spec, 5) == [0]
    assert check_positivity(laplacian_spec(), 5) == []


def test_builtin_fields():
    x = np.array([[0.5, 2.0], [1.0, -1.0]])
    np.testing.assert_allclose(constant_field(3.0)(x), [3.0, 3.0])
    np.testing.assert_allclose(axis_polynomial([1.0, 0.0, 2.0], 1)(x), [9.0, 3.0])
    np.testing.assert_allclose(separable_sum([[1.0, 1.0], [0.0, 0.0, 1.0]])(x), [5.5, 3.0])


# -- oracles ------------------------------------------------------------------------


@pytest.mark.parametrize(("n", "d"), [(5, 1), (5, 2), (5, 3), (1, 2)])
def test_row_oracle_matches_csr_structure(n, d):
    m = assemble_fd_matrix(variable_spec(d), n)
    N = m.dim
    for i in range(N):
        found = {row_oracle(m, i, k) for k in range(1, 2 * d + 2)} - {i + N}
        cols = set(m.csr.indices[m.csr.indptr[i]:m.csr.indptr[i + 1]].tolist())
        assert found == cols
        assert [col_oracle(m, k, i) for k in range(1, 2 * d + 2)] == [row_oracle(m, i, k) for k in range(1, 2 * d + 2)]


def test_row_oracle_order_and_sentinel():
    m = assemble_fd_matrix(laplacian_spec(dim=2), 3)
    # centre node (1, 1) -> K = 4
    assert [row_oracle(m, 4, k) for k in range(1, 6)] == [3, 1, 4, 5, 7]
    # corner node (0, 0): the two negative shifts fall off the grid
    assert [row_oracle(m, 0, k) for k in range(1, 6)] == [9, 9, 0, 1, 3]
    with pytest.raises(ValueError):
        row_oracle(m, 0, 6)


@pytest.mark.parametrize(("n", "d"), [(4, 1), (4, 2), (4, 3)])
def test_entry_oracle_matches_assembly(n, d):
    spec = variable_spec(d)
    m = assemble_fd_matrix(spec, n)
    A = m.toarray()
    for K, Kp in itertools.product(range(m.dim), repeat=2):
        val = entry_oracle(spec, m.grid, K, Kp)
        assert val == pytest.approx(A[K, Kp], rel=1e-12, abs=1e-12 * np.abs(A).max())


@pytest.mark.parametrize("d", [1, 2, 3])
def test_entry_oracle_counts_coefficient_evaluations(d):
    spec = variable_spec(d)
    g = UniformGrid(spec.domain, 3)
    ledger = QueryLedger()
    entry_oracle(spec, g, 0, 0, ledger)
    entry_oracle(spec, g, 0, 1, ledger)
    assert ledger.entry_oracle_calls == 2
    assert ledger.coefficient_evals == 2 * (2 * d + 1)


def test_sparsity_formula():
    for d in (1, 2, 3, 4):
        m = assemble_fd_matrix(laplacian_spec(dim=d), 3)
        assert m.sparsity == 2 * d + 1
        assert int(np.diff(m.csr.indptr).max()) == 2 * d + 1


def test_fdmatrix_is_csr():
    m = assemble_fd_matrix(laplacian_spec(), 5)
    assert sp.isspmatrix_csr(m.csr)
    assert m.max_abs_entry == pytest.approx(2 * 36)
