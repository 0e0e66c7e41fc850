import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from etd2rkds.operators import Axis, build_grid, build_operator, spectral_factor
from etd2rkds.rational import get_scheme
from etd2rkds.tensor import (
    Field,
    ORACLE_MAX_EXTENT,
    ThomasFactor,
    ZeroPivotError,
    _thomas_accumulate,
    _thomas_accumulate_py,
    contract_axis,
    from_vec,
    hadamard_axis,
    kron_axis_matrix,
    load_field,
    make_solver,
    save_field,
    slice_equivalence_oracle,
    to_vec,
)

shapes_2d = st.tuples(st.integers(2, 7), st.integers(2, 7))
shapes_3d = st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5))


def kron_oracle(M, shape, axis):
    """Dense ``I (x) .. M .. (x) I`` in x-fastest ordering, built independently of the package."""
    mats = [np.eye(n) for n in shape]
    mats[axis] = M
    out = np.array([[1.0]])
    for A in mats:
        out = np.kron(A, out)
    return out


@given(shape=st.one_of(shapes_2d, shapes_3d), data=st.data())
@settings(max_examples=40, deadline=None)
def test_contract_axis_matches_kronecker(shape, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    a = rng.standard_normal(shape)
    axis = data.draw(st.integers(0, len(shape) - 1))
    M = rng.standard_normal((shape[axis], shape[axis]))
    got = contract_axis(M, a, axis)
    assert np.allclose(to_vec(got), kron_oracle(M, shape, axis) @ to_vec(a), atol=1e-12)
    assert np.allclose(kron_axis_matrix(M, shape, axis, sparse=False), kron_oracle(M, shape, axis))


@given(shape=st.one_of(shapes_2d, shapes_3d), data=st.data())
@settings(max_examples=40, deadline=None)
def test_hadamard_axis_is_diagonal_contraction(shape, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    a = rng.standard_normal(shape)
    axis = data.draw(st.integers(0, len(shape) - 1))
    d = rng.standard_normal(shape[axis])
    assert np.allclose(hadamard_axis(a, d, axis), contract_axis(np.diag(d), a, axis), atol=1e-14)


def test_axis_mismatch_raises():
    with pytest.raises(ValueError):
        contract_axis(np.eye(3), np.zeros((4, 5)), 0)
    with pytest.raises(ValueError):
        hadamard_axis(np.zeros((4, 5)), np.ones(4), 1)


def test_vectorization_is_x_fastest():
    a = np.arange(6.0).reshape(2, 3)
    assert list(to_vec(a)) == [0, 3, 1, 4, 2, 5]
    assert np.array_equal(from_vec(to_vec(a), a.shape), a)
    with pytest.raises(ValueError):
        from_vec(np.zeros(5), (2, 3))


def _solver(backend, shape, axis, tau=0.05, scheme="p04", kappa=1.0, q=0.0):
    grid = build_grid(len(shape), ((0.0, 1.0),) * len(shape), tuple(n + 1 for n in shape))
    return make_solver(backend, grid, axis, tau, scheme, kappa, q)


@pytest.mark.parametrize("backend", ["spectral", "thomas", "sparse"])
@given(g1=arrays(float, (5, 6), elements=st.floats(-1, 1)), g2=arrays(float, (5, 6), elements=st.floats(-1, 1)), c=st.floats(-3, 3))
@settings(max_examples=15, deadline=None)
def test_directional_apply_is_linear(backend, g1, g2, c):
    s = _solver(backend, (5, 6), Axis.Y)
    lhs = s.apply(2, g1 + c * g2)
    rhs = s.apply(2, g1) + c * s.apply(2, g2)
    assert np.allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("backend", ["spectral", "thomas"])
def test_directional_factors_commute(backend):
    rng = np.random.default_rng(3)
    shape = (6, 5, 4)
    g = rng.standard_normal(shape)
    solvers = [_solver(backend, shape, ax) for ax in range(3)]
    a = solvers[0].apply(1, solvers[1].apply(3, solvers[2].apply(2, g)))
    b = solvers[2].apply(2, solvers[0].apply(1, solvers[1].apply(3, g)))
    assert np.allclose(a, b, atol=1e-13)


@pytest.mark.parametrize("scheme", ["p02", "p04"])
@given(g=arrays(float, (7, 6), elements=st.floats(-10, 10)), tau=st.floats(1e-4, 10.0))
@settings(max_examples=25, deadline=None)
def test_first_function_does_not_expand(scheme, g, tau):
    # |R(x)| <= 1 on x >= 0 and A symmetric positive definite
    s = _solver("spectral", (7, 6), Axis.X, tau=tau, scheme=scheme)
    assert np.linalg.norm(s.apply(1, g)) <= np.linalg.norm(g) * (1 + 1e-12) + 1e-300


def test_thomas_factor_solves_against_scipy():
    n = 40
    a, b = 3.0 + 1.0j, -1.0 + 0.0j
    fac = ThomasFactor.build(a, b, n)
    rng = np.random.default_rng(0)
    rhs = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:], ab[1], ab[2, :-1] = b, a, b
    assert np.allclose(fac.solve(rhs), sla.solve_banded((1, 1), ab, rhs), atol=1e-13)


def test_thomas_zero_pivot():
    with pytest.raises(ZeroPivotError):
        ThomasFactor.build(0.0, 1.0, 3)


def test_compiled_kernel_matches_reference_sweep():
    rng = np.random.default_rng(1)
    fac = ThomasFactor.build(4.0 + 1.0j, -1.0, 9)
    g = tuple(rng.standard_normal((3, 9, 4)) for _ in range(2))
    coefs = np.array([0.5 - 1j, 2.0 + 0.3j])
    out1, out2 = np.zeros((3, 9, 4)), np.zeros((3, 9, 4))
    _thomas_accumulate(g, coefs, fac.b, fac.cprime, fac.inv_den, out1)
    _thomas_accumulate_py(g, coefs, fac.b, fac.cprime, fac.inv_den, out2)
    assert np.allclose(out1, out2, atol=1e-14)
    # contiguous pencils take the blocked path
    g1 = tuple(rng.standard_normal((37, 9, 1)) for _ in range(2))
    out1, out2 = np.zeros((37, 9, 1)), np.zeros((37, 9, 1))
    _thomas_accumulate(g1, coefs, fac.b, fac.cprime, fac.inv_den, out1)
    _thomas_accumulate_py(g1, coefs, fac.b, fac.cprime, fac.inv_den, out2)
    assert np.allclose(out1, out2, atol=1e-14)


def test_thomas_apply_is_deterministic():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((30, 31))
    s = _solver("thomas", (30, 31), Axis.Y)
    assert np.array_equal(s.apply(1, g), s.apply(1, g))


def test_spectral_missing_function_raises():
    grid = build_grid(2, ((0, 1),) * 2, 6)
    fac = spectral_factor(build_operator(grid, 0, 1.0, 0.0))
    from etd2rkds.tensor import SpectralSolver

    s = SpectralSolver.from_rational(fac, 0, 0.1, get_scheme("p02"), ells=(1,))
    with pytest.raises(KeyError):
        s.apply(2, np.zeros(grid.shape))


@given(shape=st.one_of(shapes_2d, shapes_3d), ell=st.integers(1, 3), scheme=st.sampled_from(["p02", "p04"]), seed=st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_sliced_applies_match_dense_oracle(shape, ell, scheme, seed):
    grid = build_grid(len(shape), ((0.0, 1.0),) * len(shape), tuple(n + 1 for n in shape))
    field = np.random.default_rng(seed).standard_normal(shape)
    rep = slice_equivalence_oracle(grid, 0.02, scheme, ell, field, 0.8, 0.5, ("spectral", "thomas", "sparse"))
    assert rep["max_deviation"] <= 1e-12 * max(1.0, max(rep["reference_norm"].values()))
    assert rep["kronecker_sum_gap"] <= 1e-9


def test_oracle_refuses_large_grids():
    grid = build_grid(2, ((0, 1),) * 2, ORACLE_MAX_EXTENT + 2)
    with pytest.raises(ValueError):
        slice_equivalence_oracle(grid, 0.1, "p02", 1, np.zeros(grid.shape))


@given(shape=st.one_of(shapes_2d, shapes_3d), seed=st.integers(0, 1000), t=st.one_of(st.none(), st.floats(0, 10)))
@settings(max_examples=20, deadline=None)
def test_snapshot_round_trip(tmp_path_factory, shape, seed, t):
    path = tmp_path_factory.mktemp("snap") / "f.field"
    data = np.random.default_rng(seed).standard_normal(shape)
    save_field(path, Field(data, t))
    back = load_field(path)
    assert np.array_equal(back.data, data)
    assert back.time == t


def test_snapshot_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.field"
    p.write_bytes(b'{"format": "other"}\n')
    with pytest.raises(ValueError):
        load_field(p)


def test_field_rejects_non_finite():
    with pytest.raises(ValueError):
        Field(np.array([[np.nan, 0.0], [0.0, 0.0]]))
