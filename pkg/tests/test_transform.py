import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oafmtl.transform import (
    PartialDCT,
    PartialOrthonormalOperator,
    adjoint,
    dct,
    dct_matrix,
    forward,
    idct,
    make_partial_dct,
)
from oracles import dct_entry_matrix


def test_constant_vector_maps_to_first_coefficient():
    y = dct(np.full(4, 1.5))
    assert y[0] == pytest.approx(3.0, abs=1e-15)
    np.testing.assert_allclose(y[1:], 0.0, atol=1e-15)


def test_basis_vector_extracts_first_column():
    y = dct(np.array([1.0, 0.0, 0.0]))
    expected = [np.sqrt(1 / 3), np.sqrt(2 / 3) * np.cos(np.pi / 6), np.sqrt(2 / 3) * np.cos(2 * np.pi / 6)]
    np.testing.assert_allclose(y, expected, atol=1e-15)


def test_dct_matches_entry_formula_and_preserves_norm(rng):
    x = rng.standard_normal(64)
    F = dct_entry_matrix(64)
    np.testing.assert_allclose(dct(x), F @ x, atol=1e-12)
    assert abs(np.linalg.norm(dct(x)) - np.linalg.norm(x)) <= 1e-12
    np.testing.assert_allclose(dct_matrix(64), F, atol=1e-13)
    np.testing.assert_allclose(idct(dct(x)), x, atol=1e-12)


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        dct(np.array([]))


def test_full_selection_is_permutation():
    op = make_partial_dct(4, 4, 7)
    assert sorted(op.row_selection.tolist()) == [0, 1, 2, 3]


def test_make_partial_dct_deterministic():
    a = make_partial_dct(10920, 8190, 2024)
    b = make_partial_dct(10920, 8190, 2024)
    assert a == b
    np.testing.assert_array_equal(a.row_selection, b.row_selection)


def test_different_seeds_differ():
    same = sum(
        np.array_equal(make_partial_dct(8, 4, 2 * i).row_selection, make_partial_dct(8, 4, 2 * i + 1).row_selection)
        for i in range(100)
    )
    # 8*7*6*5 ordered selections; a collision in 100 pairs is very unlikely
    assert same <= 2


def test_rows_exceeding_dim_rejected():
    with pytest.raises(ValueError):
        make_partial_dct(4, 5, 0)


def test_forward_and_adjoint_match_dense_oracle(rng):
    op = make_partial_dct(256, 96, 3)
    A = dct_entry_matrix(256)[op.row_selection]
    x, y = rng.standard_normal(256), rng.standard_normal(96)
    np.testing.assert_allclose(forward(op, x), A @ x, atol=1e-10)
    np.testing.assert_allclose(adjoint(op, y), A.T @ y, atol=1e-10)
    np.testing.assert_allclose(forward(op, x, dense=True), A @ x, atol=1e-10)
    np.testing.assert_allclose(adjoint(op, y, dense=True), A.T @ y, atol=1e-10)


def test_zero_maps_to_zero():
    op = make_partial_dct(32, 8, 1)
    assert not np.any(forward(op, np.zeros(32)))
    assert not np.any(adjoint(op, np.zeros(8)))


def test_square_operator_permutes_dct(rng):
    op = make_partial_dct(16, 16, 5)
    x = rng.standard_normal(16)
    np.testing.assert_allclose(np.sort(forward(op, x)), np.sort(dct(x)), atol=1e-14)


def test_dimension_mismatch_rejected():
    op = make_partial_dct(16, 8, 0)
    with pytest.raises(ValueError):
        forward(op, np.zeros(15))
    with pytest.raises(ValueError):
        adjoint(op, np.zeros(9))


def test_operator_invariants_validated():
    with pytest.raises(ValueError):
        PartialOrthonormalOperator(dim=4, rows=2, seed=0, row_selection=np.array([1, 1]))
    with pytest.raises(ValueError):
        PartialOrthonormalOperator(dim=4, rows=2, seed=0, row_selection=np.array([0, 4]))


def test_record_roundtrip():
    op = make_partial_dct(100, 40, 9)
    assert PartialOrthonormalOperator.from_record(op.to_record()) == op
    with pytest.raises(ValueError):
        op.row_selection[0] = 3


@settings(max_examples=40, deadline=None)
@given(dim=st.integers(1, 200), frac=st.floats(0.05, 1.0), seed=st.integers(0, 2**32 - 1), data=st.data())
def test_operator_properties(dim, frac, seed, data):
    rows = max(1, int(frac * dim))
    op = make_partial_dct(dim, rows, seed)
    rng = np.random.default_rng(seed % 1000)
    x, y = rng.standard_normal(dim), rng.standard_normal(rows)
    # orthonormal rows
    assert np.linalg.norm(forward(op, adjoint(op, y)) - y) <= 1e-10 * max(np.linalg.norm(y), 1)
    # adjointness
    lhs, rhs = forward(op, x) @ y, x @ adjoint(op, y)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1)
    # projection: never increases energy, idempotent
    assert np.linalg.norm(forward(op, x)) <= np.linalg.norm(x) * (1 + 1e-12)
    p = adjoint(op, forward(op, x))
    np.testing.assert_allclose(adjoint(op, forward(op, p)), p, atol=1e-10)
    # bitwise determinism
    np.testing.assert_array_equal(forward(make_partial_dct(dim, rows, seed), x), forward(op, x))


def test_partial_dct_estimator(rng):
    X = rng.standard_normal((5, 64))
    est = PartialDCT(ratio=0.75, seed=1).fit(X)
    Y = est.transform(X)
    assert Y.shape == (5, 48)
    np.testing.assert_allclose(Y[0], forward(est.operator_, X[0]))
    np.testing.assert_allclose(est.transform(est.inverse_transform(Y)), Y, atol=1e-12)
    assert est.get_params() == {"n_rows": None, "ratio": 0.75, "seed": 1}
