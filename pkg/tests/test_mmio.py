import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from gkbsaddle import MatrixMarketError, SparseMatrix, read_matrix_market, spmv, write_matrix_market


def test_one_by_one(tmp_path):
    A = SparseMatrix.from_dense([[2.5]])
    write_matrix_market(A, tmp_path / "a.mtx")
    lines = (tmp_path / "a.mtx").read_text().splitlines()
    assert lines[-1] == "1 1 2.5"
    B = read_matrix_market(tmp_path / "a.mtx")
    np.testing.assert_array_equal(B.toarray(), [[2.5]])


def test_symmetric_expansion(tmp_path):
    (tmp_path / "s.mtx").write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n% lower triangle\n3 3 4\n"
        "1 1 4\n2 1 1\n3 2 -2\n3 3 5\n")
    A = read_matrix_market(tmp_path / "s.mtx")
    np.testing.assert_array_equal(A.toarray(), [[4, 1, 0], [1, 0, -2], [0, -2, 5]])


def test_empty_matrix(tmp_path):
    write_matrix_market(SparseMatrix.zeros(4, 4), tmp_path / "z.mtx")
    Z = read_matrix_market(tmp_path / "z.mtx")
    assert Z.shape == (4, 4) and Z.nnz == 0
    np.testing.assert_array_equal(spmv(Z, np.arange(4.0)), np.zeros(4))


def test_symmetric_write_roundtrip(tmp_path, rng):
    B = sps.random(8, 8, density=0.3, random_state=np.random.default_rng(1))
    A = SparseMatrix.from_scipy(B + B.T)
    write_matrix_market(A, tmp_path / "s.mtx", symmetric=True, comment="two\nlines")
    text = (tmp_path / "s.mtx").read_text()
    assert "symmetric" in text.splitlines()[0] and "% two" in text
    np.testing.assert_array_equal(read_matrix_market(tmp_path / "s.mtx").toarray(), A.toarray())


@pytest.mark.parametrize("body, line, match", [
    ("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n", 1, "coordinate"),
    ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n", 1, "not real"),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3, "out of bounds"),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", 3, "declared 2"),
    ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n", 3, "cannot parse"),
    ("%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 2 1.0\n", 3, "upper"),
    ("not a header\n", 1, "header"),
    ("%%MatrixMarket matrix coordinate real general\n% only comments\n", 2, "size"),
])
def test_parse_errors_carry_line_numbers(tmp_path, body, line, match):
    (tmp_path / "bad.mtx").write_text(body)
    with pytest.raises(MatrixMarketError, match=match) as info:
        read_matrix_market(tmp_path / "bad.mtx")
    assert info.value.line == line


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.floats(0, 1), st.integers(0, 2**31))
def test_roundtrip_bit_exact(tmp_path_factory, m, n, density, seed):
    rng = np.random.default_rng(seed)
    B = sps.random(m, n, density=density, random_state=rng, format="csr")
    B.data = rng.standard_normal(B.nnz) * 10.0 ** rng.integers(-300, 300, B.nnz)
    A = SparseMatrix.from_scipy(B)
    path = tmp_path_factory.mktemp("mm") / "a.mtx"
    write_matrix_market(A, path)
    R = read_matrix_market(path)
    assert R.shape == A.shape
    assert np.array_equal(R.row_offsets, A.row_offsets)
    assert np.array_equal(R.col_indices, A.col_indices)
    assert np.array_equal(R.values, A.values)
