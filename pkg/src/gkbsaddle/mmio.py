"""MatrixMarket coordinate files (real, general or symmetric)."""

from pathlib import Path

import numpy as np

from .errors import MatrixMarketError
from .sparse import SparseMatrix

__all__ = ["read_matrix_market", "write_matrix_market"]

_BANNER = "%%matrixmarket"


def read_matrix_market(path):
    """Read a coordinate MatrixMarket file into a :class:`SparseMatrix`.

    Symmetric files store one triangle; the mirrored entries are added on read.
    Errors carry the 1-based line number of the offending line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MatrixMarketError(f"cannot read file: {exc.strerror}", path) from exc
    lines = text.splitlines()
    if not lines or not lines[0].lower().startswith(_BANNER):
        raise MatrixMarketError("missing '%%MatrixMarket' header", path, 1)
    header = lines[0].split()
    if len(header) != 5:
        raise MatrixMarketError(f"malformed header {lines[0]!r}", path, 1)
    _, obj, fmt, field, symmetry = (h.lower() for h in header)
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"only 'matrix coordinate' is supported, got '{obj} {fmt}'", path, 1)
    if field not in ("real", "integer"):
        raise MatrixMarketError(f"field '{field}' is not real", path, 1)
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"symmetry '{symmetry}' is not supported", path, 1)

    lineno = 1
    size = None
    for lineno in range(2, len(lines) + 1):
        s = lines[lineno - 1].strip()
        if s and not s.startswith("%"):
            size = s.split()
            break
    if size is None:
        raise MatrixMarketError("missing size line", path, lineno)
    try:
        nrows, ncols, nnz = (int(t) for t in size)
    except ValueError:
        raise MatrixMarketError(f"malformed size line {lines[lineno - 1]!r}", path, lineno) from None
    if min(nrows, ncols, nnz) < 0:
        raise MatrixMarketError("negative sizes", path, lineno)

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    count = 0
    for lineno in range(lineno + 1, len(lines) + 1):
        s = lines[lineno - 1].strip()
        if not s or s.startswith("%"):
            continue
        if count == nnz:
            raise MatrixMarketError(f"more than the declared {nnz} entries", path, lineno)
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"expected 'row col value', got {s!r}", path, lineno)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(f"cannot parse entry {s!r}", path, lineno) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"index ({i}, {j}) out of bounds for {nrows}x{ncols}", path, lineno)
        if symmetry == "symmetric" and j > i:
            raise MatrixMarketError(f"symmetric file stores upper entry ({i}, {j})", path, lineno)
        rows[count], cols[count], vals[count] = i - 1, j - 1, v
        count += 1
    if count != nnz:
        raise MatrixMarketError(f"declared {nnz} entries, found {count}", path, lineno)

    if symmetry == "symmetric":
        if nrows != ncols:
            raise MatrixMarketError("symmetric matrix must be square", path, 1)
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    return SparseMatrix.from_coo(rows, cols, vals, (nrows, ncols))


def write_matrix_market(A, path, symmetric=False, comment=None):
    """Write ``A`` in coordinate format with 17 significant digits (round trips exactly)."""
    path = Path(path)
    sp = A.to_scipy().tocoo()
    r, c, v = sp.row, sp.col, sp.data
    if symmetric:
        if A.nrows != A.ncols:
            raise ValueError("symmetric output requires a square matrix")
        keep = r >= c
        r, c, v = r[keep], c[keep], v[keep]
    order = np.lexsort((r, c))
    lines = [f"%%MatrixMarket matrix coordinate real {'symmetric' if symmetric else 'general'}"]
    if comment:
        lines.extend(f"% {line}" for line in str(comment).splitlines())
    lines.append(f"{A.nrows} {A.ncols} {len(v)}")
    lines.extend(f"{i + 1} {j + 1} {x:.17g}" for i, j, x in zip(r[order], c[order], v[order]))
    path.write_text("\n".join(lines) + "\n")
