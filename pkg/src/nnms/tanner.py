"""Parity-check matrices, Tanner graphs and the alist text format.

Rows of ``H`` are check nodes, columns are variable nodes.  Edges are numbered
row-major over the nonzero entries of ``H``, so the edges incident to a check
node occupy one contiguous range and every per-edge weight vector has a
reproducible layout.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class AlistError(ValueError):
    """Raised when an alist document is malformed."""


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """Sparse binary matrix stored as sorted (row, col) coordinate arrays."""

    n_vars: int
    n_checks: int
    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ValueError("rows and cols must be 1-D arrays of equal length")
        if self.n_vars < 1 or self.n_checks < 1:
            raise ValueError("matrix must have at least one row and one column")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_checks):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        key = rows * self.n_vars + cols
        if np.any(np.diff(key) == 0):
            raise ValueError("duplicate (row, col) entry")
        if np.unique(rows).size != self.n_checks:
            raise ValueError("every check node needs at least one entry")
        if np.unique(cols).size != self.n_vars:
            raise ValueError("every variable node needs at least one entry")
        rows.setflags(write=False)
        cols.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return (self.n_vars == other.n_vars and self.n_checks == other.n_checks
                and np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols))

    __hash__ = None

    @classmethod
    def from_dense(cls, dense) -> "ParityCheckMatrix":
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise ValueError("dense parity-check matrix must be 2-D")
        r, c = np.nonzero(dense % 2)
        return cls(dense.shape[1], dense.shape[0], r, c)

    @property
    def entries(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_checks, self.n_vars), dtype=np.uint8)
        out[self.rows, self.cols] = 1
        return out

    def col_degrees(self) -> np.ndarray:
        return np.bincount(self.cols, minlength=self.n_vars)

    def row_degrees(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n_checks)


@dataclass(frozen=True)
class TannerGraph:
    """Bipartite graph with dense edge ids ``0..E-1``.

    ``check_ptr``/``var_ptr`` are CSR-style offsets: the edges of check ``j``
    are ``check_ptr[j]:check_ptr[j+1]`` (edge ids are contiguous there) and
    the edges of variable ``i`` are ``var_edges[var_ptr[i]:var_ptr[i+1]]``.
    """

    n_vars: int
    n_checks: int
    edge_var: np.ndarray
    edge_check: np.ndarray
    check_ptr: np.ndarray
    var_ptr: np.ndarray
    var_edges: np.ndarray

    @property
    def edge_count(self) -> int:
        return int(self.edge_var.size)

    @property
    def edge_endpoints(self) -> list[tuple[int, int]]:
        return list(zip(self.edge_var.tolist(), self.edge_check.tolist()))

    def check_edge_ids(self, j: int) -> list[int]:
        """Edges incident to check ``j`` (a contiguous run)."""
        return list(range(int(self.check_ptr[j]), int(self.check_ptr[j + 1])))

    def var_edge_ids(self, i: int) -> list[int]:
        """Edges incident to variable ``i``."""
        return self.var_edges[self.var_ptr[i]:self.var_ptr[i + 1]].tolist()


def build_graph(h: ParityCheckMatrix) -> TannerGraph:
    edge_check = h.rows.astype(np.int64)
    edge_var = h.cols.astype(np.int64)
    check_ptr = np.zeros(h.n_checks + 1, dtype=np.int64)
    np.cumsum(np.bincount(edge_check, minlength=h.n_checks), out=check_ptr[1:])
    var_ptr = np.zeros(h.n_vars + 1, dtype=np.int64)
    np.cumsum(np.bincount(edge_var, minlength=h.n_vars), out=var_ptr[1:])
    # stable sort keeps ascending check order inside each variable's list
    var_edges = np.argsort(edge_var, kind="stable").astype(np.int64)
    arrays = (edge_var, edge_check, check_ptr, var_ptr, var_edges)
    for a in arrays:
        a.setflags(write=False)
    return TannerGraph(h.n_vars, h.n_checks, *arrays)


def syndrome(h: ParityCheckMatrix, c) -> np.ndarray:
    """Return ``H c mod 2``; accepts a single word or a batch (rows are words)."""
    c = np.asarray(c)
    if c.shape[-1] != h.n_vars:
        raise ValueError(f"word length {c.shape[-1]} does not match N={h.n_vars}")
    bits = (c[..., h.cols] % 2).astype(np.int64)
    # entries are row-major and every row is nonempty, so rows are contiguous runs
    starts = np.searchsorted(h.rows, np.arange(h.n_checks))
    return (np.add.reduceat(bits, starts, axis=-1) % 2).astype(np.uint8)


def gf2_rank(h: ParityCheckMatrix) -> int:
    """Rank over GF(2) by elimination on bit-packed rows."""
    a = np.packbits(h.to_dense(), axis=1)
    rank = 0
    n_rows = a.shape[0]
    for col in range(h.n_vars):
        byte, bit = divmod(col, 8)
        shift = 7 - bit
        pivots = np.nonzero((a[rank:, byte] >> shift) & 1)[0]
        if pivots.size == 0:
            continue
        p = rank + pivots[0]
        if p != rank:
            a[[rank, p]] = a[[p, rank]]
        mask = ((a[:, byte] >> shift) & 1).astype(bool)
        mask[rank] = False
        a[mask] ^= a[rank]
        rank += 1
        if rank == n_rows:
            break
    return rank


@dataclass(frozen=True)
class CodeParams:
    n: int
    m: int
    k: int
    avg_col_weight: float
    avg_row_weight: float

    def __post_init__(self):
        if not 0 < self.k < self.n:
            raise ValueError(f"need 0 < K < N, got K={self.k}, N={self.n}")

    @property
    def rate(self) -> float:
        return self.k / self.n


@dataclass(frozen=True)
class Code:
    """A parity-check matrix together with its graph and derived parameters."""

    name: str
    h: ParityCheckMatrix
    graph: TannerGraph = field(repr=False)
    params: CodeParams
    rank: int

    @classmethod
    def from_matrix(cls, h: ParityCheckMatrix, name: str = "code", k: int | None = None) -> "Code":
        rank = gf2_rank(h)
        e = h.nnz
        params = CodeParams(
            n=h.n_vars,
            m=h.n_checks,
            k=h.n_vars - rank if k is None else int(k),
            avg_col_weight=e / h.n_vars,
            avg_row_weight=e / h.n_checks,
        )
        return cls(name, h, build_graph(h), params, rank)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def k(self) -> int:
        return self.params.k


# ---------------------------------------------------------------------------
# alist I/O


def _int_tokens(line: str, lineno: int) -> list[int]:
    try:
        return [int(t) for t in line.split()]
    except ValueError as exc:
        raise AlistError(f"line {lineno}: non-integer token") from exc


def parse_alist(text) -> ParityCheckMatrix:
    """Parse an alist document (string or readable text stream).

    Zero entries in the neighbour lists are treated as padding, so both the
    padded (MacKay) and unpadded irregular layouts are accepted.
    """
    if hasattr(text, "read"):
        text = text.read()
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    it = iter(lines)

    def next_line(what):
        try:
            return next(it)
        except StopIteration:
            raise AlistError(f"{what} missing") from None

    lineno, ln = next_line("dimension line")
    dims = _int_tokens(ln, lineno)
    if len(dims) != 2 or min(dims) < 1:
        raise AlistError(f"line {lineno}: expected 'N M' with positive values")
    n, m = dims
    lineno, ln = next_line("max degree line")
    maxdeg = _int_tokens(ln, lineno)
    if len(maxdeg) != 2:
        raise AlistError(f"line {lineno}: expected 'max_col_deg max_row_deg'")
    lineno, ln = next_line("column degree line")
    col_deg = _int_tokens(ln, lineno)
    if len(col_deg) != n:
        raise AlistError(f"line {lineno}: expected {n} column degrees, got {len(col_deg)}")
    lineno, ln = next_line("row degree line")
    row_deg = _int_tokens(ln, lineno)
    if len(row_deg) != m:
        raise AlistError(f"line {lineno}: expected {m} row degrees, got {len(row_deg)}")
    if max(col_deg) > maxdeg[0] or max(row_deg) > maxdeg[1]:
        raise AlistError("declared degree exceeds declared maximum")

    def read_lists(count, degrees, bound, what):
        out = []
        for idx in range(count):
            lineno, ln = next_line(f"{what} list {idx + 1}")
            vals = [v for v in _int_tokens(ln, lineno) if v != 0]
            if len(vals) != degrees[idx]:
                raise AlistError(
                    f"line {lineno}: {what} {idx + 1} declares degree {degrees[idx]} "
                    f"but lists {len(vals)} entries"
                )
            if any(v < 1 or v > bound for v in vals):
                raise AlistError(f"line {lineno}: neighbour index out of range 1..{bound}")
            if len(set(vals)) != len(vals):
                raise AlistError(f"line {lineno}: repeated neighbour index")
            out.append(vals)
        return out

    col_lists = read_lists(n, col_deg, m, "column")
    row_lists = read_lists(m, row_deg, n, "row")
    from_cols = {(r - 1, c) for c, lst in enumerate(col_lists) for r in lst}
    from_rows = {(r, c - 1) for r, lst in enumerate(row_lists) for c in lst}
    if from_cols != from_rows:
        raise AlistError("row and column neighbour lists are inconsistent")
    rows, cols = zip(*sorted(from_rows)) if from_rows else ((), ())
    try:
        return ParityCheckMatrix(n, m, np.array(rows), np.array(cols))
    except ValueError as exc:
        raise AlistError(str(exc)) from exc


def write_alist(h: ParityCheckMatrix) -> str:
    """Serialize to the padded alist layout (zeros pad short lists)."""
    col_deg = h.col_degrees()
    row_deg = h.row_degrees()
    max_c, max_r = int(col_deg.max()), int(row_deg.max())
    col_lists = [[] for _ in range(h.n_vars)]
    row_lists = [[] for _ in range(h.n_checks)]
    for r, c in zip(h.rows.tolist(), h.cols.tolist()):
        col_lists[c].append(r + 1)
        row_lists[r].append(c + 1)
    out = [
        f"{h.n_vars} {h.n_checks}",
        f"{max_c} {max_r}",
        " ".join(map(str, col_deg.tolist())),
        " ".join(map(str, row_deg.tolist())),
    ]
    for lst in col_lists:
        out.append(" ".join(map(str, sorted(lst) + [0] * (max_c - len(lst)))))
    for lst in row_lists:
        out.append(" ".join(map(str, sorted(lst) + [0] * (max_r - len(lst)))))
    return "\n".join(out) + "\n"


def load_code(path: str | os.PathLike) -> Code:
    """Load a code from an alist file or from its JSON metadata sidecar.

    The sidecar has the keys ``name``, ``n``, ``k`` and ``alist_path``
    (relative paths resolve against the sidecar's directory).  An explicit
    ``k`` overrides the rank-derived default.
    """
    path = Path(path)
    if path.suffix == ".json":
        meta = json.loads(path.read_text())
        alist_path = Path(meta["alist_path"])
        if not alist_path.is_absolute():
            alist_path = path.parent / alist_path
        h = parse_alist(alist_path.read_text())
        if "n" in meta and int(meta["n"]) != h.n_vars:
            raise ValueError(f"metadata says n={meta['n']} but alist has N={h.n_vars}")
        return Code.from_matrix(h, name=meta.get("name", alist_path.stem), k=meta.get("k"))
    h = parse_alist(path.read_text())
    return Code.from_matrix(h, name=path.stem)
