"""Code constructions and the codes bundled with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .tanner import Code, ParityCheckMatrix, load_code

# primitive polynomials over GF(2), bit i is the coefficient of x^i
_PRIMITIVE = {4: 0b10011, 6: 0b1000011, 8: 0b100011101, 10: 0b10000001001}

BUNDLED = {
    "eg1023": "eg_1023_781.json",
    "gallager96": "gallager_96_48.json",
}


def euclidean_geometry_code(s: int) -> ParityCheckMatrix:
    """Type-I two-dimensional Euclidean-geometry LDPC code over GF(2^s).

    Points of EG(2, 2^s) are the elements of GF(2^2s); the 2^2s - 1 lines that
    miss the origin form one cyclic class, giving a square circulant ``H`` of
    size ``n = 4^s - 1`` with row and column weight ``2^s``.  ``s=5`` gives the
    (1023, 781) code.
    """
    m = 2 * s
    if m not in _PRIMITIVE:
        raise ValueError(f"no primitive polynomial tabulated for GF(2^{m})")
    poly = _PRIMITIVE[m]
    n = (1 << m) - 1
    exp = np.zeros(n, dtype=np.int64)
    log = np.full(n + 1, -1, dtype=np.int64)
    x = 1
    for i in range(n):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x >> m:
            x ^= poly
    # GF(2^s) sits inside GF(2^2s) as {0} U {alpha^(k*(2^s+1))}
    step = (1 << s) + 1
    subfield_logs = [(step * k) % n for k in range((1 << s) - 1)]
    # line {1 + beta*alpha : beta in GF(2^s)} does not pass through the origin
    points = [1] + [int(exp[0] ^ exp[(lb + 1) % n]) for lb in subfield_logs]
    base = np.sort(log[np.array(points)])
    rows = np.repeat(np.arange(n), base.size)
    cols = (base[None, :] + np.arange(n)[:, None]).ravel() % n
    return ParityCheckMatrix(n, n, rows, cols)


def _has_four_cycle(dense: np.ndarray) -> bool:
    overlap = dense.astype(np.int32) @ dense.T.astype(np.int32)
    np.fill_diagonal(overlap, 0)
    return bool(overlap.max() > 1)


def gallager_code(n: int, wc: int, wr: int, seed: int = 0, max_tries: int = 10000) -> ParityCheckMatrix:
    """Regular (wc, wr) Gallager ensemble member free of length-4 cycles.

    The first band of ``n/wr`` rows holds consecutive runs of ``wr`` ones.  Each
    further band places one one per column, greedily in random column order,
    into a row of spare capacity that shares no column with the column's
    earlier rows; a band that gets stuck is redrawn.
    """
    if n % wr:
        raise ValueError("n must be a multiple of the row weight")
    band_rows = n // wr
    dense = np.zeros((wc * band_rows, n), dtype=np.uint8)
    for r in range(band_rows):
        dense[r, r * wr:(r + 1) * wr] = 1
    rng = np.random.default_rng(seed)
    for b in range(1, wc):
        lo, hi = b * band_rows, (b + 1) * band_rows
        for _ in range(max_tries):
            dense[lo:hi] = 0
            ok = True
            for c in rng.permutation(n):
                # columns already tied to c through an earlier check
                linked = dense[:lo][dense[:lo, c] == 1].any(axis=0)
                load = dense[lo:hi].sum(axis=1)
                clash = (dense[lo:hi] & linked).any(axis=1)
                cand = np.nonzero((load < wr) & ~clash)[0]
                if cand.size == 0:
                    ok = False
                    break
                dense[lo + rng.choice(cand), c] = 1
            if ok:
                break
        else:
            raise RuntimeError("could not avoid 4-cycles; try another seed")
    assert not _has_four_cycle(dense)
    return ParityCheckMatrix.from_dense(dense)


def tree_code(n_vars: int, seed: int = 0, max_branch: int = 3) -> ParityCheckMatrix:
    """Random code whose Tanner graph is a tree (cycle-free, connected)."""
    if n_vars < 2:
        raise ValueError("a tree code needs at least two variables")
    rng = np.random.default_rng(seed)
    placed = [0]
    rows, cols = [], []
    nxt, check = 1, 0
    while nxt < n_vars:
        anchor = int(rng.choice(placed))
        width = int(min(rng.integers(1, max_branch + 1), n_vars - nxt))
        members = [anchor] + list(range(nxt, nxt + width))
        rows.extend([check] * len(members))
        cols.extend(members)
        placed.extend(range(nxt, nxt + width))
        nxt += width
        check += 1
    return ParityCheckMatrix(n_vars, check, np.array(rows), np.array(cols))


def data_dir() -> Path:
    return Path(str(resources.files("nnms") / "data"))


def resolve_code(spec: str) -> Code:
    """Load a bundled code by short name, or a code from an alist/JSON path."""
    if spec in BUNDLED:
        return load_code(data_dir() / BUNDLED[spec])
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"no such code file or bundled code: {spec!r}")
    return load_code(path)
