import itertools

import numpy as np
import pytest

from nnms.codes import resolve_code, tree_code
from nnms.tanner import Code

# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def code_b() -> Code:
    return resolve_code("eg1023")


@pytest.fixture(scope="session")
def toy() -> Code:
    return resolve_code("gallager96")


@pytest.fixture(scope="session")
def small_tree() -> Code:
    h = tree_code(12, seed=3)
    return Code.from_matrix(h, "tree12")


def codewords(code: Code) -> np.ndarray:
    """All codewords of a small code, by enumerating every word."""
    n = code.h.n_vars
    words = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)
    dense = code.h.to_dense().astype(np.int64)
    ok = ((words.astype(np.int64) @ dense.T) % 2 == 0).all(axis=1)
    return words[ok]


def map_llrs(words: np.ndarray, llrs: np.ndarray) -> np.ndarray:
    """Exact bitwise MAP LLRs ``log P(c_i=0|y) / P(c_i=1|y)`` for one frame."""
    # codeword log-likelihood up to a constant: sum over bits of -c_j * b_j
    score = -(words * llrs[None, :]).sum(axis=1)
    top = score.max()
    w = np.exp(score - top)
    # both classes summed directly; total - p1 cancels when one side is tiny
    p1 = (w[:, None] * words).sum(axis=0)
    p0 = (w[:, None] * (1 - words)).sum(axis=0)
    return np.log(p0) - np.log(p1)
