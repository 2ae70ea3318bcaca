from __future__ import annotations

import numpy as np
import pytest

from iontrap.engine import PHONON_LEVELS, DenseState


def pair_oracle(kind: str, q: int, m: int) -> list[tuple[int, int]]:
    """Coupled index pairs written straight from the pulse definitions.

    Each pair is (first, second) where ``first`` takes row 0 of the 2x2 block.
    """
    dim = 1 << m
    pairs = []
    for b in range(dim):
        if (b >> q) & 1:
            continue
        b1 = b | (1 << q)
        if kind == "V":
            pairs += [(p * dim + b, p * dim + b1) for p in range(PHONON_LEVELS)]
        elif kind == "U":
            pairs.append((1 * dim + b, 0 * dim + b1))
        elif kind == "A":
            pairs.append((1 * dim + b, 2 * dim + b))
        elif kind == "P":
            pairs.append((1 * dim + b, 3 * dim + b))
    return pairs


def block_oracle(theta: float, phi: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * np.exp(-1j * phi) * s], [-1j * np.exp(1j * phi) * s, c]])


def full_matrix_oracle(kind: str, q: int, theta: float, phi: float, m: int) -> np.ndarray:
    n = PHONON_LEVELS << m
    mat = np.eye(n, dtype=complex)
    blk = block_oracle(theta, phi)
    for i, j in pair_oracle(kind, q, m):
        mat[np.ix_([i, j], [i, j])] = blk
    return mat


def random_dense(m: int, rng: np.random.Generator, phonon: bool = True) -> DenseState:
    n = PHONON_LEVELS << m
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    if not phonon:
        v[1 << m :] = 0
    v /= np.linalg.norm(v)
    return DenseState(m, v)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
