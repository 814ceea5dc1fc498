from __future__ import annotations

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density(d: int, rng, rank: int | None = None, real: bool = False) -> np.ndarray:
    k = rank or d
    X = rng.standard_normal((d, k))
    if not real:
        X = X + 1j * rng.standard_normal((d, k))
    R = X @ X.conj().T
    return R / np.trace(R).real


def random_unit(d: int, rng, size: int | None = None) -> np.ndarray:
    shape = (d,) if size is None else (size, d)
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
