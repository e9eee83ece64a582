import numpy as np
import pytest

from permweight.data import Dataset

# cells of the 2x2 joint: (a, x) and their probabilities
CELLS = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
CELL_PROBS = np.array([0.4, 0.1, 0.1, 0.4])

_ACCEPTANCE_LINES: list[str] = []


def enumerate_true_weights(probs=CELL_PROBS) -> np.ndarray:
    """p(a) p(x) / p(a, x) for each cell by direct enumeration."""
    out = np.empty(len(CELLS))
    for j, (a, x) in enumerate(CELLS):
        pa = probs[CELLS[:, 0] == a].sum()
        px = probs[CELLS[:, 1] == x].sum()
        out[j] = pa * px / probs[j]
    return out


def two_by_two(n: int, seed: int):
    """Random draw from the 2x2 joint; returns (dataset, cell index per row)."""
    rng = np.random.default_rng(seed)
    k = rng.choice(4, size=n, p=CELL_PROBS)
    return Dataset.create(CELLS[k, 0], CELLS[k, 1:]), k


def exact_two_by_two(reps: int = 1):
    """Dataset whose empirical joint is exactly 0.4/0.1/0.1/0.4."""
    k = np.repeat(np.arange(4), [4, 1, 1, 4])
    k = np.tile(k, reps)
    return Dataset.create(CELLS[k, 0], CELLS[k, 1:]), k


@pytest.fixture
def record_acceptance():
    def record(label: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
