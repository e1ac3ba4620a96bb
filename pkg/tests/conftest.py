import warnings

import numpy as np
import pytest

from impfilter import model as nn

# criterion lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_bound_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*estimation bound.*")
        yield


def numeric_gradient(state: nn.ModelState, X, y, h: float = 1e-6) -> np.ndarray:
    """Central differences of the mean loss, in Gradient.flatten() order."""
    kind = state.config.loss_kind
    out = []
    for w, b in zip(state.weights, state.biases):
        for p in (w, b):
            for i in np.ndindex(p.shape):
                orig = p[i]
                p[i] = orig + h
                up = nn.loss(nn.forward(state, X), y, kind)
                p[i] = orig - h
                down = nn.loss(nn.forward(state, X), y, kind)
                p[i] = orig
                out.append((up - down) / (2 * h))
    return np.array(out)


def relative_error(a, b, floor: float = 1e-7) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def brute_knn(X, s, q, L):
    """Full-sort reference: squared distance, ties to the lower index."""
    d2 = np.zeros(X.shape[0])
    for j in range(X.shape[1]):
        d2 = d2 + (X[:, j] - q[j]) ** 2
    order = sorted(range(X.shape[0]), key=lambda i: (d2[i], i))[:L]
    total = 0.0
    for i in order:
        total += s[i]
    return total / L, order
