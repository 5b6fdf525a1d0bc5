import numpy as np
import pytest

from grande.model import init_parameters


def random_params(rng, E=4, depth=3, n=5, spread=True):
    """Parameters with non-zero leaves so every gradient path is exercised."""
    params = init_parameters(E, depth, n, rng)
    if spread:
        params.index_logits[...] = rng.standard_normal(params.index_logits.shape)
        params.leaf_values[...] = rng.standard_normal(params.leaf_values.shape)
        params.leaf_weights[...] = rng.standard_normal(params.leaf_weights.shape)
    return params


def xor_data(seed, n=400, noise=0.3):
    rng = np.random.default_rng(seed)
    corner = rng.integers(0, 2, (n, 2))
    x = (2 * corner - 1) + rng.normal(0.0, noise, (n, 2))
    return x, corner[:, 0] ^ corner[:, 1]


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append((number, f"[{status}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")))
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
