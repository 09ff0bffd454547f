import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

MNIST_DIR = Path(os.environ.get("CCLFP_MNIST", "/root/data/mnist"))


def fd_grad(f, x, step=1e-5):
    """Central differences, written independently of the library."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + step
        hi = f(x)
        x[idx] = old - step
        lo = f(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * step)
    return g


def rel_err(a, b):
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / den


@pytest.fixture(scope="session")
def mnist():
    if not (MNIST_DIR / "train-images-idx3-ubyte").exists() and not (MNIST_DIR / "train-images-idx3-ubyte.gz").exists():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set CCLFP_MNIST)")
    from cclfp.data import load_mnist
    return load_mnist(MNIST_DIR)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    """Remember one pass/fail line; printed in the terminal summary."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
