import numpy as np
import pytest

from feded.data import gen_synthetic
from feded.losses import ClassPrior


def central_diff(fn, x, h=1e-5):
    """Central finite differences of scalar ``fn`` at array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (fn(up) - fn(down)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


def random_instance(rng, max_batch=8, max_classes=10, scale=3.0):
    """Logits, teacher logits, labels and a prior with a random (possibly empty) empty-class set."""
    b = int(rng.integers(1, max_batch + 1))
    c = int(rng.integers(2, max_classes + 1))
    counts = rng.integers(0, 5, size=c)
    counts[rng.integers(c)] += 1
    if rng.random() < 0.25:
        counts = rng.integers(1, 5, size=c)  # no empty classes
    prior = ClassPrior.from_counts(counts)
    labels = rng.choice(prior.observed, size=b)
    f = rng.normal(0, scale, size=(b, c))
    g = rng.normal(0, scale, size=(b, c))
    return f, g, labels, prior


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    return gen_synthetic(num_classes=4, dim=6, per_class=30, spread=1.0, seed=3)


# criterion number -> (status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
