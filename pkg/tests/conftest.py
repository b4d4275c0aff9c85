import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# acceptance.py appends (criterion, passed, detail) tuples here
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")


def binary_dataset(n, tau=1.0, scale=4.0, seed=0, t=None):
    """Binary logits [0, z], z ~ U[-scale, scale], labels ~ Bernoulli(sigmoid(z / tau))."""
    from tempcal import Dataset
    rng = np.random.default_rng(seed)
    z = rng.uniform(-scale, scale, n)
    y = (rng.random(n) < 1 / (1 + np.exp(-z / tau))).astype(int)
    return Dataset(np.column_stack([np.zeros(n), z]), y, t=t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
