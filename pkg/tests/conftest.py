import numpy as np
import pytest

from drvar import Dataset, DesignSpec, term
from drvar.simlab import gen_dataset

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """Callable recording one PASS/FAIL line per acceptance criterion."""
    store = pytestconfig.stash[_ACCEPTANCE_KEY]

    def record(label, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        store.append(line)
        print(line)
        return ok

    return record


@pytest.fixture
def small_ds():
    """A 60-row draw from the simulation DGP."""
    return gen_dataset(60, np.random.default_rng(11))


@pytest.fixture
def ds800():
    return gen_dataset(800, np.random.default_rng(2024))


@pytest.fixture
def intercept_only():
    return DesignSpec.of()


@pytest.fixture
def toy_ds():
    rng = np.random.default_rng(5)
    n = 80
    z = rng.normal(size=(n, 2))
    x = (rng.random(n) < 1 / (1 + np.exp(-0.4 * z[:, 0]))).astype(float)
    y = 1.0 + z[:, 0] - 0.5 * z[:, 1] + 2.0 * x + rng.normal(size=n)
    return Dataset(y, x, z, ("a", "b"))


@pytest.fixture
def toy_specs():
    return DesignSpec.of(term("a"), term("b")), DesignSpec.of(term("a"), term("b"), term(x=True))
