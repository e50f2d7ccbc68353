import numpy as np
import pytest

from windgen.grid_data import Calendar365, EnsembleSeries, GridMeta


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def grid3():
    return GridMeta.lattice(3, 3)


def make_series(values, meta=None, standardized=False):
    values = np.asarray(values, dtype=float)
    if meta is None:
        meta = GridMeta.lattice(1, values.shape[2])
    return EnsembleSeries(meta, Calendar365(1, values.shape[1] // 365), values, standardized=standardized)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed immediately and again in the terminal summary."""
    def record(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
