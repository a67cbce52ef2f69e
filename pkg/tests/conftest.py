import numpy as np
import pytest

from tgflab.field import GridSpec, random_divfree_field
from tgflab.operators import FluidParams, estimate_md


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32)


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16)


@pytest.fixture(scope="session")
def md32(grid32):
    return estimate_md(grid32)


@pytest.fixture(scope="session")
def params32(md32):
    return FluidParams(nu=1.0, alpha=0.5, beta=1.0).with_md(md32)


def random_fields(grid, count, seed=0, log_l2=(-1.0, 1.0)):
    """Fields with random spectral slope, seed and log-uniform L2 size."""
    rng = np.random.default_rng([seed, 17])
    return [
        random_divfree_field(
            grid,
            float(rng.uniform(1.5, 4.0)),
            seed=int(rng.integers(2**31)),
            l2=float(10 ** rng.uniform(*log_l2)),
        )
        for _ in range(count)
    ]


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print(f"\n[acceptance] {line}", flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
