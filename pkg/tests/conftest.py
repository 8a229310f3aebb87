import numpy as np
import pytest

from hilbertlayers.collision import CollisionKernel, assemble_linearized
from hilbertlayers.velocity import build_grid


@pytest.fixture(scope="session")
def grid24():
    return build_grid(8.0, 24)


@pytest.fixture(scope="session")
def grid16():
    return build_grid(6.0, 16, moment_tol=1e-6)


@pytest.fixture(scope="session")
def bgk16(grid16):
    return assemble_linearized(CollisionKernel("bgk"), grid16)


@pytest.fixture(scope="session")
def hs_small():
    grid = build_grid(5.0, 8, moment_tol=1e-2)
    return assemble_linearized(CollisionKernel("cutoff"), grid, eager=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Records named sub-checks of one acceptance criterion for the summary table."""
    entry = _ACCEPTANCE.setdefault(request.node.name, {"checks": [], "passed": False})

    def record(name, ok, value=None):
        entry["checks"].append((name, bool(ok), value))
        return bool(ok)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.name in _ACCEPTANCE:
        _ACCEPTANCE[item.name]["passed"] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[name]
        ok = entry["passed"] and all(c[1] for c in entry["checks"])
        detail = ", ".join(f"{n}={v:.4g}" if isinstance(v, float) else f"{n}={v}" for n, _, v in entry["checks"] if v is not None)
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
