import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gaussian_kernel(k: int, sx: float, sy: float | None = None, center=(0.0, 0.0)) -> np.ndarray:
    """Unit-sum sampled Gaussian; ``sx`` along columns, ``sy`` along rows."""
    sy = sx if sy is None else sy
    d = np.arange(k) - k // 2
    g = np.exp(-0.5 * ((d[:, None] - center[0]) / sy) ** 2 - 0.5 * ((d[None, :] - center[1]) / sx) ** 2)
    return g / g.sum()


# --------------------------------------------------------------------------
# acceptance runs last so it can see how the module suites fared

OUTCOMES: dict[str, str] = {}


def _is_acceptance(item) -> bool:
    return item.path.name == "test_acceptance.py"


def pytest_collection_modifyitems(config, items):
    items.sort(key=_is_acceptance)
    OUTCOMES.clear()
    OUTCOMES.update({item.nodeid: "not run" for item in items if not _is_acceptance(item)})


def pytest_runtest_logreport(report):
    if report.nodeid not in OUTCOMES:
        return
    if report.when == "call" or report.outcome != "passed":
        OUTCOMES[report.nodeid] = report.outcome


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
