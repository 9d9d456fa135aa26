import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from helpers import TRACE_LOG

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Every optimize_segment call in the session goes through this wrapper, so
# objective monotonicity is checked on all optimizer runs, not a sample.


@pytest.fixture(autouse=True, scope="session")
def _record_objective_traces():
    from terdagger import editor

    original = editor.solve_orientations

    def recording(*args, **kwargs):
        out = original(*args, **kwargs)
        trace = out[1]
        TRACE_LOG["runs"] += 1
        bad = [i for i in range(1, len(trace)) if trace[i] > trace[i - 1]]
        if bad:
            TRACE_LOG["violations"].append(trace)
        return out

    editor.solve_orientations = recording
    yield TRACE_LOG
    editor.solve_orientations = original
    assert not TRACE_LOG["violations"], f"{len(TRACE_LOG['violations'])} non-monotone objective traces"


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_RESULTS

    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)
