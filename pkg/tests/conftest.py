import numpy as np
import pytest

from boaug import search_engine

# Every RunHistory produced anywhere in the suite passes through these
# wrappers, which check the best-so-far curve as it is returned.
HISTORIES = []
VIOLATIONS = []
ACCEPTANCE = {}


def _check_monotone(history):
    curve = history.best_so_far()
    HISTORIES.append(curve)
    if not np.all(np.diff(curve) <= 0):
        VIOLATIONS.append(history.run)
        raise AssertionError(f"best-so-far not monotone for run {history.run}")
    return history


_run_single_bo = search_engine.run_single_bo
_random_search = search_engine.random_search


def _tracked_run_single_bo(*args, **kwargs):
    return _check_monotone(_run_single_bo(*args, **kwargs))


def _tracked_random_search(*args, **kwargs):
    return _check_monotone(_random_search(*args, **kwargs))


search_engine.run_single_bo = _tracked_run_single_bo
search_engine.random_search = _tracked_random_search


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    # criterion 7 covers every history produced anywhere in the session
    ACCEPTANCE[7] = (not VIOLATIONS and bool(HISTORIES),
                     f"{len(HISTORIES)} best-so-far curves checked, {len(VIOLATIONS)} non-monotone")
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_image(rng):
    return rng.integers(0, 256, size=(12, 10, 3), dtype=np.uint8)
