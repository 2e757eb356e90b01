import numpy as np
import pytest

from longtrend.data_model import ScorePanel, TestKey


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, passed, detail)``."""
    log = request.config._criteria

    def record(number, passed, detail=""):
        log.append((number, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = sorted(getattr(config, "_criteria", []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in rows:
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def make_panel(ratios_by_test, items_per_test=10, cohort="c1", subject="mathematics", seed=0):
    """Panel whose item responses hit the requested per-student correct counts.

    ``ratios_by_test`` is (n_students, n_tests); each entry is rounded to a
    whole number of correct items.
    """
    rng = np.random.default_rng(seed)
    ratios = np.asarray(ratios_by_test, dtype=float)
    n, m = ratios.shape
    tests = [TestKey(f"T{t + 1}", "S", subject, 4 + t, None, 2014 + t, t) for t in range(m)]
    students = [f"s{i:03d}" for i in range(n)]
    items, responses = {}, {}
    for t, key in enumerate(tests):
        items[key.test_id] = [(f"{key.year}-{j + 1}", f"topic {j + 1}") for j in range(items_per_test)]
        resp = np.zeros((n, items_per_test), dtype=np.uint8)
        for i in range(n):
            k = int(round(ratios[i, t] * items_per_test))
            resp[i, rng.permutation(items_per_test)[:k]] = 1
        responses[key.test_id] = resp
    return ScorePanel(cohort, subject, tests, students, items, responses)


@pytest.fixture
def small_panel():
    rng = np.random.default_rng(7)
    base = rng.uniform(0.2, 0.8, size=40)
    ratios = np.clip(base[:, None] + rng.normal(0, 0.05, size=(40, 4)), 0, 1)
    return make_panel(ratios, items_per_test=20)
