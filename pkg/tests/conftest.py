import sys

import numpy as np
import pytest

from dilrec.data import log_from_records


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance criteria verdicts after the run summary."""
    acceptance = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(acceptance, "ANNOUNCED", None) if acceptance else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_log(triples):
    """Log from (user, item, timestamp) triples with plain int labels."""
    return log_from_records([(f"u{u}", f"i{i}", t) for u, i, t in triples])


@pytest.fixture
def toy_log():
    # 8 users x 12 items over timestamps [0, 70); deterministic
    rng = np.random.default_rng(7)
    triples = []
    for t in range(70):
        triples.append((int(rng.integers(0, 8)), int(rng.integers(0, 12)), t))
    return make_log(triples)
