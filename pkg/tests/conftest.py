import itertools
import math

import numpy as np
import pytest

from occupancy import catalog


def enumerate_occupancy(probs, n, r_max=3):
    """Exact E K, Var K and E K_r by summing over every allocation of n balls."""
    probs = list(probs)
    m = len(probs)
    ek = ek2 = 0.0
    ekr = [0.0] * (r_max + 1)
    for alloc in itertools.product(range(m), repeat=n):
        w = math.prod(probs[a] for a in alloc)
        counts = np.bincount(alloc, minlength=m)
        k = int(np.count_nonzero(counts))
        ek += w * k
        ek2 += w * k * k
        for r in range(1, r_max + 1):
            ekr[r] += w * int(np.sum(counts == r))
    return ek, ek2 - ek * ek, ekr


@pytest.fixture(scope="session")
def models():
    return catalog()


@pytest.fixture(scope="session")
def infinite_models(models):
    return {k: m for k, m in models.items() if m.infinite}


class AcceptanceLedger:
    """Collects one outcome per acceptance criterion for the closing summary."""

    def __init__(self):
        self.results = {}

    def record(self, number, ok, detail):
        prev_ok, prev_detail = self.results.get(number, (True, ""))
        joined = f"{prev_detail}; {detail}" if prev_detail else detail
        self.results[number] = (prev_ok and bool(ok), joined)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")

    def lines(self):
        for number in sorted(self.results):
            ok, detail = self.results[number]
            yield f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"


_LEDGER = AcceptanceLedger()


@pytest.fixture(scope="session")
def acceptance():
    return _LEDGER


def pytest_terminal_summary(terminalreporter):
    if not _LEDGER.results:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LEDGER.lines():
        terminalreporter.write_line(line)
