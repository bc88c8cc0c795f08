import time

import numpy as np
import pytest

from fdd.core import GRID, make_template

ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Collects the verdict for one acceptance criterion.

    Used as a context manager: the body runs the checks and appends notes to
    ``details``; the criterion passes when the body raises nothing and the
    wall time stays under ``limit_s``.
    """

    def __init__(self, number: int, title: str, limit_s: float | None = None):
        self.number, self.title, self.limit_s = number, title, limit_s
        self.details: list[str] = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        dt = time.perf_counter() - self.t0
        ok = exc_type is None
        note = list(self.details)
        if exc_type is not None:
            note.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        note.append(f"{dt:.1f}s" + (f" (limit {self.limit_s:g}s)" if self.limit_s else ""))
        if ok and self.limit_s is not None and dt >= self.limit_s:
            ok = False
            ACCEPTANCE_LINES.append(f"[FAIL] #{self.number} {self.title}: " + "; ".join(note))
            raise AssertionError(f"criterion {self.number} took {dt:.1f}s, limit {self.limit_s}s")
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] #{self.number} {self.title}: " + "; ".join(note))
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)


def rect_mask(top, left, h, w):
    m = np.zeros((GRID, GRID), dtype=bool)
    m[top:top + h, left:left + w] = True
    return m


def random_template(rng, c=6, density=0.7, meta=None):
    mask = rng.random((GRID, GRID)) < density
    return make_template(rng.standard_normal((2 * c, GRID, GRID)), mask, meta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
