from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from gcb_lab import kernels

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CRITERIA: dict[int, list] = {}


def record(number: int, name: str, ok: bool, detail: str = "") -> None:
    """Store one part of an acceptance criterion; a criterion passes only if all parts do."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}"
    if detail:
        line += f"  ({detail})"
    CRITERIA.setdefault(number, []).append((bool(ok), line))
    print(line)


@pytest.fixture(params=kernels.available())
def backend_module(request):
    return kernels.load(request.param)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            parts = CRITERIA[k]
            ok = all(p[0] for p in parts)
            terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}")
            for _, line in parts:
                terminalreporter.write_line(f"    {line}")
