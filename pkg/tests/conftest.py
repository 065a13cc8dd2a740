import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance criteria register (label, passed, detail) here; printed at the end
CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(CRITERIA, key=lambda c: _order(c[0])):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")


def _order(label):
    head = label.split()[1] if label.startswith("criterion") else label
    digits = "".join(ch for ch in head if ch.isdigit())
    return (int(digits) if digits else 99, head)
