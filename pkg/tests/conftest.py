from pathlib import Path

import pytest

from rareci.io import load_dataset

DATA = Path(__file__).resolve().parents[1] / "src" / "rareci" / "data"
_CRITERIA: dict[str, list[tuple[bool, str]]] = {}


@pytest.fixture(scope="session")
def toy():
    return load_dataset("toy")


@pytest.fixture(scope="session")
def pair():
    return load_dataset("two_category")


@pytest.fixture
def criterion():
    """Record one checked item under an acceptance criterion label."""

    def record(label: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.setdefault(label, []).append((bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0])):
        items = _CRITERIA[label]
        ok = all(p for p, _ in items)
        failed = [d for p, d in items if not p]
        line = f"[{'PASS' if ok else 'FAIL'}] {label} ({sum(p for p, _ in items)}/{len(items)} checks)"
        terminalreporter.write_line(line)
        for d in failed:
            terminalreporter.write_line(f"       failed: {d}")
