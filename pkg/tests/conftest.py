import time
from contextlib import contextmanager

import pytest

# criterion number -> list of (ok, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}
TITLES: dict[int, str] = {}


@contextmanager
def criterion(n: int, title: str, budget_s: float, part: str = ""):
    """Record PASS/FAIL for acceptance criterion ``n``; over-budget runs count as failures."""
    TITLES[n] = title
    label = f"{part}: " if part else ""
    start = time.perf_counter()
    note = {}
    try:
        yield note
    except pytest.xfail.Exception:
        raise
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        ACCEPTANCE.setdefault(n, []).append((False, f"{label}{msg} [{elapsed:.1f}s]"))
        raise
    elapsed = time.perf_counter() - start
    detail = note.get("detail", "")
    ok = elapsed < budget_s
    extra = "" if ok else f"; runtime {elapsed:.1f}s exceeds {budget_s:.0f}s"
    ACCEPTANCE.setdefault(n, []).append((ok, f"{label}{detail}{extra} [{elapsed:.1f}s]"))
    if not ok:
        pytest.fail(f"criterion {n} over its runtime budget: {elapsed:.1f}s >= {budget_s:.0f}s")


def record_failure(n: int, title: str, detail: str, part: str = "") -> None:
    TITLES[n] = title
    ACCEPTANCE.setdefault(n, []).append((False, f"{part}: {detail}" if part else detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        details = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {n:>2} {status}  {TITLES[n]}  ({details})")
