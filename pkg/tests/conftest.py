import pytest

# acceptance criterion number -> (verdict, detail); filled by test_acceptance.py
CRITERIA: dict[int, tuple[str, str]] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    CRITERIA[n] = ("PASS" if ok else "FAIL", detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        verdict, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict} - {detail}")


@pytest.fixture
def rng():
    import numpy as np
    return np.random.default_rng(12345)
