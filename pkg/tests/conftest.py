import contextlib

import pytest

_VERDICTS = {}


class _Verdict:
    def __init__(self):
        self.ok = False
        self.detail = ""


@pytest.fixture
def criterion():
    """``with criterion(n) as v: ... v.ok = ...; v.detail = ...`` records one PASS/FAIL line."""

    @contextlib.contextmanager
    def open_(n):
        v = _Verdict()
        try:
            yield v
        except Exception as exc:
            v.ok, v.detail = False, f"{type(exc).__name__}: {exc}"
            raise
        finally:
            line = f"criterion {n}: {'PASS' if v.ok else 'FAIL'}  {v.detail}"
            _VERDICTS[n] = line
            print(line)
        assert v.ok, line

    return open_


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
