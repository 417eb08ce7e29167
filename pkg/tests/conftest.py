import contextlib

import pytest

_VERDICTS: dict[int, tuple[str, str, str]] = {}


class _Verdict:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for one acceptance criterion."""

    @contextlib.contextmanager
    def record(number: int, title: str):
        v = _Verdict()
        try:
            yield v
        except BaseException as exc:
            why = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            _VERDICTS[number] = (title, "FAIL", "; ".join(x for x in (v.detail, why) if x))
            raise
        _VERDICTS[number] = (title, "PASS", v.detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        title, status, detail = _VERDICTS[n]
        terminalreporter.write_line(f"[{n}] {status}  {title}" + (f"  ({detail})" if detail else ""))
