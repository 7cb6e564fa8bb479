import pytest

from stochlab.randomness import RandomStream


@pytest.fixture
def stream():
    return RandomStream(20240607)


class ScriptedCoin:
    """Feeds a fixed bit sequence to samplers that only call ``next_bit``."""

    def __init__(self, bits):
        self.bits = list(bits)
        self.used = 0

    def next_bit(self):
        if self.used >= len(self.bits):
            raise IndexError("script exhausted")
        b = self.bits[self.used]
        self.used += 1
        return b


_criteria: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    detail = getattr(item, "criterion_detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _criteria[number] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        verdict, title, detail = _criteria[number]
        line = f"[{verdict}] criterion {number:2d}: {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
    passed = sum(v == "PASS" for v, _, _ in _criteria.values())
    terminalreporter.write_line(f"{passed}/{len(_criteria)} criteria passed")
