import pytest

from tactile_filter.bank import PegImageBank
from tactile_filter.geometry import glyph_library, make_pose_grid, parse_glyph_set


@pytest.fixture(scope="session")
def small_bank():
    return PegImageBank.build(glyph_library(parse_glyph_set("A-L"), "small"), make_pose_grid("small"))


@pytest.fixture(scope="session")
def large_bank():
    return PegImageBank.build(glyph_library(parse_glyph_set("A-L"), "large"), make_pose_grid("large"))


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Records a PASS/FAIL line for an acceptance criterion, then asserts it."""

    def record(number: int, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
