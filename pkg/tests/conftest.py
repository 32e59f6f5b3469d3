import re

import pytest

from jobshop_rl.instance import generate_random, parse_standard

WORKED_TEXT = "2 3\n2 10 0 27 1 14\n1 20 2 12 0 12\n"


@pytest.fixture
def worked():
    """Two jobs on three machines; non-delay optimum 51."""
    return parse_standard(WORKED_TEXT, name="worked")


@pytest.fixture
def single():
    return parse_standard("1 1\n0 5\n", name="single")


@pytest.fixture
def small_random():
    return generate_random(3, 3, (1, 9), seed=1)


# ---- one pass/fail line per acceptance criterion ---------------------------

_criteria: dict[str, list[tuple[str, str, str]]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1]
        crit = re.match(r"\d+", name.split("_")[2]).group()
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        _criteria.setdefault(crit, []).append(("PASS" if report.passed else "FAIL", name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_criteria, key=int):
        checks = _criteria[crit]
        status = "PASS" if all(c[0] == "PASS" for c in checks) else "FAIL"
        details = "; ".join(f"{c[1].split('_', 3)[-1]}: {c[0]}" + (f" [{c[2]}]" if c[2] else "") for c in checks)
        terminalreporter.write_line(f"criterion {crit}: {status} -- {details}")
