"""Collects the outcome of every test marked ``criterion(n)`` and prints one line per criterion."""

import pytest

CRITERIA = {
    1: "geometry ratios exact and similarity invariant",
    2: "Bogovskii divergence identity",
    3: "Bogovskii commutator identity",
    4: "Leray projector properties",
    5: "Stokes solver convergence and incompressibility",
    6: "harmonic pressure under solenoidal forcing",
    7: "transformation identities and localized divergence",
    8: "normal Hessian recovery",
    9: "estimate ratio bounded and stable",
    10: "harness determinism and exit codes",
}

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call":
        _RESULTS.setdefault(n, []).append(rep.passed)
    elif rep.failed:
        _RESULTS.setdefault(n, []).append(False)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _RESULTS.get(n)
        if runs is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(runs) else "FAIL"
        terminalreporter.write_line(f"AC{n:>2} {status:<7} {title} ({len(runs or [])} tests)")
