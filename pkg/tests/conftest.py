import numpy as np
import pytest


def disk(size: int, radius: float, cx: float | None = None, cy: float | None = None) -> np.ndarray:
    cx = (size - 1) / 2 if cx is None else cx
    cy = (size - 1) / 2 if cy is None else cy
    ys, xs = np.mgrid[:size, :size]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2


def ellipse(size: int, a: float, b: float) -> np.ndarray:
    c = (size - 1) / 2
    ys, xs = np.mgrid[:size, :size]
    return ((xs - c) / a) ** 2 + ((ys - c) / b) ** 2 <= 1.0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """8 classes x 8 images at 128 px with a 56-dim feature file; built once."""
    from leafscope import cli

    root = tmp_path_factory.mktemp("small")
    assert cli.main(["synth", "-o", str(root), "--count", "8", "--size", "128"]) == 0
    assert cli.main(["extract", str(root / "manifest.tsv"), "-o", str(root / "hcf.txt")]) == 0
    return root


# one PASS/FAIL line per acceptance criterion at the end of the run
_criteria: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_", 1)[1]
    if report.failed or (report.when == "call" and report.outcome != "passed"):
        _criteria[name] = "FAIL" if report.failed else report.outcome.upper()
    elif report.when == "call":
        _criteria.setdefault(name, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria):
        num, _, label = name.partition("_")
        terminalreporter.write_line(f"criterion {int(num):2d} {label.replace('_', ' '):<32} {_criteria[name]}")
