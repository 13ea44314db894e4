from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

SMALL = """\
graph.kind = ring
graph.n = 5
problem.kind = regression
problem.d = 3
problem.m = 3
problem.lambda = 0.1
alpha = 0.001
noise.sigma = 0.001
iterations = 40
trials = 3
master_seed = 11
"""


@pytest.fixture
def small_config(tmp_path):
    def make(extra="", name="run.cfg"):
        path = tmp_path / name
        path.write_text(SMALL + extra + f"output_dir = {tmp_path / 'out'}\n")
        return path

    return make


# -- acceptance report: one line per criterion in the terminal summary


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    number, title = mark.args
    detail = ""
    if rep.failed:
        crash = getattr(rep.longrepr, "reprcrash", None)
        detail = crash.message.splitlines()[0] if crash is not None else str(rep.longrepr).splitlines()[-1]
    item.config._criteria[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status, detail = results[number]
        line = f"criterion {number:>2}: {status}  {title}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
