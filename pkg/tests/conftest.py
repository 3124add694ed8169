import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "qpm", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("qpm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -------------------------------------------------- acceptance summary lines

_CRITERIA: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call") or (rep.when == "setup" and rep.passed):
        return
    key, label = mark.args
    entry = _CRITERIA.setdefault(key, {"label": label, "ok": True, "notes": []})
    if not rep.passed:
        entry["ok"] = False
        crash = getattr(rep.longrepr, "reprcrash", None)
        msg = crash.message if crash is not None else str(rep.longrepr)
        entry["notes"].append(msg.splitlines()[0][:160])


def _order(key: str):
    head, _, tail = key.partition("-")
    return (int(head), tail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=_order):
        e = _CRITERIA[key]
        line = f"criterion {key:<12} {'PASS' if e['ok'] else 'FAIL'}  {e['label']}"
        if e["notes"]:
            line += "  -- " + e["notes"][0]
        tr.write_line(line)
