import sys
from pathlib import Path

import pytest
from hypothesis import settings

from straggler_rca.model import Locality, MetricKind, MetricSeries, TaskRecord

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"


def task(tid, start, end, node="n1", stage="s0", locality=Locality.PROCESS_LOCAL, **counters):
    return TaskRecord(tid, stage, node, start, end, locality, **counters)


def series(kind, points, node="n1"):
    return MetricSeries(node, MetricKind(kind), tuple(points))


def flat(kind, value, t_end, node="n1", period=1000, t_start=0):
    return series(kind, [(t, value) for t in range(t_start, t_end + 1, period)], node)


@pytest.fixture
def data_dir():
    return DATA


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: int(k[1:])):
            terminalreporter.write_line(RESULTS[key])
