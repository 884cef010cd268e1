import sys
from pathlib import Path

import pytest

from safesched import build, prune
from safesched.core import Mode, ProbVec, RewardParams, RouteSpec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(Path(__file__).parent))


def route(rid, cls, completion, deadline, interarrival):
    """Route from {time: prob} maps, bounds taken from the largest key."""
    return RouteSpec(rid, cls, ProbVec.from_mapping(completion, max(completion)), deadline,
                     ProbVec.from_mapping(interarrival, max(interarrival)))


@pytest.fixture
def hs_specs():
    return (route(1, "hard", {3: 0.5, 4: 0.5}, 7, {8: 1.0}),
            route(2, "soft", {2: 1.0}, 3, {4: 1.0}))


@pytest.fixture
def baseline_specs():
    return (route(1, "hard", {3: 1.0}, 7, {8: 1.0}),
            route(2, "soft", {2: 1.0}, 3, {4: 1.0}))


@pytest.fixture
def params():
    return RewardParams()


@pytest.fixture
def hs_pe(hs_specs, params):
    return prune(build(hs_specs, params, Mode.PREEMPTIBLE))


@pytest.fixture
def hs_npe(hs_specs, params):
    return prune(build(hs_specs, params, Mode.NONPREEMPTIBLE))


# one verdict line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
