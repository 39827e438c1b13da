from pathlib import Path

import numpy as np
import pytest

from vickrey_due.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario(name):
    return load_scenario(SCENARIOS / f"{name}.json")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def bottleneck():
    return scenario("bottleneck")


@pytest.fixture(scope="session")
def diamond():
    return scenario("diamond")


@pytest.fixture(scope="session")
def uncongested():
    return scenario("uncongested")


@pytest.fixture(scope="session")
def merge():
    return scenario("merge")


@pytest.fixture(scope="session")
def rectangle():
    return scenario("rectangle")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
