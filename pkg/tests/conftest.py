from __future__ import annotations

import numpy as np
import pytest

from ccerco.dispatch import ScheduleConfig, solve_m0, solve_m1, solve_schedule, train_bundle
from ccerco.grid import case_from_dict, compute_sensitivities, load_case
from ccerco.scenarios import sample_gaussian

TRAIN_SEED = 1
VALIDATE_SEED = 2
N = 10000


@pytest.fixture(scope="session")
def pjm():
    return load_case("pjm5")


@pytest.fixture(scope="session")
def pjm_sens(pjm):
    return compute_sensitivities(pjm)


@pytest.fixture(scope="session")
def pjm_train(pjm):
    return sample_gaussian(N, pjm.wind_mean, pjm.wind_std, TRAIN_SEED)


@pytest.fixture(scope="session")
def pjm_validate(pjm):
    return sample_gaussian(N, pjm.wind_mean, pjm.wind_std, VALIDATE_SEED)


@pytest.fixture(scope="session")
def pjm_bundle(pjm, pjm_train, pjm_sens):
    return train_bundle(pjm, pjm_train, ScheduleConfig(), pjm_sens)


@pytest.fixture(scope="session")
def pjm_m1(pjm, pjm_sens, pjm_train):
    return solve_m1(pjm, pjm_sens, pjm_train)


@pytest.fixture(scope="session")
def pjm_m0_raw(pjm, pjm_sens, pjm_bundle):
    return solve_m0(pjm, pjm_sens, pjm_bundle)


@pytest.fixture(scope="session")
def pjm_m0(pjm, pjm_sens, pjm_train, pjm_bundle):
    return solve_schedule(pjm, pjm_train, ScheduleConfig(), bundle=pjm_bundle, sens=pjm_sens)


@pytest.fixture(scope="session")
def ieee118():
    return load_case("ieee118")


def small_case(**overrides) -> dict:
    """Three-bus ring with two generators and one wind farm."""
    data = {
        "name": "ring3",
        "base_mva": 100.0,
        "slack_bus": 1,
        "buses": [{"id": 1, "demand": 0.0}, {"id": 2, "demand": 100.0}, {"id": 3, "demand": 50.0}],
        "lines": [
            {"id": 1, "from": 1, "to": 2, "x": 0.1, "limit": 500.0},
            {"id": 2, "from": 2, "to": 3, "x": 0.1, "limit": 500.0},
            {"id": 3, "from": 1, "to": 3, "x": 0.1, "limit": 500.0},
        ],
        "generators": [
            {"id": 1, "bus": 1, "p_min": 0.0, "p_max": 200.0, "cost_energy": 10.0, "cost_reserve": 2.0},
            {"id": 2, "bus": 3, "p_min": 0.0, "p_max": 200.0, "cost_energy": 20.0, "cost_reserve": 4.0},
        ],
        "wind_farms": [
            {"id": 1, "bus": 2, "forecast": 50.0, "capacity": 150.0, "deviation_mean": 0.0, "deviation_std": 20.0},
        ],
    }
    data.update(overrides)
    return data


@pytest.fixture
def ring3():
    return case_from_dict(small_case())


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Record and print one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
