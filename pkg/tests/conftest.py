import datetime as dt
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from cohortrisk.design import DesignMatrix  # noqa: E402
from cohortrisk.emr import CodeEvent, Dataset, Encounter, Ethnicity, EventKind, Gender, Patient, Race  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

D = dt.date


def patient(pid, birth=D(1980, 1, 1), gender=Gender.F, race=Race.WHITE, ethnicity=Ethnicity.NON_HISPANIC):
    return Patient(pid, birth, gender, race, ethnicity)


def enc(pid, date, department="Internal Medicine", *events):
    return Encounter(pid, date, department, tuple(events))


def dx(code):
    return CodeEvent(EventKind.DIAGNOSIS, code)


def vcode(code):
    return CodeEvent(EventKind.SUPPLEMENTAL, code)


def proc(code):
    return CodeEvent(EventKind.PROCEDURE, code)


def lab(code, value, low=None, high=None):
    return CodeEvent(EventKind.LAB, code, float(value), low, high)


def dataset(patients, encounters):
    return Dataset.from_records(patients, encounters)


def random_design(rng, n, p, beta=None, intercept=0.0, binary=True):
    X = (rng.random((n, p)) < 0.4).astype(float) if binary else rng.normal(size=(n, p))
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    prob = 1.0 / (1.0 + np.exp(-(intercept + X @ beta)))
    y = (rng.random(n) < prob).astype(float)
    return DesignMatrix(tuple(f"r{i}" for i in range(n)), tuple(f"x{j}" for j in range(p)), X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    number, title = mark.args
    _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, seconds = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}  ({seconds:.1f}s)")
