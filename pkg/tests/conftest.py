from __future__ import annotations

import numpy as np
import pytest

from mvglmm.core import BRANCHES, Cohort, StudentRecord

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def make_record(i: int, branch: int = 0, gender: str = "female", age: str = "under21", stratum: str = "bonus",
                scores=None, attempts: int = 1, passed: bool = True) -> StudentRecord:
    return StudentRecord(
        student_id=f"x{i:04d}",
        branch=BRANCHES[branch],
        gender=gender,
        age_group=age,
        stratum=stratum,
        scores=tuple(scores if scores is not None else [0.0] * 7),
        attempts=attempts,
        passed=passed,
    )


def random_cohort(n: int, seed: int = 0, max_attempts: int = 5) -> Cohort:
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        records.append(make_record(
            i,
            branch=int(rng.integers(10)),
            gender="male" if rng.random() < 0.5 else "female",
            age="21plus" if rng.random() < 0.3 else "under21",
            stratum="bonus" if rng.random() < 0.5 else "no_bonus",
            scores=rng.normal(size=7),
            attempts=int(rng.integers(1, max_attempts + 1)),
            passed=bool(rng.random() < 0.7),
        ))
    return Cohort(tuple(records))


@pytest.fixture
def small_cohort() -> Cohort:
    return random_cohort(40, seed=3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
