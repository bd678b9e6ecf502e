"""Cohort data model, CSV ingestion and the canonical response/branch naming."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

RESPONSES: tuple[str, ...] = ("Math", "Phys", "Chem", "Bio", "His", "Geo", "Port", "Geom")
GAUSSIAN_RESPONSES: tuple[str, ...] = RESPONSES[:7]
SURVIVAL_RESPONSE = "Geom"

BRANCHES: tuple[str, ...] = (
    "Chemical engineering",
    "Electrical engineering",
    "Economical science",
    "Mathematics",
    "Physics",
    "Computer science",
    "Automation engineering",
    "Technological chemistry",
    "Bachelor in Chemistry",
    "Medical Physics",
)
BRANCH_INDEX: dict[str, int] = {b: k + 1 for k, b in enumerate(BRANCHES)}
_BRANCH_LOOKUP = {b.lower(): b for b in BRANCHES}

GENDERS = ("female", "male")
AGE_GROUPS = ("under21", "21plus")
STRATA = ("bonus", "no_bonus")

CSV_COLUMNS: tuple[str, ...] = (
    "student_id", "branch", "gender", "age_group", "bonus",
    "math", "phys", "chem", "bio", "his", "geo", "port",
    "attempts", "passed",
)
SCORE_COLUMNS = CSV_COLUMNS[5:12]


class CohortError(ValueError):
    """Validation failure while building a cohort.

    ``row`` is the 1-based data row (header excluded) when the error is
    tied to a specific record.
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where = f"row {row}"
            if column is not None:
                where += f", column {column!r}"
            where += ": "
        super().__init__(where + message)


class MissingColumnError(CohortError):
    pass


class NumericParseError(CohortError):
    pass


class DuplicateStudentError(CohortError):
    pass


class UnknownBranchError(CohortError):
    pass


class AttemptsError(CohortError):
    pass


class CategoryError(CohortError):
    pass


@dataclass(frozen=True)
class ResponseId:
    index: int
    label: str

    def __post_init__(self):
        if not 1 <= self.index <= 8 or RESPONSES[self.index - 1] != self.label:
            raise ValueError(f"invalid response id ({self.index}, {self.label!r})")

    @classmethod
    def from_label(cls, label: str) -> "ResponseId":
        for k, name in enumerate(RESPONSES):
            if name.lower() == label.strip().lower():
                return cls(k + 1, name)
        raise ValueError(f"unknown response label {label!r}; expected one of {RESPONSES}")

    @classmethod
    def from_index(cls, index: int) -> "ResponseId":
        if not 1 <= index <= 8:
            raise ValueError(f"response index {index} outside 1..8")
        return cls(index, RESPONSES[index - 1])

    @property
    def is_survival(self) -> bool:
        return self.label == SURVIVAL_RESPONSE


@dataclass(frozen=True)
class StudentRecord:
    student_id: str
    branch: str
    gender: str
    age_group: str
    stratum: str
    scores: tuple[float, ...]
    attempts: int
    passed: bool

    def __post_init__(self):
        if self.branch not in BRANCH_INDEX:
            raise UnknownBranchError(f"unknown branch {self.branch!r}")
        if self.gender not in GENDERS:
            raise CategoryError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.age_group not in AGE_GROUPS:
            raise CategoryError(f"age_group must be one of {AGE_GROUPS}, got {self.age_group!r}")
        if self.stratum not in STRATA:
            raise CategoryError(f"stratum must be one of {STRATA}, got {self.stratum!r}")
        if len(self.scores) != 7 or not all(math.isfinite(s) for s in self.scores):
            raise CohortError("scores must be 7 finite reals")
        if self.attempts < 1:
            raise AttemptsError(f"attempts must be >= 1, got {self.attempts}")


@dataclass(frozen=True)
class Cohort:
    records: tuple[StudentRecord, ...]
    branch_index: Mapping[str, int] = field(default_factory=lambda: dict(BRANCH_INDEX))

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        for row, rec in enumerate(self.records, start=1):
            if rec.student_id in seen:
                raise DuplicateStudentError(f"duplicate student_id {rec.student_id!r}", row=row)
            seen.add(rec.student_id)
            if rec.branch not in self.branch_index:
                raise UnknownBranchError(f"branch {rec.branch!r} missing from branch index", row=row)

    @property
    def n(self) -> int:
        return len(self.records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def student_ids(self) -> list[str]:
        return [r.student_id for r in self.records]

    def scores(self) -> np.ndarray:
        """n x 7 array of exam scores in canonical response order."""
        if not self.records:
            return np.zeros((0, 7))
        return np.array([r.scores for r in self.records], dtype=float)

    def branches(self) -> np.ndarray:
        """0-based branch index per record."""
        return np.array([self.branch_index[r.branch] - 1 for r in self.records], dtype=int)

    def attempts(self) -> np.ndarray:
        return np.array([r.attempts for r in self.records], dtype=int)

    def passed(self) -> np.ndarray:
        return np.array([r.passed for r in self.records], dtype=bool)

    @property
    def n_branches(self) -> int:
        return len(self.branch_index)

    def subset(self, keep: Iterable[bool]) -> "Cohort":
        return Cohort(tuple(r for r, k in zip(self.records, keep) if k), self.branch_index)


def _canonical_branch(raw: str, row: int) -> str:
    key = raw.strip().lower()
    if key not in _BRANCH_LOOKUP:
        raise UnknownBranchError(f"unknown branch label {raw!r}", row=row, column="branch")
    return _BRANCH_LOOKUP[key]


_GENDER_CODES = {"f": "female", "female": "female", "m": "male", "male": "male"}
_AGE_CODES = {"under21": "under21", "21plus": "21plus"}
_FLAG_CODES = {"0": False, "1": True}


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise NumericParseError(f"cannot parse {raw!r} as a number", row=row, column=column) from None
    if not math.isfinite(value):
        raise NumericParseError(f"non-finite value {raw!r}", row=row, column=column)
    return value


def _parse_int(raw: str, row: int, column: str) -> int:
    try:
        return int(raw.strip())
    except ValueError:
        raise NumericParseError(f"cannot parse {raw!r} as an integer", row=row, column=column) from None


def _parse_flag(raw: str, row: int, column: str) -> bool:
    key = raw.strip()
    if key not in _FLAG_CODES:
        raise CategoryError(f"expected 0 or 1, got {raw!r}", row=row, column=column)
    return _FLAG_CODES[key]


def parse_row(values: Mapping[str, str], row: int) -> StudentRecord:
    """Validate one CSV row (already keyed by canonical column names)."""
    gender = _GENDER_CODES.get(values["gender"].strip().lower())
    if gender is None:
        raise CategoryError(f"gender must be F or M, got {values['gender']!r}", row=row, column="gender")
    age = _AGE_CODES.get(values["age_group"].strip().lower())
    if age is None:
        raise CategoryError(
            f"age_group must be under21 or 21plus, got {values['age_group']!r}", row=row, column="age_group"
        )
    attempts = _parse_int(values["attempts"], row, "attempts")
    if attempts < 1:
        raise AttemptsError(f"attempts must be >= 1, got {attempts}", row=row, column="attempts")
    student_id = values["student_id"].strip()
    if not student_id:
        raise CohortError("empty student_id", row=row, column="student_id")
    return StudentRecord(
        student_id=student_id,
        branch=_canonical_branch(values["branch"], row),
        gender=gender,
        age_group=age,
        stratum="bonus" if _parse_flag(values["bonus"], row, "bonus") else "no_bonus",
        scores=tuple(_parse_float(values[c], row, c) for c in SCORE_COLUMNS),
        attempts=attempts,
        passed=_parse_flag(values["passed"], row, "passed"),
    )


def load_cohort(path: str | Path, schema: Mapping[str, str] | None = None) -> Cohort:
    """Read and validate a cohort CSV.

    ``schema`` optionally maps canonical column names to the names used in
    the file; unmapped columns are expected under their canonical name.
    """
    schema = dict(schema or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        source = {c: schema.get(c, c) for c in CSV_COLUMNS}
        for canonical, col in source.items():
            if col not in header:
                raise MissingColumnError(f"missing column {col!r} (for {canonical!r}) in {path}")
        records = []
        seen: dict[str, int] = {}
        for row, raw in enumerate(reader, start=1):
            values = {c: (raw[col] if raw[col] is not None else "") for c, col in source.items()}
            rec = parse_row(values, row)
            if rec.student_id in seen:
                raise DuplicateStudentError(
                    f"duplicate student_id {rec.student_id!r} (first seen at row {seen[rec.student_id]})",
                    row=row, column="student_id",
                )
            seen[rec.student_id] = row
            records.append(rec)
    return Cohort(tuple(records))


def _fmt(x: float) -> str:
    return repr(float(x))


def cohort_rows(cohort: Cohort) -> list[list[str]]:
    rows = []
    for r in cohort.records:
        rows.append(
            [r.student_id, r.branch, "M" if r.gender == "male" else "F", r.age_group,
             "1" if r.stratum == "bonus" else "0", *(_fmt(s) for s in r.scores),
             str(r.attempts), "1" if r.passed else "0"]
        )
    return rows


def write_cohort(cohort: Cohort, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(cohort_rows(cohort))


def stratify(cohort: Cohort) -> tuple[Cohort, Cohort]:
    """Split into (bonus, no_bonus) sub-cohorts, preserving record order."""
    bonus = tuple(r for r in cohort.records if r.stratum == "bonus")
    rest = tuple(r for r in cohort.records if r.stratum == "no_bonus")
    return Cohort(bonus, cohort.branch_index), Cohort(rest, cohort.branch_index)


@dataclass(frozen=True)
class DesignMatrix:
    """Fixed-effects design: intercept, male indicator, 21plus indicator."""

    matrix: np.ndarray
    columns: tuple[str, ...]
    deficient: tuple[str, ...]

    @property
    def full_rank(self) -> bool:
        return not self.deficient

    def reduced(self) -> "DesignMatrix":
        """Drop the columns flagged as degenerate."""
        keep = [k for k, c in enumerate(self.columns) if c not in self.deficient]
        return DesignMatrix(self.matrix[:, keep], tuple(self.columns[k] for k in keep), ())


def design_matrix(cohort: Cohort) -> DesignMatrix:
    if cohort.n == 0:
        raise CohortError("design matrix requested for an empty cohort")
    male = np.array([r.gender == "male" for r in cohort.records], dtype=float)
    older = np.array([r.age_group == "21plus" for r in cohort.records], dtype=float)
    X = np.column_stack([np.ones(cohort.n), male, older])
    columns = ("intercept", "male", "age21plus")
    deficient = tuple(name for name, col in zip(columns[1:], (male, older)) if np.all(col == col[0]))
    if not deficient and np.linalg.matrix_rank(X) < 3:
        # gender and age perfectly aliased
        deficient = ("age21plus",)
    return DesignMatrix(X, columns, deficient)
