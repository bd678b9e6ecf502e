from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvglmm.core import (
    BRANCHES, CSV_COLUMNS, RESPONSES, AttemptsError, Cohort, CohortError, DuplicateStudentError,
    MissingColumnError, NumericParseError, ResponseId, UnknownBranchError, design_matrix, load_cohort,
    stratify, write_cohort,
)

from conftest import make_record, random_cohort

HEADER = ",".join(CSV_COLUMNS)


def _row(sid="a1", branch="Mathematics", gender="F", age="under21", bonus="1", scores="0,0,0,0,0,0,0",
         attempts="2", passed="1"):
    return f"{sid},{branch},{gender},{age},{bonus},{scores},{attempts},{passed}"


def _write(tmp_path, rows, header=HEADER):
    p = tmp_path / "c.csv"
    p.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return p


def test_response_ids_are_fixed_bijection():
    assert [ResponseId.from_index(k).label for k in range(1, 9)] == list(RESPONSES)
    assert ResponseId.from_label("Geom").index == 8
    assert [r for r in RESPONSES if ResponseId.from_label(r).is_survival] == ["Geom"]
    with pytest.raises(ValueError):
        ResponseId.from_index(9)


def test_three_row_csv(tmp_path):
    p = _write(tmp_path, [_row("a"), _row("b", bonus="0"), _row("c", attempts="1", passed="0")])
    cohort = load_cohort(p)
    assert cohort.n == 3
    assert cohort.records[2].passed is False


def test_attempts_zero_names_row_and_constraint(tmp_path):
    p = _write(tmp_path, [_row("a"), _row("b", attempts="0")])
    with pytest.raises(AttemptsError) as exc:
        load_cohort(p)
    assert exc.value.row == 2
    assert "attempts" in str(exc.value) and ">= 1" in str(exc.value)


@pytest.mark.parametrize("rows, header, error", [
    ([_row()], HEADER.replace(",geo", ""), MissingColumnError),
    ([_row(scores="0,0,x,0,0,0,0")], HEADER, NumericParseError),
    ([_row(scores="0,0,nan,0,0,0,0")], HEADER, NumericParseError),
    ([_row("a"), _row("a")], HEADER, DuplicateStudentError),
    ([_row(branch="Astrology")], HEADER, UnknownBranchError),
])
def test_distinct_row_addressed_errors(tmp_path, rows, header, error):
    with pytest.raises(error) as exc:
        load_cohort(_write(tmp_path, rows, header))
    assert isinstance(exc.value, CohortError)


def test_branch_labels_case_insensitive(tmp_path):
    p = _write(tmp_path, [_row(branch="  mathematics ")])
    assert load_cohort(p).records[0].branch == "Mathematics"
    assert len(BRANCHES) == 10


def test_299_rows_stratify_151_148(tmp_path):
    rows = [_row(f"s{i}", bonus="1" if i < 151 else "0") for i in range(299)]
    bonus, no_bonus = stratify(load_cohort(_write(tmp_path, rows)))
    assert (bonus.n, no_bonus.n) == (151, 148)


def test_stratify_degenerate_and_counting():
    all_nb = Cohort(tuple(make_record(i, stratum="no_bonus") for i in range(4)))
    b, nb = stratify(all_nb)
    assert (b.n, nb.n) == (0, 4)
    mixed = Cohort(tuple(make_record(i, stratum="bonus" if i in (1, 3) else "no_bonus") for i in range(5)))
    b, nb = stratify(mixed)
    assert (b.n, nb.n) == (2, 3)
    assert b.student_ids == ["x0001", "x0003"]


@given(st.integers(0, 10_000), st.integers(1, 60))
@settings(max_examples=25, deadline=None)
def test_stratify_is_partition(seed, n):
    cohort = random_cohort(n, seed)
    b, nb = stratify(cohort)
    assert b.n + nb.n == cohort.n
    assert set(b.student_ids).isdisjoint(nb.student_ids)
    assert set(b.student_ids) | set(nb.student_ids) == set(cohort.student_ids)
    assert all(r.stratum == "bonus" for r in b.records)


def test_round_trip_is_identity(tmp_path):
    cohort = random_cohort(30, 11)
    path = tmp_path / "rt.csv"
    write_cohort(cohort, path)
    again = load_cohort(path)
    assert again.records == cohort.records
    write_cohort(again, tmp_path / "rt2.csv")
    assert (tmp_path / "rt2.csv").read_bytes() == path.read_bytes()


def test_design_matrix_degenerate_levels():
    cohort = Cohort(tuple(make_record(i) for i in range(3)))
    dm = design_matrix(cohort)
    assert not dm.full_rank
    assert set(dm.deficient) == {"male", "age21plus"}
    assert dm.reduced().columns == ("intercept",)


def test_design_matrix_full_factorial_and_coding():
    cells = [("female", "under21"), ("male", "under21"), ("female", "21plus"), ("male", "21plus")]
    cohort = Cohort(tuple(make_record(i, gender=g, age=a) for i, (g, a) in enumerate(cells)))
    dm = design_matrix(cohort)
    assert dm.full_rank and dm.matrix.shape == (4, 3)
    assert np.linalg.matrix_rank(dm.matrix) == 3
    assert dm.matrix[3].tolist() == [1.0, 1.0, 1.0]


@given(st.integers(0, 1000))
@settings(max_examples=20, deadline=None)
def test_design_matrix_row_permutation(seed):
    cohort = random_cohort(12, seed)
    perm = np.random.default_rng(seed).permutation(cohort.n)
    permuted = Cohort(tuple(cohort.records[k] for k in perm))
    assert np.array_equal(design_matrix(permuted).matrix, design_matrix(cohort).matrix[perm])


def test_record_invariants():
    with pytest.raises(CohortError):
        make_record(0, attempts=0)
    with pytest.raises(CohortError):
        make_record(0, scores=[0.0] * 6)
    with pytest.raises(CohortError):
        make_record(0, scores=[np.inf] + [0.0] * 6)
