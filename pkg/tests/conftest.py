import io
from datetime import date

import pytest

from symptom_incidence.survey_data import (
    SYMPTOMS,
    ResponseRecord,
    SurveyWeek,
    responses_from_records,
    week_index,
)

START = week_index(date(2020, 5, 3))

# letters used in hand-written histories: C cough, F fever, T sore throat,
# S shortness of breath, N runny nose, L loss of taste/smell, A asymptomatic,
# '.' no response
LETTERS = {"C": "cough", "F": "fever", "T": "sore_throat", "S": "shortness_of_breath",
           "N": "runny_nose", "L": "loss_taste_smell"}


def record(pid, offset, code):
    flags = {s: False for s in SYMPTOMS}
    for ch in code:
        if ch != "A":
            flags[LETTERS[ch]] = True
    return ResponseRecord(pid, SurveyWeek.from_index(START + offset), **flags)


def history(pattern, pid="P1"):
    """``"CF C . CN"`` -> list of records (whitespace separated weeks)."""
    return [record(pid, i, code) for i, code in enumerate(pattern.split()) if code != "."]


def table(*patterns, ids=None):
    ids = ids or [f"P{i + 1}" for i in range(len(patterns))]
    recs = [r for pid, p in zip(ids, patterns) for r in history(p, pid)]
    return responses_from_records(recs)


def presence_table(matrix, start=START):
    """Response table from a participants x weeks 0/1 presence matrix (asymptomatic)."""
    recs = []
    for i, row in enumerate(matrix):
        for t, present in enumerate(row):
            if present:
                recs.append(ResponseRecord(f"P{i:04d}", SurveyWeek.from_index(start + t)))
    return responses_from_records(recs)


@pytest.fixture
def csv_text():
    def make(text):
        return io.StringIO(text)
    return make


def pytest_terminal_summary(terminalreporter):
    try:
        from tests.test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=str):
            terminalreporter.write_line(RESULTS[key])
