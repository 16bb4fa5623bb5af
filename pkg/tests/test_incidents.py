import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symptom_incidence.incidents import (
    CLI1,
    CLI2,
    ILI,
    ContractError,
    add_onset_columns,
    assign_incidents,
    get_grouping,
    incidents_table,
    meets_grouping,
    onset_flags,
)
from symptom_incidence.survey_data import responses_from_records
from symptom_incidence.synth import incident_oracle
from tests.conftest import START, history, record, table


def onsets(incs):
    return [i.onset_week.index - START for i in incs]


def test_grouping_predicates():
    assert meets_grouping(record("P", 0, "CF"), ILI)
    assert meets_grouping(record("P", 0, "N"), CLI1)
    assert not meets_grouping(record("P", 0, "N"), CLI2)
    assert not meets_grouping(record("P", 0, "A"), CLI1)
    assert get_grouping("CLI2+") is CLI2
    with pytest.raises(ValueError):
        get_grouping("CLI3+")


def test_predicates_vectorise():
    flags = np.zeros((3, 4, 6), dtype=bool)
    flags[1, 2, [0, 1]] = True
    assert ILI(flags).shape == (3, 4)
    assert ILI(flags).sum() == 1


def test_worked_example():
    h = history("CF C CN")
    assert onsets(assign_incidents(h, CLI1)) == [0]
    assert onsets(assign_incidents(h, CLI2)) == [0, 2]
    assert onset_flags(table("CF C CN"), CLI2).tolist() == [True, False, True]


def test_single_gap_is_bridged():
    (inc,) = assign_incidents(history("C . C"), CLI1)
    assert onsets([inc]) == [0]
    assert [w.index - START for w in inc.bridged_weeks] == [1]
    assert [w.index - START for w in inc.member_weeks] == [0, 1, 2]


def test_double_gap_starts_new_incident():
    assert onsets(assign_incidents(history("C . . C"), CLI1)) == [0, 3]


def test_asymptomatic_history_has_no_incidents():
    assert assign_incidents(history("A A A"), CLI1) == []
    assert assign_incidents([], CLI1) == []


def test_isolated_qualifying_week():
    assert onset_flags(table("A A N A A"), CLI1).tolist() == [False, False, True, False, False]


def test_asymptomatic_interstitial_week_breaks_run():
    assert onsets(assign_incidents(history("C A C"), CLI1)) == [0, 2]


def test_contract_violations():
    h = history("C C")
    with pytest.raises(ContractError):
        assign_incidents(h[::-1], CLI1)
    with pytest.raises(ContractError):
        assign_incidents([h[0], h[0]], CLI1)
    with pytest.raises(ContractError):
        assign_incidents([record("P1", 0, "C"), record("P2", 1, "C")], CLI1)
    t = table("C C").iloc[::-1].reset_index(drop=True)
    with pytest.raises(ContractError):
        onset_flags(t, CLI1)


def test_incident_ids_stable_and_unique():
    h = history("C . C A CF CF")
    a = assign_incidents(h, CLI1)
    b = assign_incidents(h, CLI1)
    assert [i.incident_id for i in a] == [i.incident_id for i in b]
    assert len({i.incident_id for i in a}) == len(a) == 2


def test_incidents_table_matches_assign():
    t = table("C . C A CF", "N N . . N")
    out = incidents_table(t, [CLI1])
    assert out["incident_id"].tolist() == [
        "P1|CLI1+|2020-05-03",
        "P1|CLI1+|2020-05-31",
        "P2|CLI1+|2020-05-03",
        "P2|CLI1+|2020-05-31",
    ]


codes = st.sampled_from([".", "A", "N", "TN", "CF", "C", "CFS", "L"])


@given(st.lists(codes, min_size=1, max_size=14))
@settings(max_examples=200, deadline=None)
def test_matches_oracle_and_nesting(pattern):
    h = history(" ".join(pattern))
    if not h:
        return
    t = responses_from_records(h)
    members = {}
    for g in (CLI1, CLI2, ILI):
        inc = assign_incidents(h, g)
        assert inc == incident_oracle(h, g)
        # exactly one onset per incident, at the incident's first week
        flags = onset_flags(t, g)
        assert flags.sum() == len(inc)
        assert sorted(t["week"][flags]) == [i.onset_week.index for i in inc]
        members[g.name] = {w.index for i in inc for w in i.member_weeks if w not in i.bridged_weeks}
    assert members["ILI"] <= members["CLI2+"] <= members["CLI1+"]


def test_add_onset_columns_is_deterministic():
    t = table("CF C CN", "A N . N")
    a = add_onset_columns(t)
    b = add_onset_columns(t)
    assert a.equals(b)
    assert {"onset_CLI1+", "onset_CLI2+", "onset_ILI"} <= set(a.columns)
