"""Symptom groupings, incident runs and onset marking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import pandas as pd

from .survey_data import SYMPTOMS, ResponseRecord, SurveyWeek, week_date

COUGH, FEVER = SYMPTOMS.index("cough"), SYMPTOMS.index("fever")


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class SymptomGrouping:
    """A named predicate over the six symptom flags.

    ``predicate`` receives a boolean array whose last axis holds the flags in
    ``SYMPTOMS`` order and must reduce over that axis, so the same function
    serves single reports and whole tables.
    """

    name: str
    predicate: Callable[[np.ndarray], np.ndarray]

    def __call__(self, flags) -> np.ndarray:
        return self.predicate(np.asarray(flags, dtype=bool))

    def __str__(self):
        return self.name


CLI1 = SymptomGrouping("CLI1+", lambda s: s.sum(axis=-1) >= 1)
CLI2 = SymptomGrouping("CLI2+", lambda s: s.sum(axis=-1) >= 2)
ILI = SymptomGrouping("ILI", lambda s: s[..., COUGH] & s[..., FEVER])

GROUPINGS = {g.name: g for g in (CLI1, CLI2, ILI)}
DEFAULT_GROUPINGS = (CLI1, CLI2, ILI)


def get_grouping(name) -> SymptomGrouping:
    if isinstance(name, SymptomGrouping):
        return name
    try:
        return GROUPINGS[name]
    except KeyError:
        raise ValueError(f"unknown symptom grouping {name!r}; known: {', '.join(GROUPINGS)}") from None


def meets_grouping(report: ResponseRecord, grouping) -> bool:
    return bool(get_grouping(grouping)(report.symptoms))


def qualifies(responses: pd.DataFrame, grouping) -> np.ndarray:
    """Row-wise grouping predicate over a response table."""
    flags = responses[list(SYMPTOMS)].to_numpy(dtype=bool)
    return np.asarray(get_grouping(grouping)(flags), dtype=bool).reshape(len(responses))


@dataclass(frozen=True)
class Incident:
    incident_id: str
    participant_id: str
    grouping: str
    onset_week: SurveyWeek
    member_weeks: tuple  # SurveyWeek, qualifying and bridged, ascending
    bridged_weeks: tuple = ()


def _runs(weeks: Sequence[int], hits: Sequence[bool]) -> list[tuple[list[int], list[int]]]:
    """Group qualifying weeks into runs.

    A run continues across one missing week; a responded, non-qualifying week
    or two or more missing weeks end it.  Returns ``(members, bridged)`` pairs.
    """
    runs = []
    members = bridged = None
    last = None
    for w, hit in zip(weeks, hits):
        if not hit:
            members = None
            continue
        if members is not None and w - last == 2:
            bridged.append(w - 1)
            members.append(w - 1)
        elif members is None or w - last != 1:
            members, bridged = [], []
            runs.append((members, bridged))
        members.append(w)
        last = w
    return runs


def assign_incidents(history: Sequence[ResponseRecord], grouping) -> list[Incident]:
    """Split one participant's history into incidents of ``grouping``.

    ``history`` must be sorted by week with at most one record per week.
    """
    grouping = get_grouping(grouping)
    if not history:
        return []
    pid = history[0].participant_id
    weeks = [r.week.index for r in history]
    for r, (a, b) in zip(history[1:], zip(weeks, weeks[1:])):
        if b <= a:
            raise ContractError("history must be sorted by week with no duplicate weeks")
        if r.participant_id != pid:
            raise ContractError("history mixes participants")
    flags = np.array([r.symptoms for r in history], dtype=bool)
    hits = grouping(flags)
    out = []
    for members, bridged in _runs(weeks, hits.tolist()):
        onset = SurveyWeek.from_index(members[0])
        out.append(
            Incident(
                incident_id=incident_id(pid, grouping.name, onset),
                participant_id=pid,
                grouping=grouping.name,
                onset_week=onset,
                member_weeks=tuple(SurveyWeek.from_index(w) for w in members),
                bridged_weeks=tuple(SurveyWeek.from_index(w) for w in bridged),
            )
        )
    return out


def incident_id(participant_id: str, grouping: str, onset: SurveyWeek) -> str:
    return f"{participant_id}|{grouping}|{onset.ending_date.isoformat()}"


def onset_flags(responses: pd.DataFrame, grouping) -> np.ndarray:
    """Boolean onset flag per row of a response table sorted by participant, week.

    A qualifying response is a continuation when the participant's previous
    response qualified and lies at most two weeks earlier (adjacent, or with
    one missing week in between); otherwise it is an onset.
    """
    hit = qualifies(responses, grouping)
    if len(responses) == 0:
        return hit
    pid = responses["participant_id"].to_numpy()
    week = responses["week"].to_numpy(np.int64)
    same = np.zeros(len(hit), dtype=bool)
    same[1:] = pid[1:] == pid[:-1]
    if same.any():
        if np.any(week[1:][same[1:]] <= week[:-1][same[1:]]):
            raise ContractError("responses must be sorted by participant and week")
    prev_hit = np.zeros_like(hit)
    prev_hit[1:] = hit[:-1]
    gap = np.full(len(hit), np.iinfo(np.int64).max)
    gap[1:] = week[1:] - week[:-1]
    continuation = same & prev_hit & (gap <= 2)
    return hit & ~continuation


def mark_onsets(responses: pd.DataFrame, grouping) -> pd.DataFrame:
    """Per-response ``is_onset`` table for one grouping."""
    out = responses[["participant_id", "week_ending", "week"]].copy()
    out["is_onset"] = onset_flags(responses, grouping)
    return out


def onset_column(grouping) -> str:
    return f"onset_{get_grouping(grouping).name}"


def add_onset_columns(responses: pd.DataFrame, groupings: Iterable = DEFAULT_GROUPINGS) -> pd.DataFrame:
    """Copy of ``responses`` with an ``onset_<grouping>`` column per grouping."""
    out = responses.copy()
    for g in groupings:
        out[onset_column(g)] = onset_flags(responses, g)
    return out


def incidents_table(responses: pd.DataFrame, groupings: Iterable = DEFAULT_GROUPINGS) -> pd.DataFrame:
    """Flat incident listing for debugging exports."""
    rows = []
    groupings = [get_grouping(g) for g in groupings]
    for pid, sub in responses.groupby("participant_id", sort=True):
        weeks = sub["week"].tolist()
        for g in groupings:
            hits = qualifies(sub, g).tolist()
            for members, _ in _runs(weeks, hits):
                onset = SurveyWeek.from_index(members[0])
                rows.append(
                    {
                        "participant_id": pid,
                        "grouping": g.name,
                        "incident_id": incident_id(pid, g.name, onset),
                        "onset_week": onset.ending_date.isoformat(),
                        "member_weeks": ";".join(week_date(w).isoformat() for w in members),
                    }
                )
    cols = ["participant_id", "grouping", "incident_id", "onset_week", "member_weeks"]
    return pd.DataFrame(rows, columns=cols)
