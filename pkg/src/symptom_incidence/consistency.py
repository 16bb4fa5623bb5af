"""Consistent-response filter.

A response in week ``w`` is consistent when the participant responded in at
least ``window_w - missing_m`` of the ``window_w`` weeks strictly before ``w``.
Weeks whose window reaches back before the first week of the data set are
never consistent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .survey_data import SurveyWeek, week_date, week_universe


@dataclass(frozen=True)
class ConsistencyParams:
    window_w: int = 4
    missing_m: int = 1

    def __post_init__(self):
        if self.window_w < 1:
            raise ValueError("window_w must be at least 1")
        if not 0 <= self.missing_m < self.window_w:
            raise ValueError("missing_m must satisfy 0 <= missing_m < window_w")

    @property
    def required(self) -> int:
        return self.window_w - self.missing_m


def is_consistent(
    history: Sequence,
    week: SurveyWeek,
    params: ConsistencyParams,
    universe_start: Optional[SurveyWeek] = None,
) -> bool:
    """Consistency of one participant's response in ``week``.

    ``history`` holds the participant's response records (anything with a
    ``week`` attribute).  ``universe_start`` is the first week of the data
    set; weeks with fewer than ``window_w`` earlier weeks are not consistent.
    """
    weeks = {r.week.index for r in history}
    if week.index not in weeks:
        raise ValueError(f"no response in week {week}")
    if universe_start is not None and week.index - universe_start.index < params.window_w:
        return False
    count = sum(1 for w in weeks if week.index - params.window_w <= w < week.index)
    return count >= params.required


def prior_response_counts(responses: pd.DataFrame, window_w: int) -> np.ndarray:
    """Responses by the same participant in the ``window_w`` weeks before each row.

    ``responses`` must be sorted by participant then week.
    """
    n = len(responses)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    codes, _ = pd.factorize(responses["participant_id"], sort=True)
    week = responses["week"].to_numpy(np.int64)
    span = int(week.max() - week.min()) + window_w + 2
    key = codes.astype(np.int64) * span + (week - week.min())
    if np.any(np.diff(key) <= 0):
        raise ValueError("responses must be sorted by participant and week without duplicates")
    lo = np.searchsorted(key, key - window_w, side="left")
    return np.arange(n) - lo


def consistency_marks(responses: pd.DataFrame, params: ConsistencyParams) -> pd.DataFrame:
    """``participant_id, week_ending, week, consistent`` for every response."""
    marks = responses[["participant_id", "week_ending", "week"]].copy()
    if len(responses) == 0:
        marks["consistent"] = np.zeros(0, dtype=bool)
        return marks
    counts = prior_response_counts(responses, params.window_w)
    start = int(responses["week"].min())
    warm = (responses["week"].to_numpy(np.int64) - start) < params.window_w
    marks["consistent"] = (counts >= params.required) & ~warm
    return marks


def consistent_subset(responses: pd.DataFrame, params: ConsistencyParams):
    """Return ``(consistent responses, marks)``."""
    marks = consistency_marks(responses, params)
    keep = marks["consistent"].to_numpy(bool)
    return responses[keep].reset_index(drop=True), marks


def warmup_weeks(responses: pd.DataFrame, window_w: int) -> np.ndarray:
    weeks = week_universe(responses)
    return weeks[:window_w]


def fraction_excluded(responses: pd.DataFrame, params: ConsistencyParams) -> pd.DataFrame:
    """Per-week share of responses that fail the consistency rule.

    Weeks without responses get NaN.
    """
    marks = consistency_marks(responses, params)
    weeks = week_universe(responses)
    total = marks.groupby("week").size()
    kept = marks[marks["consistent"]].groupby("week").size()
    out = pd.DataFrame({"week": weeks})
    out["week_ending"] = [week_date(w) for w in weeks]
    out["responses"] = out["week"].map(total).fillna(0).astype(int)
    out["consistent"] = out["week"].map(kept).fillna(0).astype(int)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = 1.0 - out["consistent"] / out["responses"].replace(0, np.nan)
    out["fraction_excluded"] = frac.astype(float)
    return out
