"""Trade-off grid over consistency parameters (window size, missing weeks allowed)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .consistency import ConsistencyParams, consistency_marks
from .estimation import prepare_cells, relative_change, weekly_proportions
from .incidents import DEFAULT_GROUPINGS, add_onset_columns, get_grouping
from .raking import NATIONAL, compute_weights
from .survey_data import five_year_bands, week_date, week_universe

logger = logging.getLogger(__name__)

DEFAULT_W = tuple(range(1, 9))
DEFAULT_M = (0, 1, 2)
EXCLUSION_THRESHOLD = 0.25
MINIMAL_WINDOWS = ((1, 0), (2, 1), (3, 2))

WEEKLY_COLUMNS = ["window_w", "missing_m", "grouping", "week_ending", "responses", "consistent",
                  "fraction_excluded", "baseline", "estimate", "relative_change"]


@dataclass
class SweepResult:
    weekly: pd.DataFrame
    summary: pd.DataFrame
    warnings: list = field(default_factory=list)


def parse_range(text: str) -> list[int]:
    """``"1..8"``, ``"1,2,5"`` or ``"4"`` to a list of ints."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def filter_high_exclusion_weeks(series: pd.DataFrame, threshold: float = EXCLUSION_THRESHOLD) -> pd.DataFrame:
    """Drop weeks whose excluded fraction exceeds ``threshold`` (or is undefined)."""
    frac = series["fraction_excluded"].astype(float)
    out = series[(frac <= threshold).to_numpy()]
    if len(series) and out.empty:
        logger.warning("every week exceeds the %.0f%% exclusion threshold", 100 * threshold)
    return out


def _quartiles(values: pd.Series, prefix: str) -> dict:
    v = values.dropna().to_numpy(float)
    if v.size == 0:
        return {f"{prefix}_{k}": np.nan for k in ("min", "q1", "median", "q3", "max")}
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip((f"{prefix}_{k}" for k in ("min", "q1", "median", "q3", "max")), q))


def summarize_sweep(weekly: pd.DataFrame, threshold: float = EXCLUSION_THRESHOLD) -> pd.DataFrame:
    rows = []
    for (w, m, g), sub in weekly.groupby(["window_w", "missing_m", "grouping"], sort=True):
        for label, part in (("all_weeks", sub), ("filtered", filter_high_exclusion_weeks(sub, threshold))):
            row = {"window_w": w, "missing_m": m, "grouping": g, "weeks": label, "n_weeks": len(part)}
            row.update(_quartiles(part["fraction_excluded"], "fraction_excluded"))
            row.update(_quartiles(part["relative_change"], "relative_change"))
            rows.append(row)
    return pd.DataFrame(rows)


def run_sweep(
    responses: pd.DataFrame,
    w_range: Iterable[int] = DEFAULT_W,
    m_range: Iterable[int] = DEFAULT_M,
    groupings: Sequence = DEFAULT_GROUPINGS,
    weighting: bool = False,
    participants: Optional[pd.DataFrame] = None,
    reference=None,
    bands=None,
    scope=NATIONAL,
    trim_warmup: bool = False,
    threshold: float = EXCLUSION_THRESHOLD,
) -> SweepResult:
    """Excluded fraction and relative incidence change for every valid (W, M).

    The baseline is the unweighted estimate over all responses.  With
    ``trim_warmup`` the first ``max(W)`` weeks are dropped for every grid
    point so that all grid points share one week set.
    """
    groupings = [get_grouping(g) for g in groupings]
    w_range, m_range = sorted(set(w_range)), sorted(set(m_range))
    notes = []
    data = add_onset_columns(responses, groupings)
    baseline = weekly_proportions(data, groupings)
    weeks = week_universe(responses)
    if trim_warmup and w_range:
        weeks = weeks[max(w_range):]
    if weighting and (participants is None or reference is None):
        raise ValueError("weighting needs participants and a reference population")
    bands = bands or five_year_bands()

    frames = []
    for w in w_range:
        for m in m_range:
            if not 0 <= m < w:
                notes.append(f"skipping invalid grid point W={w}, M={m}")
                logger.warning(notes[-1])
                continue
            params = ConsistencyParams(w, m)
            marks = consistency_marks(responses, params)
            keep = marks["consistent"].to_numpy(bool)
            total = marks.groupby("week").size()
            kept = marks[keep].groupby("week").size()
            if weighting:
                wt, _ = compute_weights(responses[keep].reset_index(drop=True), participants,
                                        reference, bands, scope)
                est = weekly_proportions(prepare_cells(data, marks, wt, groupings), groupings, "weight")
            else:
                est = weekly_proportions(data[keep], groupings)
            for g in groupings:
                f = pd.DataFrame({"week": weeks})
                f["window_w"], f["missing_m"], f["grouping"] = w, m, g.name
                f["week_ending"] = [week_date(x).isoformat() for x in weeks]
                f["responses"] = f["week"].map(total).fillna(0).astype(int)
                f["consistent"] = f["week"].map(kept).fillna(0).astype(int)
                with np.errstate(divide="ignore", invalid="ignore"):
                    f["fraction_excluded"] = 1.0 - f["consistent"] / f["responses"].replace(0, np.nan)
                f["baseline"] = f["week"].map(baseline[g.name]).astype(float)
                f["estimate"] = (f["week"].map(est[g.name]) if g.name in est else np.nan)
                f["estimate"] = f["estimate"].astype(float)
                f["relative_change"] = relative_change(f["estimate"], f["baseline"])
                frames.append(f)
    if frames:
        weekly = pd.concat(frames, ignore_index=True)
    else:
        weekly = pd.DataFrame(columns=["week"] + WEEKLY_COLUMNS)
    weekly = weekly.sort_values(["window_w", "missing_m", "grouping", "week"], kind="mergesort")
    weekly = weekly.reset_index(drop=True)
    summary = summarize_sweep(weekly, threshold)
    return SweepResult(weekly, summary, notes)
