"""Weighted incidence proportions with logit-scale confidence intervals."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import expit, logit

from .consistency import ConsistencyParams, consistency_marks
from .incidents import DEFAULT_GROUPINGS, add_onset_columns, get_grouping, onset_column
from .raking import NATIONAL, compute_weights
from .survey_data import AgeBand, ReferencePopulation, SurveyWeek, assign_band, five_year_bands, week_date

logger = logging.getLogger(__name__)

LOGIT = "logit"
EXACT_FALLBACK = "exact_fallback"
NO_VARIANCE = "no_variance"
ALPHA = 0.05


def z_quantile(level: float = 0.95) -> float:
    return float(stats.norm.ppf(0.5 + level / 2))


def weighted_proportion(y, w) -> float:
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.size == 0:
        raise ValueError("empty cell")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return float(np.dot(w, y) / w.sum())


def linearized_variance(y, w, p_hat: Optional[float] = None) -> float:
    """With-replacement linearization variance of a weighted proportion.

    Weights are treated as fixed.  Returns NaN for a single observation.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n = y.size
    if n < 2:
        return float("nan")
    if p_hat is None:
        p_hat = weighted_proportion(y, w)
    z = w * (y - p_hat) / w.sum()
    return float(n / (n - 1) * np.sum((z - z.mean()) ** 2))


def _variance_from_sums(n, sw, sw2, swy, sw2y):
    # sum_i w_i^2 (y_i - p)^2 with y in {0,1}; the linearized scores sum to zero
    p = swy / sw
    ss = sw2y * (1 - 2 * p) + p * p * sw2
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(n > 1, n / (n - 1) * np.maximum(ss, 0.0) / sw**2, np.nan)
    return p, var


def exact_interval(p_hat: float, n_eff: float, level: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson interval at a (possibly fractional) effective size."""
    alpha = 1 - level
    x = p_hat * n_eff
    lo = 0.0 if x <= 0 else float(stats.beta.ppf(alpha / 2, x, n_eff - x + 1))
    hi = 1.0 if x >= n_eff else float(stats.beta.ppf(1 - alpha / 2, x + 1, n_eff - x))
    return lo, hi


def logit_ci(p_hat: float, var: float, level: float = 0.95) -> tuple[float, float]:
    """Wald interval on the log-odds scale, mapped back to a proportion.

    Degenerate estimates (``p_hat`` of 0 or 1, or zero variance) give the
    zero-width interval ``(p_hat, p_hat)``; see :func:`cell_interval` for the
    exact fallback used in estimate tables.
    """
    if not 0 < p_hat < 1 or var == 0:
        return float(p_hat), float(p_hat)
    se = np.sqrt(var) / (p_hat * (1 - p_hat))
    half = z_quantile(level) * se
    centre = logit(p_hat)
    return float(expit(centre - half)), float(expit(centre + half))


def logit_se(p_hat: float, var: float) -> float:
    if not 0 < p_hat < 1:
        return float("nan")
    return float(np.sqrt(var) / (p_hat * (1 - p_hat)))


def cell_interval(p_hat, var, n, sum_w, sum_w2, level=0.95):
    """``(ci_low, ci_high, method)`` for one cell."""
    if n < 2 or not np.isfinite(var):
        return float("nan"), float("nan"), NO_VARIANCE
    if p_hat <= 0 or p_hat >= 1:
        lo, hi = exact_interval(p_hat, sum_w**2 / sum_w2, level)
        return lo, hi, EXACT_FALLBACK
    lo, hi = logit_ci(p_hat, var, level)
    return lo, hi, LOGIT


@dataclass(frozen=True)
class EstimateCell:
    grouping: str
    week: Optional[SurveyWeek]
    factor_name: str
    factor_value: str
    n: int
    p_hat: float
    ci_low: float
    ci_high: float
    sum_w: float
    sum_w2: float
    var: float
    method: str

    @property
    def se_logit(self) -> float:
        return logit_se(self.p_hat, self.var)

    def as_row(self) -> dict:
        return {
            "grouping": self.grouping,
            "week_ending": self.week.ending_date.isoformat() if self.week else "",
            "factor_name": self.factor_name,
            "factor_value": self.factor_value,
            "n": self.n,
            "p_hat": self.p_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "method": self.method,
        }


def estimate_cell(y, w, grouping="", week=None, factor_name="all", factor_value="all",
                  level: float = 0.95) -> EstimateCell:
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    p = weighted_proportion(y, w)
    var = linearized_variance(y, w, p)
    sw, sw2 = float(w.sum()), float(np.dot(w, w))
    lo, hi, method = cell_interval(p, var, y.size, sw, sw2, level)
    return EstimateCell(str(grouping), week, factor_name, factor_value, int(y.size), p, lo, hi,
                        sw, sw2, var, method)


ESTIMATE_COLUMNS = ["grouping", "week_ending", "factor_name", "factor_value", "n", "p_hat",
                    "ci_low", "ci_high", "method"]


def cells_frame(cells: Iterable[EstimateCell]) -> pd.DataFrame:
    return pd.DataFrame([c.as_row() for c in cells], columns=ESTIMATE_COLUMNS)


def prepare_cells(
    responses: pd.DataFrame,
    marks: Optional[pd.DataFrame] = None,
    weights: Optional[pd.DataFrame] = None,
    groupings: Sequence = DEFAULT_GROUPINGS,
) -> pd.DataFrame:
    """Responses with onset columns, restricted to the consistent subset and
    joined to weights (unit weights when ``weights`` is None).

    Onsets are always classified on the full response history.
    """
    groupings = [get_grouping(g) for g in groupings]
    data = responses
    if any(onset_column(g) not in data.columns for g in groupings):
        data = add_onset_columns(responses, groupings)
    if marks is not None:
        keep = data[["participant_id", "week"]].merge(
            marks[["participant_id", "week", "consistent"]], on=["participant_id", "week"], how="left"
        )["consistent"].fillna(False).to_numpy(bool)
        data = data[keep]
    if weights is None:
        data = data.assign(weight=1.0)
    else:
        cols = ["participant_id", "week", "weight"] + (["scope"] if "scope" in weights else [])
        data = data.merge(weights[cols], on=["participant_id", "week"], how="inner", validate="1:m")
    return data.reset_index(drop=True)


def estimate_by(
    responses: pd.DataFrame,
    marks: Optional[pd.DataFrame] = None,
    weights: Optional[pd.DataFrame] = None,
    groupings: Sequence = DEFAULT_GROUPINGS,
    factor: Optional[str] = None,
    participants: Optional[pd.DataFrame] = None,
    age_bands: Optional[Sequence[AgeBand]] = None,
    level: float = 0.95,
) -> list[EstimateCell]:
    """One estimate per (grouping, week[, factor level]).

    ``factor`` is None (week only), ``"age"`` (needs ``participants`` and
    ``age_bands``) or ``"location"`` (taken from the ``scope`` column of
    ``weights``).  Cells are fitted independently.
    """
    groupings = [get_grouping(g) for g in groupings]
    data = prepare_cells(responses, marks, weights, groupings)
    if factor is None:
        data = data.assign(factor_level="all")
        factor_name = "all"
    elif factor == "age":
        if participants is None or age_bands is None:
            raise ValueError("age factor needs participants and age bands")
        if "age" not in data.columns:
            data = data.merge(participants[["participant_id", "age"]], on="participant_id", how="left")
        data = data.assign(factor_level=assign_band(data["age"], age_bands).to_numpy())
        dropped = int(data["factor_level"].isna().sum())
        if dropped:
            logger.warning("%d response(s) without age left out of age-band cells", dropped)
        data = data[data["factor_level"].notna()]
        factor_name = "age_band"
    elif factor == "location":
        if "scope" not in data.columns:
            raise ValueError("location factor needs weights with a scope column")
        data = data.assign(factor_level=data["scope"])
        factor_name = "location"
    else:
        raise ValueError(f"unknown factor {factor!r}")

    order = None
    if factor == "age":
        order = {b.label: i for i, b in enumerate(age_bands)}
    cells = []
    w = data["weight"].to_numpy(float)
    base = pd.DataFrame({"week": data["week"].to_numpy(), "factor_level": data["factor_level"].to_numpy(),
                         "w": w, "w2": w * w})
    for g in groupings:
        y = data[onset_column(g)].to_numpy(float)
        frame = base.assign(wy=w * y, w2y=w * w * y)
        sums = frame.groupby(["week", "factor_level"], sort=True).agg(
            n=("w", "size"), sw=("w", "sum"), sw2=("w2", "sum"), swy=("wy", "sum"), sw2y=("w2y", "sum")
        )
        sums = sums.reset_index()
        if order is not None:
            sums["_order"] = sums["factor_level"].map(order)
            sums = sums.sort_values(["week", "_order"], kind="mergesort")
        p, var = _variance_from_sums(sums["n"].to_numpy(float), sums["sw"].to_numpy(),
                                     sums["sw2"].to_numpy(), sums["swy"].to_numpy(),
                                     sums["sw2y"].to_numpy())
        for row, p_i, v_i in zip(sums.itertuples(index=False), p, var):
            p_i = float(min(max(p_i, 0.0), 1.0))
            lo, hi, method = cell_interval(p_i, v_i, row.n, row.sw, row.sw2, level)
            if method == LOGIT:
                lo, hi = min(lo, p_i), max(hi, p_i)
            cells.append(EstimateCell(g.name, SurveyWeek.from_index(int(row.week)), factor_name,
                                      str(row.factor_level), int(row.n), p_i, lo, hi, float(row.sw),
                                      float(row.sw2), float(v_i), method))
    return cells


@dataclass(frozen=True)
class GroupComparison:
    cell_a: EstimateCell
    cell_b: EstimateCell
    z: float
    p_value: float
    significant: bool
    indeterminate: bool = False

    def as_row(self) -> dict:
        a, b = self.cell_a, self.cell_b
        return {
            "grouping": a.grouping,
            "week_ending": a.week.ending_date.isoformat() if a.week else "",
            "location_a": a.factor_value,
            "location_b": b.factor_value,
            "p_a": a.p_hat,
            "p_b": b.p_hat,
            "z": self.z,
            "p_value": self.p_value,
            "significant": self.significant,
        }


COMPARISON_COLUMNS = ["grouping", "week_ending", "location_a", "location_b", "p_a", "p_b", "z",
                      "p_value", "significant"]


def compare_groups(cell_a: EstimateCell, cell_b: EstimateCell, alpha: float = ALPHA) -> GroupComparison:
    """Two-sided Wald test of equal incidence on the log-odds scale."""
    se_a, se_b = cell_a.se_logit, cell_b.se_logit
    ok = (0 < cell_a.p_hat < 1 and 0 < cell_b.p_hat < 1 and np.isfinite(se_a) and np.isfinite(se_b))
    se = np.sqrt(se_a**2 + se_b**2) if ok else float("nan")
    if not ok or se == 0:
        return GroupComparison(cell_a, cell_b, float("nan"), float("nan"), False, True)
    z = float((logit(cell_a.p_hat) - logit(cell_b.p_hat)) / se)
    p = float(min(1.0, 2 * stats.norm.sf(abs(z))))
    return GroupComparison(cell_a, cell_b, z, p, p < alpha, False)


def compare_locations(cells: Sequence[EstimateCell], loc_a: str, loc_b: str) -> list[GroupComparison]:
    """Pair up the two locations' cells by (grouping, week) and test each pair."""
    index = {(c.grouping, c.week, c.factor_value): c for c in cells}
    out = []
    keys = sorted({(c.grouping, c.week) for c in cells}, key=lambda k: (k[0], k[1].index))
    for g, wk in keys:
        a, b = index.get((g, wk, loc_a)), index.get((g, wk, loc_b))
        if a is not None and b is not None:
            out.append(compare_groups(a, b))
    return out


def comparisons_frame(comparisons: Iterable[GroupComparison]) -> pd.DataFrame:
    return pd.DataFrame([c.as_row() for c in comparisons], columns=COMPARISON_COLUMNS)


def weekly_proportions(data: pd.DataFrame, groupings: Sequence, weight: Optional[str] = None) -> pd.DataFrame:
    """Point estimates only: one column per grouping, indexed by week."""
    w = data[weight].to_numpy(float) if weight else np.ones(len(data))
    frame = pd.DataFrame({"week": data["week"].to_numpy(), "w": w})
    out = {}
    for g in groupings:
        g = get_grouping(g)
        frame["wy"] = w * data[onset_column(g)].to_numpy(float)
        s = frame.groupby("week")[["w", "wy"]].sum()
        out[g.name] = s["wy"] / s["w"]
    return pd.DataFrame(out)


ADJUSTMENTS = ("consistent_only", "weighted_only", "both")


def relative_change(adjusted, naive):
    adjusted = np.asarray(adjusted, dtype=float)
    naive = np.asarray(naive, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(naive > 0, (adjusted - naive) / naive, np.nan)


def adjustment_effect(
    responses: pd.DataFrame,
    participants: pd.DataFrame,
    reference: ReferencePopulation,
    params: ConsistencyParams = ConsistencyParams(),
    bands: Optional[Sequence[AgeBand]] = None,
    groupings: Sequence = DEFAULT_GROUPINGS,
    scope=NATIONAL,
    strict: bool = False,
) -> pd.DataFrame:
    """Naive, consistent-only, weighted-only and fully adjusted weekly series.

    Relative changes are ``(adjusted - naive) / naive`` and NaN where the naive
    estimate is zero or a series has no responses.
    """
    bands = bands or five_year_bands()
    groupings = [get_grouping(g) for g in groupings]
    data = add_onset_columns(responses, groupings)
    marks = consistency_marks(responses, params)
    consistent = marks["consistent"].to_numpy(bool)
    w_all, _ = compute_weights(responses, participants, reference, bands, scope, strict)
    w_cons, _ = compute_weights(responses[consistent].reset_index(drop=True), participants,
                                reference, bands, scope, strict)

    series = {
        "naive": weekly_proportions(data, groupings),
        "consistent_only": weekly_proportions(data[consistent], groupings),
        "weighted_only": weekly_proportions(prepare_cells(data, None, w_all, groupings), groupings, "weight"),
        "both": weekly_proportions(prepare_cells(data, marks, w_cons, groupings), groupings, "weight"),
    }
    weeks = sorted(data["week"].unique())
    rows = []
    for g in groupings:
        frame = pd.DataFrame({"week": weeks})
        for name, s in series.items():
            frame[name] = frame["week"].map(s[g.name]) if g.name in s else np.nan
        frame = frame.astype({k: float for k in series})
        for name in ADJUSTMENTS:
            frame[f"rel_{name}"] = relative_change(frame[name], frame["naive"])
        frame.insert(0, "grouping", g.name)
        frame.insert(2, "week_ending", [week_date(w).isoformat() for w in frame["week"]])
        rows.append(frame)
    return pd.concat(rows, ignore_index=True)
