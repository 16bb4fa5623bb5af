"""Raking (iterative proportional fitting) of response weights to reference margins."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .survey_data import (
    AgeBand,
    ReferencePopulation,
    SchemaError,
    SurveyWeek,
    assign_band,
    merge_demographics,
    validate_partition,
)

logger = logging.getLogger(__name__)

NATIONAL = "NATIONAL"
TOL = 1e-9
MAX_ITER = 50


class RakingError(ValueError):
    pass


@dataclass(frozen=True)
class Scope:
    """A named set of regions; ``regions=None`` means the whole country."""

    name: str = NATIONAL
    regions: Optional[tuple] = None

    @property
    def is_national(self) -> bool:
        return self.regions is None

    def __str__(self):
        return self.name


def parse_scope(text: Union[str, Scope], reference: Optional[ReferencePopulation] = None,
                complement_of: Optional[Scope] = None) -> Scope:
    """``national``, a comma-separated region list, or ``Rest`` (the complement
    of ``complement_of`` within the reference regions)."""
    if isinstance(text, Scope):
        return text
    label = text.strip()
    if label.upper() == NATIONAL:
        return Scope()
    known = reference.regions if reference is not None else None
    if label.lower() == "rest":
        if complement_of is None or complement_of.is_national or known is None:
            raise ValueError("'Rest' needs a sub-national comparison scope and a reference population")
        rest = tuple(r for r in known if r not in complement_of.regions)
        if not rest:
            raise ValueError("'Rest' scope is empty")
        return Scope(label, rest)
    regions = tuple(r.strip() for r in label.split(",") if r.strip())
    if not regions:
        raise ValueError("empty scope")
    if known is not None:
        missing = [r for r in regions if r not in known]
        if missing:
            raise ValueError(f"scope region(s) not in reference population: {', '.join(missing)}")
    return Scope(label, regions)


@dataclass(frozen=True)
class MarginSpec:
    """Target proportions for one categorical variable of the sample."""

    variable: str
    categories: tuple
    targets: dict

    def __post_init__(self):
        vals = np.array([self.targets[c] for c in self.categories], dtype=float)
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("margin targets must be finite and non-negative")
        if abs(vals.sum() - 1.0) > 1e-12:
            raise ValueError("margin targets must sum to 1")

    @classmethod
    def from_counts(cls, variable: str, counts: dict) -> "MarginSpec":
        total = float(sum(counts.values()))
        if total <= 0:
            raise ValueError(f"margin {variable!r} has no positive target")
        cats = tuple(counts)
        return cls(variable, cats, {c: counts[c] / total for c in cats})

    def target_array(self) -> np.ndarray:
        return np.array([self.targets[c] for c in self.categories], dtype=float)


def _reference_in_scope(reference: ReferencePopulation, scope: Scope) -> pd.DataFrame:
    counts = reference.counts
    if scope.is_national:
        return counts
    if not scope.regions:
        raise ValueError("empty scope")
    missing = [r for r in scope.regions if r not in set(counts["region"])]
    if missing:
        raise ValueError(f"scope region(s) not in reference population: {', '.join(missing)}")
    return counts[counts["region"].isin(scope.regions)]


def build_margins(
    reference: ReferencePopulation,
    bands: Sequence[AgeBand],
    scope: Union[Scope, str] = NATIONAL,
) -> MarginSpec:
    """Age-band target proportions from reference counts aggregated over ``scope``."""
    scope = parse_scope(scope) if isinstance(scope, str) else scope
    bands = [b if isinstance(b, AgeBand) else AgeBand.parse(b) for b in bands]
    counts = _reference_in_scope(reference, scope)
    groups = counts.groupby("age_group", sort=False)["count"].sum()
    totals = {b.label: 0.0 for b in bands}
    for label, c in groups.items():
        g = AgeBand.parse(label)
        owners = [b for b in bands if b.covers(g)]
        partial = [b for b in bands if b.overlaps(g) and not b.covers(g)]
        if partial:
            raise SchemaError(
                f"age band {partial[0].label} is not a union of reference groups (splits {g.label})"
            )
        if not owners:
            raise SchemaError(f"reference group {g.label} is not covered by any band")
        totals[owners[0].label] += float(c)
    return MarginSpec.from_counts("age_band", totals)


def build_location_margin(reference: ReferencePopulation, scopes: Sequence[Scope]) -> MarginSpec:
    """Population share of each (disjoint) location set."""
    totals = {}
    for s in scopes:
        totals[s.name] = float(_reference_in_scope(reference, s)["count"].sum())
    return MarginSpec.from_counts("location", totals)


@dataclass
class WeightTable:
    """Raked weights plus the metadata of the raking run."""

    table: pd.DataFrame  # sample rows with a ``weight`` column
    margins: list
    iterations: int = 0
    converged: bool = True
    scope: str = NATIONAL
    week: Optional[SurveyWeek] = None
    warnings: list = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return self.table["weight"].to_numpy(float)

    def __len__(self):
        return len(self.table)


def _merged_label(labels: Sequence[str], variable: str) -> str:
    if variable == "age_band":
        try:
            bands = [AgeBand.parse(x) for x in labels]
        except SchemaError:
            pass
        else:
            uppers = [b.upper for b in bands]
            upper = None if any(u is None for u in uppers) else max(uppers)
            return AgeBand(min(b.lower for b in bands), upper).label
    return "|".join(labels)


def collapse_empty(margin: MarginSpec, present: dict, strict: bool = False):
    """Merge categories that cannot be fitted into an adjacent category.

    A category is unfittable when it has a positive target but no sample rows,
    or sample rows but a zero target.  Each offender is merged into its lower
    neighbour (upper neighbour for the first category) until none remain.
    Returns ``(new margin, {old label: new label}, messages)``.
    """
    groups = [[c] for c in margin.categories]
    target = [margin.targets[c] for c in margin.categories]
    count = [present.get(c, 0) for c in margin.categories]
    # categories with neither rows nor target play no part
    keep = [i for i in range(len(groups)) if target[i] > 0 or count[i] > 0]
    groups = [groups[i] for i in keep]
    target = [target[i] for i in keep]
    count = [count[i] for i in keep]
    messages = []

    def bad(i):
        return (target[i] > 0) != (count[i] > 0)

    while True:
        offenders = [i for i in range(len(groups)) if bad(i)]
        if not offenders:
            break
        i = offenders[0]
        what = "no sample rows" if count[i] == 0 else "a zero target"
        if strict:
            raise RakingError(f"{margin.variable} category {'|'.join(groups[i])} has {what}")
        if len(groups) == 1:
            raise RakingError(f"cannot collapse {margin.variable}: only one category left")
        j = i - 1 if i > 0 else i + 1
        messages.append(
            f"{margin.variable} category {_merged_label(groups[i], margin.variable)} has {what}; "
            f"merged into {_merged_label(groups[j], margin.variable)}"
        )
        lo, hi = sorted((i, j))
        groups[lo:hi + 1] = [groups[lo] + groups[hi]]
        target[lo:hi + 1] = [target[lo] + target[hi]]
        count[lo:hi + 1] = [count[lo] + count[hi]]

    labels = [_merged_label(g, margin.variable) for g in groups]
    mapping = {old: new for g, new in zip(groups, labels) for old in g}
    total = sum(target)
    new = MarginSpec(margin.variable, tuple(labels), {l: t / total for l, t in zip(labels, target)})
    return new, mapping, messages


def rake(
    sample: pd.DataFrame,
    margins: Sequence[MarginSpec],
    tol: float = TOL,
    max_iter: int = MAX_ITER,
    strict: bool = False,
) -> WeightTable:
    """Iterative proportional fitting of unit start weights to ``margins``.

    Each margin's ``variable`` names a column of ``sample``.  Iteration stops
    once every weighted marginal proportion is within ``tol`` of its target,
    checked after each full pass over the margins.  Final weights sum to the
    number of rows.
    """
    n = len(sample)
    if n == 0:
        raise RakingError("cannot rake an empty sample")
    messages = []
    fitted = []
    table = sample.copy()
    codes = []
    for m in margins:
        col = table[m.variable]
        if col.isna().any():
            raise RakingError(f"sample rows without a {m.variable!r} category")
        unknown = set(col.unique()) - set(m.categories)
        if unknown:
            raise RakingError(f"{m.variable} values not in margin: {sorted(map(str, unknown))}")
        present = col.value_counts().to_dict()
        m2, mapping, msgs = collapse_empty(m, present, strict=strict)
        messages.extend(msgs)
        if msgs:
            table[m.variable] = col.map(mapping)
        fitted.append(m2)
        codes.append(pd.Categorical(table[m.variable], categories=list(m2.categories)).codes)

    targets = [m.target_array() for m in fitted]
    w = np.ones(n)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        for c, t in zip(codes, targets):
            sums = np.bincount(c, weights=w, minlength=len(t))
            w = w * (t * w.sum() / sums)[c]
        total = w.sum()
        dev = max(
            np.max(np.abs(np.bincount(c, weights=w, minlength=len(t)) / total - t))
            for c, t in zip(codes, targets)
        )
        if dev < tol:
            converged = True
            break
    w = w * (n / w.sum())
    if not converged:
        msg = f"raking did not converge in {max_iter} iterations (max deviation {dev:.3g})"
        messages.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    for msg in messages:
        logger.info(msg)
    table["weight"] = w
    return WeightTable(table, fitted, iterations, converged, warnings=messages)


def weekly_weights(
    consistent: pd.DataFrame,
    participants: pd.DataFrame,
    reference: ReferencePopulation,
    bands: Sequence[AgeBand],
    scope: Union[Scope, str],
    week: Union[SurveyWeek, int],
    strict: bool = False,
    margin: Optional[MarginSpec] = None,
) -> WeightTable:
    """Age-rake one week's in-scope responses to the scope's reference ages.

    Responses from participants with no age (or, for sub-national scopes, no
    region) are left out.
    """
    scope = parse_scope(scope, reference) if isinstance(scope, str) else scope
    validate_partition(bands)
    week_idx = week.index if isinstance(week, SurveyWeek) else int(week)
    if margin is None:
        margin = build_margins(reference, bands, scope)
    rows = consistent[consistent["week"] == week_idx]
    if "age" not in rows.columns:
        rows = merge_demographics(rows, participants)
    notes = []
    if not scope.is_national:
        rows = rows[rows["region"].isin(scope.regions).fillna(False).to_numpy(bool)]
    no_age = int(rows["age"].isna().sum())
    if no_age:
        notes.append(f"{no_age} response(s) without age excluded from weighting")
        rows = rows[rows["age"].notna()]
    cols = ["participant_id", "week_ending", "week"]
    sample = rows[cols].copy()
    sample["age_band"] = assign_band(rows["age"], bands).to_numpy()
    sample["scope"] = scope.name
    wk = SurveyWeek.from_index(week_idx)
    if sample.empty:
        notes.append(f"no consistent responses in scope {scope.name} for week {wk}")
        logger.info(notes[-1])
        sample["weight"] = np.zeros(0)
        return WeightTable(sample.reset_index(drop=True), [margin], 0, True, scope.name, wk, notes)
    result = rake(sample.reset_index(drop=True), [margin], strict=strict)
    result.scope = scope.name
    result.week = wk
    result.warnings = notes + result.warnings
    return result


def compute_weights(
    consistent: pd.DataFrame,
    participants: pd.DataFrame,
    reference: ReferencePopulation,
    bands: Sequence[AgeBand],
    scope: Union[Scope, str] = NATIONAL,
    strict: bool = False,
) -> tuple[pd.DataFrame, list]:
    """Weights for every week present in ``consistent``.

    Returns the concatenated weight rows (``participant_id, week_ending, week,
    scope, age_band, weight``) and the per-week :class:`WeightTable` list.
    """
    scope = parse_scope(scope, reference) if isinstance(scope, str) else scope
    margin = build_margins(reference, bands, scope)
    merged = merge_demographics(consistent, participants)
    tables = [
        weekly_weights(merged, participants, reference, bands, scope, int(w), strict, margin)
        for w in sorted(merged["week"].unique())
    ]
    noted = sum(1 for t in tables if t.warnings)
    if noted:
        logger.warning("%s: %d of %d weekly weightings needed adjustments (empty cells collapsed, "
                       "rows dropped or non-convergence); enable INFO logging for details",
                       scope.name, noted, len(tables))
    cols = ["participant_id", "week_ending", "week", "scope", "age_band", "weight"]
    frames = [t.table[cols] for t in tables if len(t)]
    if frames:
        out = pd.concat(frames, ignore_index=True)
    else:
        out = pd.DataFrame({c: [] for c in cols})
    return out, tables
