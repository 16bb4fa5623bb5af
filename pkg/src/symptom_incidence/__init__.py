"""Weekly symptom-onset incidence from longitudinal participatory surveys."""

from .consistency import ConsistencyParams, consistent_subset, fraction_excluded, is_consistent
from .estimation import compare_groups, estimate_by, logit_ci, weighted_proportion
from .incidents import CLI1, CLI2, ILI, assign_incidents, mark_onsets, meets_grouping
from .raking import NATIONAL, Scope, build_margins, rake, weekly_weights
from .survey_data import (
    AgeBand,
    SurveyWeek,
    parse_demographics,
    parse_reference_population,
    parse_responses,
    summarize_demographics,
)

__version__ = "0.1.0"

__all__ = [
    "AgeBand",
    "CLI1",
    "CLI2",
    "ConsistencyParams",
    "ILI",
    "NATIONAL",
    "Scope",
    "SurveyWeek",
    "assign_incidents",
    "build_margins",
    "compare_groups",
    "consistent_subset",
    "estimate_by",
    "fraction_excluded",
    "is_consistent",
    "logit_ci",
    "mark_onsets",
    "meets_grouping",
    "parse_demographics",
    "parse_reference_population",
    "parse_responses",
    "rake",
    "summarize_demographics",
    "weekly_weights",
    "weighted_proportion",
]
