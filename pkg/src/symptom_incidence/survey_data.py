"""Survey tables: parsing, validation, serialization and descriptive summaries.

Responses, participants and reference populations are held as pandas
DataFrames with fixed column sets.  Weeks are Sunday-ending epidemiological
weeks, indexed by whole weeks since a fixed Sunday epoch so that index
differences equal elapsed weeks.
"""

from __future__ import annotations

import io
import os
import logging
import re
from functools import lru_cache
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import IO, Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SYMPTOMS = (
    "cough",
    "fever",
    "sore_throat",
    "shortness_of_breath",
    "runny_nose",
    "loss_taste_smell",
)
RESPONSE_COLUMNS = ("participant_id", "week_ending") + SYMPTOMS
PARTICIPANT_COLUMNS = ("participant_id", "age", "gender", "ethnicity", "region", "postcode")
REFERENCE_COLUMNS = ("region", "age_group", "count")

MAX_AGE = 120
_EPOCH = date(1970, 1, 4)  # a Sunday

Source = Union[str, os.PathLike, IO[str]]


class SurveyDataError(Exception):
    """Base class for input problems."""


class ParseError(SurveyDataError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(SurveyDataError):
    pass


class ValidationError(SurveyDataError):
    pass


# ---------------------------------------------------------------------------
# weeks


@dataclass(frozen=True, order=True)
class SurveyWeek:
    """An epidemiological week, identified by the Sunday that ends it."""

    index: int
    ending_date: date = field(compare=False)

    def __post_init__(self):
        if self.ending_date.weekday() != 6:
            raise ValidationError(f"{self.ending_date} is not a Sunday")
        if week_index(self.ending_date) != self.index:
            raise ValidationError("week index does not match ending date")

    @classmethod
    def from_date(cls, d: date) -> "SurveyWeek":
        return cls(week_index(d), d)

    @classmethod
    def from_index(cls, index: int) -> "SurveyWeek":
        return _week_from_index(int(index))

    def __str__(self):
        return self.ending_date.isoformat()


def week_index(d: date) -> int:
    return (d - _EPOCH).days // 7


def week_date(index: int) -> date:
    return _EPOCH + timedelta(days=7 * int(index))


@lru_cache(maxsize=8192)
def _week_from_index(index: int) -> SurveyWeek:
    return SurveyWeek(index, week_date(index))


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class ResponseRecord:
    participant_id: str
    week: SurveyWeek
    cough: bool = False
    fever: bool = False
    sore_throat: bool = False
    shortness_of_breath: bool = False
    runny_nose: bool = False
    loss_taste_smell: bool = False

    @property
    def symptoms(self) -> tuple:
        return (self.cough, self.fever, self.sore_throat, self.shortness_of_breath,
                self.runny_nose, self.loss_taste_smell)


@dataclass(frozen=True)
class Participant:
    participant_id: str
    age_years: Optional[int]
    gender: Optional[str] = None
    ethnicity: Optional[str] = None
    region: Optional[str] = None
    postcode: Optional[str] = None


@dataclass(frozen=True, order=True)
class AgeBand:
    """Closed age interval ``[lower, upper]``; ``upper=None`` is open-ended."""

    lower: int
    upper: Optional[int] = None

    def __post_init__(self):
        if self.lower < 0 or self.lower % 5:
            raise SchemaError(f"age band lower bound {self.lower} is not a multiple of 5")
        if self.upper is not None:
            if self.upper < self.lower or (self.upper + 1) % 5:
                raise SchemaError(
                    f"age band {self.lower}-{self.upper} is not a union of 5-year groups"
                )

    @classmethod
    def parse(cls, label: str) -> "AgeBand":
        text = str(label).strip()
        m = re.fullmatch(r"(\d+)\s*\+", text)
        if m:
            return cls(int(m.group(1)), None)
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", text)
        if m:
            return cls(int(m.group(1)), int(m.group(2)))
        raise SchemaError(f"cannot parse age band {label!r}")

    @property
    def label(self) -> str:
        if self.upper is None:
            return f"{self.lower}+"
        return f"{self.lower}-{self.upper}"

    def contains(self, age) -> bool:
        return age >= self.lower and (self.upper is None or age <= self.upper)

    def covers(self, other: "AgeBand") -> bool:
        if other.lower < self.lower:
            return False
        if self.upper is None:
            return True
        return other.upper is not None and other.upper <= self.upper

    def overlaps(self, other: "AgeBand") -> bool:
        lo = max(self.lower, other.lower)
        uppers = [u for u in (self.upper, other.upper) if u is not None]
        return not uppers or lo <= min(uppers)

    def __str__(self):
        return self.label


def five_year_bands(top: int = 85) -> list[AgeBand]:
    """The standard 5-year groups ``0-4, 5-9, ..., top+``."""
    return [AgeBand(lo, lo + 4) for lo in range(0, top, 5)] + [AgeBand(top, None)]


def parse_bands(bands: Union[str, Sequence]) -> list[AgeBand]:
    """Parse ``"0-4,5-19,20+"`` (or a list of labels) into a validated partition."""
    if isinstance(bands, str):
        items = [s for s in bands.split(",") if s.strip()]
    else:
        items = list(bands)
    bands = [b if isinstance(b, AgeBand) else AgeBand.parse(b) for b in items]
    validate_partition(bands)
    return bands


def validate_partition(bands: Sequence[AgeBand]) -> None:
    if not bands:
        raise SchemaError("empty age band list")
    bands = sorted(bands)
    if bands[0].lower != 0:
        raise SchemaError("age bands must start at 0")
    for a, b in zip(bands, bands[1:]):
        if a.upper is None or a.upper + 1 != b.lower:
            raise SchemaError(f"age bands {a} and {b} are not contiguous")
    if bands[-1].upper is not None:
        raise SchemaError("the last age band must be open-ended")


def assign_band(ages, bands: Sequence[AgeBand]) -> pd.Series:
    """Band label for each age; missing ages give NA."""
    ages = pd.Series(ages, dtype="Float64")
    out = pd.Series(pd.NA, index=ages.index, dtype="object")
    for b in bands:
        mask = ages >= b.lower
        if b.upper is not None:
            mask &= ages <= b.upper
        out[mask.fillna(False).to_numpy(bool)] = b.label
    return out


# ---------------------------------------------------------------------------
# parsing


def _read_text(source: Source) -> str:
    if hasattr(source, "read"):
        return source.read()
    with open(source, encoding="utf-8") as fh:
        return fh.read()


def _strip_comments(text: str) -> tuple[str, int]:
    # leading schema-version lines written by this package
    lines = text.splitlines()
    skip = 0
    while skip < len(lines) and lines[skip].startswith("#"):
        skip += 1
    return "\n".join(lines[skip:]), skip


def _read_frame(source: Source, expected: Sequence[str], required: Sequence[str]) -> pd.DataFrame:
    text, skipped = _strip_comments(_read_text(source))
    if not text.strip():
        raise SchemaError("missing header row")
    df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    cols = [c.strip() for c in df.columns]
    df.columns = cols
    unknown = [c for c in cols if c not in expected]
    if unknown:
        raise SchemaError(f"unknown column(s): {', '.join(unknown)}")
    missing = [c for c in required if c not in cols]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    for c in expected:
        if c not in df.columns:
            df[c] = ""
    df = df[list(expected)].copy()
    df.attrs["first_line"] = skipped + 2  # header is the first non-comment line
    return df


def parse_responses(source: Source) -> pd.DataFrame:
    """Read ``responses.csv`` into a validated response table.

    The result has one row per (participant, week) with string
    ``participant_id``, ``week_ending`` (``datetime.date``), integer ``week``
    index and one boolean column per symptom, sorted by participant then week.
    """
    df = _read_frame(source, RESPONSE_COLUMNS, RESPONSE_COLUMNS)
    first = df.attrs.get("first_line", 2)
    _line = lambda i: int(i) + first  # noqa: E731
    df["participant_id"] = df["participant_id"].str.strip()
    if (df["participant_id"] == "").any():
        i = int(np.flatnonzero(df["participant_id"].to_numpy() == "")[0])
        raise ParseError("empty participant_id", _line(i))

    dates = pd.to_datetime(df["week_ending"].str.strip(), format="%Y-%m-%d", errors="coerce")
    bad = dates.isna().to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"malformed date {df['week_ending'].iloc[i]!r}", _line(i))
    not_sunday = (dates.dt.dayofweek != 6).to_numpy()
    if not_sunday.any():
        i = int(np.flatnonzero(not_sunday)[0])
        raise ParseError(f"week_ending {df['week_ending'].iloc[i]} is not a Sunday", _line(i))

    out = pd.DataFrame({"participant_id": df["participant_id"]})
    out["week_ending"] = [d.date() for d in dates]
    out["week"] = ((dates - pd.Timestamp(_EPOCH)).dt.days // 7).astype(np.int64)
    for s in SYMPTOMS:
        raw = df[s].str.strip()
        ok = raw.isin(["0", "1"]).to_numpy()
        if not ok.all():
            i = int(np.flatnonzero(~ok)[0])
            raise ParseError(f"{s} flag must be 0 or 1, got {raw.iloc[i]!r}", _line(i))
        out[s] = (raw == "1").to_numpy()

    dup = out.duplicated(["participant_id", "week"], keep=False).to_numpy()
    if dup.any():
        key = out[dup].iloc[0]
        same = out.index[
            (out["participant_id"] == key["participant_id"]) & (out["week"] == key["week"])
        ]
        lines = ", ".join(str(_line(i)) for i in same)
        raise ValidationError(
            f"duplicate response for ({key['participant_id']}, {key['week_ending']}) "
            f"on lines {lines}"
        )
    return sort_responses(out)


def sort_responses(table: pd.DataFrame) -> pd.DataFrame:
    return table.sort_values(["participant_id", "week"], kind="mergesort").reset_index(drop=True)


def empty_responses() -> pd.DataFrame:
    return parse_responses(io.StringIO(",".join(RESPONSE_COLUMNS) + "\n"))


def responses_from_records(records: Iterable[ResponseRecord]) -> pd.DataFrame:
    rows = [
        {
            "participant_id": r.participant_id,
            "week_ending": r.week.ending_date,
            "week": r.week.index,
            **{s: bool(getattr(r, s)) for s in SYMPTOMS},
        }
        for r in records
    ]
    if not rows:
        return empty_responses()
    out = pd.DataFrame(rows)
    if out.duplicated(["participant_id", "week"]).any():
        raise ValidationError("duplicate (participant, week) records")
    out["week"] = out["week"].astype(np.int64)
    return sort_responses(out)


def records_from_responses(table: pd.DataFrame) -> list[ResponseRecord]:
    return [
        ResponseRecord(
            row.participant_id,
            SurveyWeek(int(row.week), row.week_ending),
            *(bool(getattr(row, s)) for s in SYMPTOMS),
        )
        for row in table.itertuples(index=False)
    ]


def parse_demographics(source: Source) -> pd.DataFrame:
    """Read ``participants.csv``.  Blank demographic fields become NA."""
    df = _read_frame(source, PARTICIPANT_COLUMNS, ("participant_id", "age"))
    first = df.attrs.get("first_line", 2)
    _line = lambda i: int(i) + first  # noqa: E731
    df = df.apply(lambda c: c.str.strip())
    if (df["participant_id"] == "").any():
        i = int(np.flatnonzero(df["participant_id"].to_numpy() == "")[0])
        raise ParseError("empty participant_id", _line(i))
    dup = df.duplicated("participant_id", keep=False).to_numpy()
    if dup.any():
        lines = ", ".join(str(_line(i)) for i in np.flatnonzero(dup))
        raise ValidationError(f"duplicate participant_id on lines {lines}")

    ages = pd.to_numeric(df["age"].replace("", np.nan), errors="coerce")
    bad = (ages.isna() & (df["age"] != "")).to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ParseError(f"age {df['age'].iloc[i]!r} is not an integer", _line(i))
    out_of_range = (ages.notna() & ((ages < 0) | (ages > MAX_AGE) | (ages % 1 != 0))).to_numpy()
    if out_of_range.any():
        i = int(np.flatnonzero(out_of_range)[0])
        raise ValidationError(f"line {_line(i)}: age {df['age'].iloc[i]} outside 0..{MAX_AGE}")

    out = df.replace("", pd.NA)
    out["participant_id"] = df["participant_id"]
    out["age"] = ages.astype("Int64")
    return out.sort_values("participant_id", kind="mergesort").reset_index(drop=True)


def participants_from_records(records: Iterable[Participant]) -> pd.DataFrame:
    df = pd.DataFrame(
        [
            (p.participant_id, p.age_years, p.gender, p.ethnicity, p.region, p.postcode)
            for p in records
        ],
        columns=list(PARTICIPANT_COLUMNS),
    )
    df["age"] = df["age"].astype("Int64")
    return df.sort_values("participant_id", kind="mergesort").reset_index(drop=True)


@dataclass(frozen=True)
class ReferencePopulation:
    """Population counts keyed by (region, 5-year age group)."""

    counts: pd.DataFrame  # columns region, lower, upper, age_group, count

    @property
    def regions(self) -> list[str]:
        return sorted(self.counts["region"].unique())

    @property
    def groups(self) -> list[AgeBand]:
        return sorted({AgeBand.parse(g) for g in self.counts["age_group"]})

    def entries(self) -> dict:
        return {
            (r, AgeBand.parse(g)): float(c)
            for r, g, c in self.counts[["region", "age_group", "count"]].itertuples(index=False)
        }

    def scaled(self, factor: float) -> "ReferencePopulation":
        counts = self.counts.copy()
        counts["count"] = counts["count"] * factor
        return ReferencePopulation(counts)

    def __len__(self):
        return len(self.counts)


def reference_from_entries(entries: dict) -> ReferencePopulation:
    rows = []
    for (region, group), count in entries.items():
        band = group if isinstance(group, AgeBand) else AgeBand.parse(group)
        if band.upper is not None and band.upper - band.lower != 4:
            raise SchemaError(f"{band.label} is not a 5-year age group")
        if count < 0:
            raise ValidationError(f"negative count for ({region}, {band.label})")
        rows.append((region, band.lower, band.upper, band.label, float(count)))
    df = pd.DataFrame(rows, columns=["region", "lower", "upper", "age_group", "count"])
    if df.duplicated(["region", "age_group"]).any():
        raise ValidationError("duplicate (region, age_group) entries")
    df["upper"] = df["upper"].astype("Int64")
    return ReferencePopulation(df.sort_values(["region", "lower"]).reset_index(drop=True))


def parse_reference_population(source: Source) -> ReferencePopulation:
    """Read ``reference_population.csv`` (``region,age_group,count``)."""
    df = _read_frame(source, REFERENCE_COLUMNS, REFERENCE_COLUMNS)
    first = df.attrs.get("first_line", 2)
    _line = lambda i: int(i) + first  # noqa: E731
    entries = {}
    for i, (region, group, count) in enumerate(df.itertuples(index=False)):
        try:
            band = AgeBand.parse(group)
        except SchemaError as exc:
            raise SchemaError(f"line {_line(i)}: {exc}") from None
        if band.upper is not None and band.upper - band.lower != 4:
            raise SchemaError(f"line {_line(i)}: {group!r} is not a 5-year age group")
        try:
            value = float(count)
        except ValueError:
            raise ParseError(f"count {count!r} is not a number", _line(i)) from None
        if value < 0 or not np.isfinite(value):
            raise ValidationError(f"line {_line(i)}: invalid count {count}")
        key = (region.strip(), band)
        if key in entries:
            raise ValidationError(f"line {_line(i)}: duplicate entry ({region}, {band.label})")
        entries[key] = value
    return reference_from_entries(entries)


# ---------------------------------------------------------------------------
# serialization


def responses_to_csv(table: pd.DataFrame) -> str:
    out = table[["participant_id", "week_ending", *SYMPTOMS]].copy()
    out["week_ending"] = [d.isoformat() for d in out["week_ending"]]
    for s in SYMPTOMS:
        out[s] = out[s].astype(int)
    return out.to_csv(index=False, lineterminator="\n")


def participants_to_csv(table: pd.DataFrame) -> str:
    return table[list(PARTICIPANT_COLUMNS)].to_csv(index=False, lineterminator="\n")


def reference_to_csv(reference: ReferencePopulation) -> str:
    df = reference.counts[["region", "age_group", "count"]].copy()
    df["count"] = [f"{c:.17g}" for c in df["count"]]
    return df.to_csv(index=False, lineterminator="\n")


def week_universe(table: pd.DataFrame) -> np.ndarray:
    """All week indices from the first to the last observed week, inclusive."""
    if table.empty:
        return np.array([], dtype=np.int64)
    return np.arange(int(table["week"].min()), int(table["week"].max()) + 1, dtype=np.int64)


def merge_demographics(responses: pd.DataFrame, participants: pd.DataFrame) -> pd.DataFrame:
    """Left-join participant demographics onto responses."""
    cols = ["participant_id", "age", "gender", "ethnicity", "region"]
    return responses.merge(participants[cols], on="participant_id", how="left", validate="m:1")


# ---------------------------------------------------------------------------
# summaries

AGE_DECADES = [AgeBand(lo, lo + 9 if lo < 80 else None) for lo in range(0, 90, 10)]
# AgeBand requires (upper+1) % 5 == 0, which decades satisfy
UNKNOWN = "unknown"


@dataclass
class DemographicSummary:
    table: pd.DataFrame
    weekly_counts: pd.DataFrame
    responses_per_person: pd.DataFrame
    warnings: list = field(default_factory=list)


def _decade_label(ages: pd.Series) -> pd.Series:
    labels = assign_band(ages, AGE_DECADES)
    return labels.fillna(UNKNOWN)


def summarize_demographics(
    responses: pd.DataFrame,
    participants: pd.DataFrame,
    marks: Optional[pd.DataFrame] = None,
) -> DemographicSummary:
    """Table-1 style cohort breakdown plus weekly and per-person response counts.

    ``marks`` is a consistency mark table (``participant_id, week, consistent``);
    without it the consistent columns are left empty.
    """
    warnings = []
    weeks = week_universe(responses)
    n_weeks = max(len(weeks), 1)

    known = set(participants["participant_id"])
    unknown_ids = sorted(set(responses["participant_id"]) - known)
    if unknown_ids:
        msg = f"{len(unknown_ids)} responding participant(s) missing from demographics"
        warnings.append(msg)
        logger.warning(msg)
    people = participants[["participant_id", "age", "gender", "ethnicity", "region"]].copy()
    if unknown_ids:
        extra = pd.DataFrame({"participant_id": unknown_ids})
        people = pd.concat([people, extra], ignore_index=True)
    people["age_group"] = _decade_label(people["age"])
    for c in ("gender", "ethnicity", "region"):
        people[c] = people[c].astype("object").where(people[c].notna(), UNKNOWN)

    resp = responses[["participant_id", "week"]].merge(
        people, on="participant_id", how="left", validate="m:1"
    )
    if marks is not None and len(resp):
        resp = resp.merge(
            marks[["participant_id", "week", "consistent"]],
            on=["participant_id", "week"],
            how="left",
            validate="1:1",
        )
        resp["consistent"] = resp["consistent"].fillna(False).astype(bool)
    else:
        resp["consistent"] = False
    consistent_ids = set(resp.loc[resp["consistent"], "participant_id"])
    people["ever_consistent"] = people["participant_id"].isin(consistent_ids)

    rows = []
    factors = [("age", "age_group"), ("ethnicity", "ethnicity"), ("gender", "gender"), ("region", "region")]
    tot_resp = len(resp)
    tot_cons = int(resp["consistent"].sum())
    tot_people = len(people)
    tot_cons_people = int(people["ever_consistent"].sum())

    def pct(x, total):
        return 100.0 * x / total if total else float("nan")

    for factor, col in factors:
        r_counts = resp.groupby(col).size()
        c_counts = resp[resp["consistent"]].groupby(col).size()
        p_counts = people.groupby(col).size()
        cp_counts = people[people["ever_consistent"]].groupby(col).size()
        groups = sorted(set(r_counts.index) | set(p_counts.index), key=_group_sort_key)
        for g in groups:
            nr = int(r_counts.get(g, 0))
            nc = int(c_counts.get(g, 0))
            npp = int(p_counts.get(g, 0))
            ncp = int(cp_counts.get(g, 0))
            rows.append(
                {
                    "factor": factor,
                    "group": g,
                    "responses_pct": pct(nr, tot_resp),
                    "avg_weekly_responses": nr / n_weeks,
                    "consistent_pct": pct(nc, tot_cons),
                    "avg_weekly_consistent": nc / n_weeks,
                    "participants_pct": pct(npp, tot_people),
                    "participants": npp,
                    "consistent_participants_pct": pct(ncp, tot_cons_people),
                    "consistent_participants": ncp,
                }
            )
    rows.append(
        {
            "factor": "total",
            "group": "total",
            "responses_pct": 100.0 if tot_resp else float("nan"),
            "avg_weekly_responses": tot_resp / n_weeks,
            "consistent_pct": 100.0 if tot_cons else float("nan"),
            "avg_weekly_consistent": tot_cons / n_weeks,
            "participants_pct": 100.0 if tot_people else float("nan"),
            "participants": tot_people,
            "consistent_participants_pct": 100.0 if tot_cons_people else float("nan"),
            "consistent_participants": tot_cons_people,
        }
    )
    table = pd.DataFrame(rows)

    weekly = pd.DataFrame({"week": weeks})
    weekly["week_ending"] = [week_date(w) for w in weeks]
    weekly["responses"] = weekly["week"].map(resp.groupby("week").size()).fillna(0).astype(int)
    weekly["consistent_responses"] = (
        weekly["week"].map(resp[resp["consistent"]].groupby("week").size()).fillna(0).astype(int)
    )

    per_person = people[["participant_id", "ethnicity"]].copy()
    per_person["n"] = (
        per_person["participant_id"].map(resp.groupby("participant_id").size()).fillna(0).astype(int)
    )
    dist = [_response_distribution(per_person["n"], "all")]
    for eth, sub in per_person.groupby("ethnicity"):
        dist.append(_response_distribution(sub["n"], eth))
    responses_per_person = pd.concat(dist, ignore_index=True)

    return DemographicSummary(table, weekly, responses_per_person, warnings)


def _group_sort_key(g):
    m = re.match(r"(\d+)", str(g))
    return (0, int(m.group(1)), "") if m else (1, 0, str(g))


def _response_distribution(counts: pd.Series, group: str) -> pd.DataFrame:
    hist = counts.value_counts().sort_index()
    total = hist.sum()
    df = pd.DataFrame({"group": group, "n_responses": hist.index.astype(int), "participants": hist.values})
    df["cumulative_probability"] = np.cumsum(df["participants"].to_numpy()) / total if total else np.nan
    return df
