"""Synthetic cohorts with controllable biases, and independent validation oracles.

Random numbers come from numpy's PCG64 bit generator (``numpy.random.default_rng``)
seeded from the config, so a given seed reproduces the same cohort on any
platform with the same numpy major version.

Cohort model
------------
Each participant is in an age band and a region.  Illness follows a two-state
weekly Markov chain: a well person starts an episode with the band's hazard
(times the region multiplier and the week's seasonal multiplier); an ill
person stays ill with probability ``1 - 1/mean_duration``.  An episode draws
its symptom count first and then the symptoms, and reports the same symptom
set every ill week.

Responding is Bernoulli each week.  A participant's well-week propensity is
``p_resp_well`` (or Beta-distributed around it when
``propensity_concentration`` is set) and ill weeks raise it so that the
cohort mean is ``p_resp_ill``.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field, fields, replace
from datetime import date
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .incidents import COUGH, FEVER, Incident, get_grouping, incident_id
from .survey_data import (
    SYMPTOMS,
    AgeBand,
    SurveyWeek,
    five_year_bands,
    parse_demographics,
    parse_reference_population,
    parse_responses,
    participants_to_csv,
    reference_to_csv,
    responses_to_csv,
    week_index,
)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


ETHNICITIES = {"Maori": 0.08, "Pacific": 0.02, "Asian": 0.04, "Other": 0.05, "European": 0.81}
GENDERS = {"Female": 0.555, "Male": 0.443, "Other": 0.002}


@dataclass
class SynthConfig:
    n_participants: int = 2000
    weeks: int = 30
    start: date = date(2020, 5, 3)
    # weekly episode hazard per age band (bands must partition ages)
    onset_prob: dict = field(default_factory=lambda: {
        "0-4": 0.12, "5-19": 0.07, "20-39": 0.05, "40-64": 0.04, "65+": 0.03})
    # probability of an episode having 1..6 symptoms
    symptom_count_probs: tuple = (0.45, 0.25, 0.15, 0.08, 0.05, 0.02)
    # chance a 2-5 symptom episode includes both cough and fever
    p_ili_given_2plus: float = 0.3
    mean_duration: float = 1.5
    p_resp_well: float = 1.0
    p_resp_ill: float = 1.0
    propensity_concentration: Optional[float] = None
    # age-band shares among registered participants and in the population
    registration: dict = field(default_factory=lambda: {
        "0-4": 0.06, "5-19": 0.19, "20-39": 0.27, "40-64": 0.31, "65+": 0.17})
    reference: dict = field(default_factory=lambda: {
        "0-4": 0.06, "5-19": 0.19, "20-39": 0.27, "40-64": 0.31, "65+": 0.17})
    regions: dict = field(default_factory=lambda: {"Auckland Metro": 0.35, "Wellington": 0.25, "Canterbury": 0.40})
    region_registration: Optional[dict] = None
    region_incidence: dict = field(default_factory=dict)
    seasonality: Optional[tuple] = None  # per-week hazard multiplier
    population: float = 5_000_000.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def bands(self) -> list[AgeBand]:
        return sorted(AgeBand.parse(b) for b in self.onset_prob)

    def validate(self):
        if self.n_participants < 1 or self.weeks < 1:
            raise ConfigError("n_participants and weeks must be positive")
        if self.start.weekday() != 6:
            raise ConfigError("start must be a Sunday")
        probs = [self.p_resp_well, self.p_resp_ill, self.p_ili_given_2plus, *self.onset_prob.values()]
        if any(not 0 <= p <= 1 for p in probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.mean_duration < 1:
            raise ConfigError("mean_duration must be at least 1 week")
        if len(self.symptom_count_probs) != 6 or any(p < 0 for p in self.symptom_count_probs):
            raise ConfigError("symptom_count_probs needs six non-negative entries")
        if abs(sum(self.symptom_count_probs) - 1) > 1e-9:
            raise ConfigError("symptom_count_probs must sum to 1")
        for name in ("registration", "reference"):
            shares = getattr(self, name)
            if set(shares) != set(self.onset_prob):
                raise ConfigError(f"{name} bands must match onset_prob bands")
            if any(v < 0 for v in shares.values()) or sum(shares.values()) <= 0:
                raise ConfigError(f"{name} shares must be non-negative with a positive total")
        try:
            from .survey_data import validate_partition
            validate_partition(self.bands)
        except Exception as exc:
            raise ConfigError(f"invalid age bands: {exc}") from None
        if self.propensity_concentration is not None and self.propensity_concentration <= 0:
            raise ConfigError("propensity_concentration must be positive")
        if self.seasonality is not None and len(self.seasonality) < self.weeks:
            raise ConfigError("seasonality needs one multiplier per week")
        if self.region_registration is not None and set(self.region_registration) != set(self.regions):
            raise ConfigError("region_registration must name the same regions")

    @classmethod
    def from_toml(cls, path) -> "SynthConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        raw = dict(raw)
        if "start" in raw and isinstance(raw["start"], str):
            raw["start"] = date.fromisoformat(raw["start"])
        for k in ("symptom_count_probs", "seasonality"):
            if raw.get(k) is not None:
                raw[k] = tuple(raw[k])
        return cls(**raw)


@dataclass
class Cohort:
    responses: pd.DataFrame
    participants: pd.DataFrame
    reference: object
    ground_truth: pd.DataFrame
    config: SynthConfig


def _shares(d: dict, keys: Sequence) -> np.ndarray:
    v = np.array([d[k] for k in keys], dtype=float)
    return v / v.sum()


def grouping_probabilities(cfg: SynthConfig) -> dict:
    """Chance that an episode's symptom set meets each grouping."""
    pk = np.asarray(cfg.symptom_count_probs, dtype=float)
    two_plus = pk[1:].sum()
    ili = pk[1:5].sum() * cfg.p_ili_given_2plus + pk[5]
    return {"CLI1+": float(pk.sum()), "CLI2+": float(two_plus), "ILI": float(ili)}


def _draw_symptoms(rng, n: int, cfg: SynthConfig) -> np.ndarray:
    k = rng.choice(np.arange(1, 7), size=n, p=np.asarray(cfg.symptom_count_probs) / sum(cfg.symptom_count_probs))
    ili = (k == 6) | ((k >= 2) & (rng.random(n) < cfg.p_ili_given_2plus))
    out = np.zeros((n, 6), dtype=bool)
    others = [i for i in range(6) if i not in (COUGH, FEVER)]
    for i in range(n):
        if ili[i]:
            extra = rng.choice(others, size=k[i] - 2, replace=False)
            out[i, [COUGH, FEVER]] = True
            out[i, extra] = True
        else:
            # any k-subset that does not hold both cough and fever
            while True:
                pick = rng.choice(6, size=k[i], replace=False)
                if not (COUGH in pick and FEVER in pick):
                    break
            out[i, pick] = True
    return out


def _band_ages(rng, bands: list[AgeBand], band_idx: np.ndarray) -> np.ndarray:
    lo = np.array([b.lower for b in bands])[band_idx]
    hi = np.array([b.upper if b.upper is not None else b.lower + 24 for b in bands])[band_idx]
    return rng.integers(lo, hi + 1)


def expected_onsets(hazard: np.ndarray, stay: float) -> np.ndarray:
    """Per-week episode-onset probability for a chain started at the stationary
    distribution of the first week's hazard."""
    h0 = hazard[0]
    p_ill = h0 / (h0 + 1 - stay) if h0 + 1 - stay > 0 else 0.0
    out = np.empty_like(hazard)
    for t, h in enumerate(hazard):
        out[t] = (1 - p_ill) * h
        p_ill = (1 - p_ill) * h + p_ill * stay
    return out


def generate_cohort(cfg: SynthConfig) -> Cohort:
    """Simulate a cohort; deterministic given ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    bands = cfg.bands
    labels = [b.label for b in bands]
    regions = sorted(cfg.regions)
    n, T = cfg.n_participants, cfg.weeks

    band_idx = rng.choice(len(bands), size=n, p=_shares(cfg.registration, labels))
    reg_shares = cfg.region_registration or cfg.regions
    region_idx = rng.choice(len(regions), size=n, p=_shares(reg_shares, regions))
    ages = _band_ages(rng, bands, band_idx)
    gender = rng.choice(list(GENDERS), size=n, p=_shares(GENDERS, list(GENDERS)))
    ethnicity = rng.choice(list(ETHNICITIES), size=n, p=_shares(ETHNICITIES, list(ETHNICITIES)))

    if cfg.propensity_concentration is None or cfg.p_resp_well in (0.0, 1.0):
        well = np.full(n, cfg.p_resp_well)
    else:
        k = cfg.propensity_concentration
        well = rng.beta(k * cfg.p_resp_well, k * (1 - cfg.p_resp_well), size=n)
    if cfg.p_resp_ill >= cfg.p_resp_well:
        lift = (cfg.p_resp_ill - cfg.p_resp_well) / (1 - cfg.p_resp_well) if cfg.p_resp_well < 1 else 0.0
        ill_prop = 1 - (1 - well) * (1 - lift)
    else:
        ill_prop = well * (cfg.p_resp_ill / cfg.p_resp_well)

    hazard_band = np.array([cfg.onset_prob[l] for l in labels])
    region_mult = np.array([cfg.region_incidence.get(r, 1.0) for r in regions])
    season = np.asarray(cfg.seasonality[:T] if cfg.seasonality is not None else np.ones(T), dtype=float)
    base_h = hazard_band[band_idx] * region_mult[region_idx]
    stay = 1.0 - 1.0 / cfg.mean_duration

    h0 = np.clip(base_h * season[0], 0, 1)
    denom = h0 + 1 - stay
    p_ill0 = np.divide(h0, denom, out=np.zeros(n), where=denom > 0)
    ill = rng.random(n) < p_ill0
    symptoms = np.zeros((n, 6), dtype=bool)
    if ill.any():
        symptoms[ill] = _draw_symptoms(rng, int(ill.sum()), cfg)

    resp_rows, resp_weeks, resp_flags = [], [], []
    for t in range(T):
        h = np.clip(base_h * season[t], 0, 1)
        if t > 0:
            u = rng.random(n)
            onset = ~ill & (u < h)
            recover = ill & (u >= stay)
            ill = (ill & ~recover) | onset
            if onset.any():
                symptoms[onset] = _draw_symptoms(rng, int(onset.sum()), cfg)
            symptoms[recover] = False
        p = np.where(ill, ill_prop, well)
        responded = rng.random(n) < p
        idx = np.flatnonzero(responded)
        resp_rows.append(idx)
        resp_weeks.append(np.full(idx.size, t))
        resp_flags.append(symptoms[idx] & ill[idx, None])

    ids = np.array([f"P{i:06d}" for i in range(n)])
    rows = np.concatenate(resp_rows)
    week_off = np.concatenate(resp_weeks)
    flags = np.concatenate(resp_flags) if rows.size else np.zeros((0, 6), dtype=bool)
    start_idx = week_index(cfg.start)
    responses = pd.DataFrame({"participant_id": ids[rows]})
    responses["week"] = (start_idx + week_off).astype(np.int64)
    responses["week_ending"] = [SurveyWeek.from_index(w).ending_date for w in responses["week"]]
    for j, s in enumerate(SYMPTOMS):
        responses[s] = flags[:, j]
    responses = responses[["participant_id", "week_ending", "week", *SYMPTOMS]]
    responses = responses.sort_values(["participant_id", "week"], kind="mergesort").reset_index(drop=True)

    participants = pd.DataFrame({
        "participant_id": ids,
        "age": pd.array(ages, dtype="Int64"),
        "gender": gender,
        "ethnicity": ethnicity,
        "region": np.array(regions)[region_idx],
        "postcode": pd.array([pd.NA] * n, dtype="object"),
    })

    reference = _reference(cfg, bands, regions)
    truth = _ground_truth(cfg, bands, regions, hazard_band, region_mult, season, stay)
    return Cohort(responses, participants, reference, truth, cfg)


def _reference(cfg: SynthConfig, bands, regions):
    from .survey_data import reference_from_entries

    groups = five_year_bands()
    ref_shares = _shares(cfg.reference, [b.label for b in bands])
    reg_shares = _shares(cfg.regions, regions)
    entries = {}
    for b, share in zip(bands, ref_shares):
        members = [g for g in groups if b.covers(g)]
        for g in members:
            for r, rs in zip(regions, reg_shares):
                entries[(r, g)] = cfg.population * share * rs / len(members)
    return reference_from_entries(entries)


def _ground_truth(cfg, bands, regions, hazard_band, region_mult, season, stay) -> pd.DataFrame:
    gp = grouping_probabilities(cfg)
    ref_shares = _shares(cfg.reference, [b.label for b in bands])
    reg_pop = _shares(cfg.regions, regions)
    reg_sample = _shares(cfg.region_registration or cfg.regions, regions)
    reg_sample_band = _shares(cfg.registration, [b.label for b in bands])
    T = cfg.weeks
    onset = np.zeros((len(bands), len(regions), T))
    for i in range(len(bands)):
        for j in range(len(regions)):
            h = np.clip(hazard_band[i] * region_mult[j] * season[:T], 0, 1)
            onset[i, j] = expected_onsets(h, stay)
    weeks = [SurveyWeek.from_index(week_index(cfg.start) + t).ending_date.isoformat() for t in range(T)]
    rows = []
    pop = np.einsum("i,j,ijt->t", ref_shares, reg_pop, onset)
    samp = np.einsum("i,j,ijt->t", reg_sample_band, reg_sample, onset)
    for g, pg in gp.items():
        for t in range(T):
            rows.append((weeks[t], g, "population", "all", "all", pop[t] * pg))
            rows.append((weeks[t], g, "registered", "all", "all", samp[t] * pg))
        for i, b in enumerate(bands):
            band_pop = np.einsum("j,jt->t", reg_pop, onset[i])
            for t in range(T):
                rows.append((weeks[t], g, "population", "age_band", b.label, band_pop[t] * pg))
        for j, r in enumerate(regions):
            reg_band = np.einsum("i,it->t", ref_shares, onset[:, j])
            for t in range(T):
                rows.append((weeks[t], g, "population", "region", r, reg_band[t] * pg))
    return pd.DataFrame(rows, columns=["week_ending", "grouping", "basis", "factor_name", "factor_value",
                                       "incidence"])


def truth_series(cohort: Cohort, grouping: str, basis: str = "population",
                 factor_name: str = "all", factor_value: str = "all") -> pd.Series:
    """Expected weekly incidence indexed by week index."""
    gt = cohort.ground_truth
    sel = gt[(gt["grouping"] == grouping) & (gt["basis"] == basis) & (gt["factor_name"] == factor_name)
             & (gt["factor_value"] == factor_value)]
    idx = [week_index(date.fromisoformat(d)) for d in sel["week_ending"]]
    return pd.Series(sel["incidence"].to_numpy(), index=idx)


def dataset_files(cohort: Cohort) -> dict:
    """CSV text of each output file, keyed by file name."""
    gt = cohort.ground_truth.copy()
    gt["incidence"] = [f"{x:.12g}" for x in gt["incidence"]]
    return {
        "responses.csv": responses_to_csv(cohort.responses),
        "participants.csv": participants_to_csv(cohort.participants),
        "reference_population.csv": reference_to_csv(cohort.reference),
        "ground_truth.csv": gt.to_csv(index=False, lineterminator="\n"),
    }


def roundtrip(cohort: Cohort) -> Cohort:
    """Re-read the cohort through the CSV parsers (as the CLI would see it)."""
    files = dataset_files(cohort)
    return replace(
        cohort,
        responses=parse_responses(io.StringIO(files["responses.csv"])),
        participants=parse_demographics(io.StringIO(files["participants.csv"])),
        reference=parse_reference_population(io.StringIO(files["reference_population.csv"])),
    )


# ---------------------------------------------------------------------------
# oracles


def bootstrap_replicates(y, w, replicates: int = 2000, seed: int = 0) -> tuple[np.ndarray, int]:
    """Weighted proportions of ``replicates`` row resamples, and how many
    resamples had all-equal outcomes."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n = y.size
    if n < 2:
        raise ValueError("bootstrap needs at least two observations")
    rng = np.random.default_rng(seed)
    est = np.empty(replicates)
    degenerate = 0
    chunk = max(1, 2_000_000 // n)
    for start in range(0, replicates, chunk):
        stop = min(replicates, start + chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        wy, ww = (w * y)[idx], w[idx]
        est[start:stop] = wy.sum(axis=1) / ww.sum(axis=1)
        ys = y[idx]
        degenerate += int(np.sum(ys.min(axis=1) == ys.max(axis=1)))
    return est, degenerate


def bootstrap_ci(y, w, replicates: int = 2000, seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the weighted proportion."""
    est, _ = bootstrap_replicates(y, w, replicates, seed)
    alpha = 1 - level
    lo, hi = np.quantile(est, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


# grouping rules restated over record attributes, independent of the predicates
_ORACLE_RULES = {
    "CLI1+": lambda r: sum(bool(getattr(r, s)) for s in SYMPTOMS) >= 1,
    "CLI2+": lambda r: sum(bool(getattr(r, s)) for s in SYMPTOMS) >= 2,
    "ILI": lambda r: bool(r.cough) and bool(r.fever),
}


def incident_oracle(history: Sequence, grouping) -> list[Incident]:
    """Incidents by direct scanning of a dense week-by-week state list.

    Written independently of :func:`incidents.assign_incidents` for cross-checks.
    """
    grouping = get_grouping(grouping)
    if not history:
        return []
    rule = _ORACLE_RULES[grouping.name]
    pid = history[0].participant_id
    first, last = history[0].week.index, history[-1].week.index
    state = {}  # week -> True (qualifies) / False (responded, does not qualify)
    for r in history:
        state[r.week.index] = rule(r)

    def qual(t):
        return state.get(t) is True

    def missing(t):
        return first <= t <= last and t not in state

    out = []
    for t in range(first, last + 1):
        if not qual(t):
            continue
        joined = qual(t - 1) or (missing(t - 1) and qual(t - 2))
        if joined:
            continue
        members, bridged = [t], []
        u = t
        while True:
            if qual(u + 1):
                members.append(u + 1)
                u += 1
            elif missing(u + 1) and qual(u + 2):
                members += [u + 1, u + 2]
                bridged.append(u + 1)
                u += 2
            else:
                break
        onset = SurveyWeek.from_index(t)
        out.append(Incident(incident_id(pid, grouping.name, onset), pid, grouping.name, onset,
                            tuple(SurveyWeek.from_index(x) for x in members),
                            tuple(SurveyWeek.from_index(x) for x in bridged)))
    return out


PATTERN_STATES = ("none", "asymptomatic", "one", "two", "cough_fever")
_PATTERN_FLAGS = {
    "asymptomatic": (False,) * 6,
    "one": (False, False, False, False, True, False),   # runny nose
    "two": (False, False, True, False, True, False),    # sore throat + runny nose
    "cough_fever": (True, True, False, False, False, False),
}


def all_patterns(max_len: int = 8):
    """Every sequence over the five week states, lengths 1..max_len."""
    for length in range(1, max_len + 1):
        yield from itertools.product(range(len(PATTERN_STATES)), repeat=length)


def pattern_flags(state: int) -> Optional[tuple]:
    return _PATTERN_FLAGS.get(PATTERN_STATES[state])
