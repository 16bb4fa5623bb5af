"""End-to-end estimation runs and CSV output helpers."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from .consistency import ConsistencyParams, consistency_marks
from .estimation import (
    adjustment_effect,
    cells_frame,
    compare_locations,
    comparisons_frame,
    estimate_by,
)
from .incidents import DEFAULT_GROUPINGS, add_onset_columns, get_grouping, incidents_table
from .raking import NATIONAL, Scope, compute_weights, parse_scope
from .survey_data import AgeBand, ReferencePopulation, five_year_bands, week_universe

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.15g"


@dataclass
class RunConfig:
    responses: Optional[Path] = None
    participants: Optional[Path] = None
    reference: Optional[Path] = None
    groupings: Sequence[str] = tuple(g.name for g in DEFAULT_GROUPINGS)
    window_w: int = 4
    missing_m: int = 1
    scope: str = NATIONAL
    compare: Optional[str] = None
    bands: Sequence[AgeBand] = field(default_factory=five_year_bands)
    by: str = "week"
    factor_bands: Optional[Sequence[AgeBand]] = None
    weighting: bool = True
    adjustment: bool = False
    debug_exports: bool = False
    out: Path = Path("out")
    strict_cells: bool = False
    trim_warmup: bool = False
    ci_level: float = 0.95

    @property
    def params(self) -> ConsistencyParams:
        return ConsistencyParams(self.window_w, self.missing_m)


def write_csv(df: pd.DataFrame, path, schema_version: int = SCHEMA_VERSION) -> None:
    """Write ``df`` with a schema-version comment line, atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = f"# schema_version: {schema_version}\n" + df.to_csv(
        index=False, lineterminator="\n", float_format=FLOAT_FORMAT
    )
    write_text(text, path)


def write_text(text: str, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def run_estimate(
    cfg: RunConfig,
    responses: pd.DataFrame,
    participants: pd.DataFrame,
    reference: ReferencePopulation,
) -> dict:
    """All estimate outputs for one configuration, as DataFrames keyed by file name."""
    groupings = [get_grouping(g) for g in cfg.groupings]
    params = cfg.params
    data = add_onset_columns(responses, groupings)
    marks = consistency_marks(responses, params)
    keep = marks["consistent"].to_numpy(bool)
    consistent = responses[keep].reset_index(drop=True)

    if cfg.compare:
        scope_a = parse_scope(cfg.scope, reference)
        if scope_a.is_national:
            raise ValueError("--compare needs a sub-national --scope")
        scope_b = parse_scope(cfg.compare, reference, complement_of=scope_a)
        overlap = set(scope_a.regions) & set(scope_b.regions)
        if overlap:
            raise ValueError(f"compared locations overlap: {', '.join(sorted(overlap))}")
        scopes = [scope_a, scope_b]
        factor = "location"
    else:
        scopes = [parse_scope(cfg.scope, reference)]
        factor = "age" if cfg.by == "age" else None
        if cfg.by == "location":
            raise ValueError("location estimates need --compare")

    frames = []
    for s in scopes:
        if cfg.weighting:
            w, _ = compute_weights(consistent, participants, reference, cfg.bands, s, cfg.strict_cells)
        else:
            w = _unit_weights(consistent, participants, s)
        frames.append(w)
    weights = pd.concat(frames, ignore_index=True)

    cells = estimate_by(
        data,
        marks,
        weights,
        groupings,
        factor=factor,
        participants=participants,
        age_bands=cfg.factor_bands or cfg.bands,
        level=cfg.ci_level,
    )
    estimates = cells_frame(cells)
    warm = _warmup_dates(responses, params.window_w)
    if cfg.trim_warmup:
        estimates = estimates[~estimates["week_ending"].isin(warm)].reset_index(drop=True)
    out = {"estimates.csv": estimates}

    if cfg.compare:
        comps = comparisons_frame(compare_locations(cells, scopes[0].name, scopes[1].name))
        out["comparisons.csv"] = comps
    if cfg.adjustment:
        adj = adjustment_effect(responses, participants, reference, params, cfg.bands, groupings,
                                scopes[0], cfg.strict_cells)
        if cfg.trim_warmup:
            adj = adj[~adj["week_ending"].isin(warm)]
        out["adjustment_effect.csv"] = adj.drop(columns="week").reset_index(drop=True)
    if cfg.debug_exports:
        out["incidents.csv"] = incidents_table(responses, groupings)
        m = marks[["participant_id", "week_ending", "consistent"]].copy()
        m["week_ending"] = [d.isoformat() for d in m["week_ending"]]
        out["consistency_marks.csv"] = m
        wt = weights[["participant_id", "week_ending", "scope", "weight"]].copy()
        wt["week_ending"] = [d.isoformat() for d in wt["week_ending"]]
        out["weights.csv"] = wt
    return out


def _unit_weights(consistent: pd.DataFrame, participants: pd.DataFrame, scope: Scope) -> pd.DataFrame:
    rows = consistent[["participant_id", "week_ending", "week"]]
    if not scope.is_national:
        region = rows["participant_id"].map(participants.set_index("participant_id")["region"])
        rows = rows[region.isin(scope.regions).fillna(False).to_numpy(bool)]
    return rows.assign(scope=scope.name, weight=1.0).reset_index(drop=True)


def _warmup_dates(responses: pd.DataFrame, window_w: int) -> set:
    from .survey_data import week_date

    return {week_date(w).isoformat() for w in week_universe(responses)[:window_w]}


def write_outputs(outputs: dict, out_dir) -> list[Path]:
    paths = []
    for name, df in outputs.items():
        p = Path(out_dir) / name
        write_csv(df, p)
        paths.append(p)
    return paths
