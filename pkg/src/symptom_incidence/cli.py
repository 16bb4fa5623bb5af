"""Command line interface: ``symptom-incidence validate|estimate|sweep|summarize|synth``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime error.
Errors are reported as one JSON object on stderr.  Set
``SYMPTOM_INCIDENCE_LOG_LEVEL`` (e.g. ``DEBUG``) to change logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .consistency import ConsistencyParams, consistency_marks
from .incidents import GROUPINGS
from .pipeline import RunConfig, run_estimate, write_csv, write_outputs, write_text
from .raking import NATIONAL, parse_scope
from .survey_data import (
    SurveyDataError,
    five_year_bands,
    parse_bands,
    parse_demographics,
    parse_reference_population,
    parse_responses,
    summarize_demographics,
)
from .sweep import EXCLUSION_THRESHOLD, parse_range, run_sweep
from .synth import ConfigError, SynthConfig, dataset_files, generate_cohort

LOG_ENV = "SYMPTOM_INCIDENCE_LOG_LEVEL"
logger = logging.getLogger("symptom_incidence")


class UsageError(ValueError):
    pass


def _groupings(values):
    names = []
    for v in values or []:
        names += [x.strip() for x in v.split(",") if x.strip()]
    names = names or list(GROUPINGS)
    for n in names:
        if n not in GROUPINGS:
            raise UsageError(f"unknown grouping {n!r}; choose from {', '.join(GROUPINGS)}")
    return names


def _add_inputs(p, reference=True):
    p.add_argument("--responses", type=Path, required=True)
    p.add_argument("--participants", type=Path, required=True)
    if reference:
        p.add_argument("--reference", type=Path, required=True)


def _add_consistency(p):
    p.add_argument("--window", type=int, default=4, help="weeks before the analysis week (W)")
    p.add_argument("--missing", type=int, default=1, help="missing weeks allowed in the window (M)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symptom-incidence", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check input files")
    p.add_argument("--responses", type=Path)
    p.add_argument("--participants", type=Path)
    p.add_argument("--reference", type=Path)

    p = sub.add_parser("estimate", help="weekly incidence estimates with 95%% CIs")
    _add_inputs(p)
    p.add_argument("--grouping", action="append", help="CLI1+, CLI2+ or ILI (repeatable)")
    _add_consistency(p)
    p.add_argument("--scope", default="national", help="'national' or comma-separated regions")
    p.add_argument("--compare", help="second location set, or 'Rest' for the remaining regions")
    p.add_argument("--bands", help="weighting age bands, e.g. '0-4,5-19,20-64,65+' (default 5-year)")
    p.add_argument("--by", choices=["week", "age"], default="week")
    p.add_argument("--factor-bands", help="age bands for --by age (default: --bands)")
    p.add_argument("--unweighted", action="store_true", help="skip age raking")
    p.add_argument("--adjustment", action="store_true", help="also write adjustment_effect.csv")
    p.add_argument("--debug-exports", action="store_true",
                   help="also write incidents.csv, consistency_marks.csv and weights.csv")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--strict-cells", action="store_true", help="fail on empty raking cells")
    p.add_argument("--trim-warmup", action="store_true", help="drop the first W weeks from outputs")
    p.add_argument("--ci-level", type=float, default=0.95)

    p = sub.add_parser("sweep", help="consistency-parameter trade-off grid")
    p.add_argument("--responses", type=Path, required=True)
    p.add_argument("--participants", type=Path)
    p.add_argument("--reference", type=Path)
    p.add_argument("--grouping", action="append")
    p.add_argument("--w", default="1..8", help="window sizes, e.g. 1..8")
    p.add_argument("--m", default="0..2", help="missing weeks allowed, e.g. 0..2")
    p.add_argument("--threshold", type=float, default=EXCLUSION_THRESHOLD)
    p.add_argument("--weighting", action="store_true", help="age-rake consistent responses")
    p.add_argument("--scope", default="national")
    p.add_argument("--bands")
    p.add_argument("--trim-warmup", action="store_true")
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("summarize", help="cohort demographics and response counts")
    _add_inputs(p, reference=False)
    _add_consistency(p)
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--config", type=Path, help="synth.toml")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("out"))
    return parser


def cmd_validate(args) -> int:
    report = {"ok": True, "checks": []}

    def check(name, fn):
        try:
            value = fn()
        except (SurveyDataError, ValueError) as exc:
            report["ok"] = False
            report["checks"].append({"file": name, "ok": False, "error": str(exc)})
            return None
        report["checks"].append({"file": name, "ok": True, "rows": len(value)})
        return value

    responses = participants = reference = None
    if args.responses:
        responses = check("responses", lambda: parse_responses(args.responses))
    if args.participants:
        participants = check("participants", lambda: parse_demographics(args.participants))
    if args.reference:
        reference = check("reference", lambda: parse_reference_population(args.reference))
    warnings = []
    if responses is not None and participants is not None:
        unknown = set(responses["participant_id"]) - set(participants["participant_id"])
        if unknown:
            warnings.append(f"{len(unknown)} responding participant(s) missing from demographics")
        no_age = int(participants["age"].isna().sum())
        if no_age:
            warnings.append(f"{no_age} participant(s) without age (excluded from weighting)")
    if participants is not None and reference is not None:
        missing = sorted(set(participants["region"].dropna()) - set(reference.regions))
        if missing:
            warnings.append(f"participant region(s) absent from reference: {', '.join(missing)}")
    report["warnings"] = warnings
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 1


def _run_config(args) -> RunConfig:
    bands = parse_bands(args.bands) if args.bands else five_year_bands()
    return RunConfig(
        responses=args.responses,
        participants=args.participants,
        reference=args.reference,
        groupings=_groupings(args.grouping),
        window_w=args.window,
        missing_m=args.missing,
        scope=NATIONAL if args.scope.strip().lower() == "national" else args.scope,
        compare=args.compare,
        bands=bands,
        by=args.by,
        factor_bands=parse_bands(args.factor_bands) if args.factor_bands else None,
        weighting=not args.unweighted,
        adjustment=args.adjustment,
        debug_exports=args.debug_exports,
        out=args.out,
        strict_cells=args.strict_cells,
        trim_warmup=args.trim_warmup,
        ci_level=args.ci_level,
    )


def cmd_estimate(args) -> int:
    cfg = _run_config(args)
    if not 0 < cfg.ci_level < 1:
        raise UsageError("--ci-level must be between 0 and 1")
    cfg.params  # validates (W, M)
    responses = parse_responses(cfg.responses)
    participants = parse_demographics(cfg.participants)
    reference = parse_reference_population(cfg.reference)
    outputs = run_estimate(cfg, responses, participants, reference)
    for p in write_outputs(outputs, cfg.out):
        logger.info("wrote %s", p)
    return 0


def cmd_sweep(args) -> int:
    responses = parse_responses(args.responses)
    participants = parse_demographics(args.participants) if args.participants else None
    reference = parse_reference_population(args.reference) if args.reference else None
    if args.weighting and (participants is None or reference is None):
        raise UsageError("--weighting needs --participants and --reference")
    scope = NATIONAL
    if args.scope.strip().lower() != "national":
        scope = parse_scope(args.scope, reference)
    result = run_sweep(
        responses,
        parse_range(args.w),
        parse_range(args.m),
        _groupings(args.grouping),
        weighting=args.weighting,
        participants=participants,
        reference=reference,
        bands=parse_bands(args.bands) if args.bands else None,
        scope=scope,
        trim_warmup=args.trim_warmup,
        threshold=args.threshold,
    )
    write_csv(result.weekly.drop(columns="week"), args.out / "sweep_weekly.csv")
    write_csv(result.summary, args.out / "sweep_summary.csv")
    return 0


def cmd_summarize(args) -> int:
    responses = parse_responses(args.responses)
    participants = parse_demographics(args.participants)
    marks = consistency_marks(responses, ConsistencyParams(args.window, args.missing))
    summary = summarize_demographics(responses, participants, marks)
    write_csv(summary.table, args.out / "demographic_summary.csv")
    weekly = summary.weekly_counts.drop(columns="week").copy()
    weekly["week_ending"] = [d.isoformat() for d in weekly["week_ending"]]
    write_csv(weekly, args.out / "weekly_counts.csv")
    write_csv(summary.responses_per_person, args.out / "responses_per_person.csv")
    for w in summary.warnings:
        print(json.dumps({"warning": w}), file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig.from_toml(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cohort = generate_cohort(cfg)
    for name, text in dataset_files(cohort).items():
        write_text(f"# schema_version: 1\n{text}", args.out / name)
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "summarize": cmd_summarize,
    "synth": cmd_synth,
}


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (SurveyDataError, ConfigError, UsageError, FileNotFoundError) as exc:
        return _fail(1, exc)
    except ValueError as exc:
        # parameter and scope checks raise ValueError before any work is done
        return _fail(1, exc)
    except Exception as exc:  # noqa: BLE001
        logger.debug("unhandled error", exc_info=True)
        return _fail(2, exc)


if __name__ == "__main__":
    sys.exit(main())
