"""Run the full pipeline on the bundled fixture and compare with the known truth.

Prints, per week, the naive estimate (all responses, unweighted), the adjusted
estimate (consistent responses, age-raked) with its 95% CI, and the expected
population incidence used to simulate the cohort.

    python3 scripts/demo_estimate.py [--grouping CLI1+]
"""

import argparse
from pathlib import Path

import pandas as pd

from symptom_incidence.estimation import adjustment_effect
from symptom_incidence.pipeline import RunConfig, run_estimate
from symptom_incidence.survey_data import (
    parse_demographics,
    parse_reference_population,
    parse_responses,
)

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "data" / "fixture"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grouping", default="CLI1+")
    args = ap.parse_args()

    responses = parse_responses(FIXTURE / "responses.csv")
    people = parse_demographics(FIXTURE / "participants.csv")
    reference = parse_reference_population(FIXTURE / "reference_population.csv")
    truth = pd.read_csv(FIXTURE / "ground_truth.csv", comment="#")
    truth = truth[(truth["grouping"] == args.grouping) & (truth["basis"] == "population")
                  & (truth["factor_name"] == "all")].set_index("week_ending")["incidence"]

    cfg = RunConfig(groupings=[args.grouping], trim_warmup=True)
    est = run_estimate(cfg, responses, people, reference)["estimates.csv"].set_index("week_ending")
    effect = adjustment_effect(responses, people, reference, cfg.params, cfg.bands, [args.grouping])
    naive = effect.set_index("week_ending")["naive"]

    rows = []
    for wk, row in est.iterrows():
        rows.append({
            "week_ending": wk,
            "naive": naive.get(wk),
            "adjusted": row["p_hat"],
            "ci_low": row["ci_low"],
            "ci_high": row["ci_high"],
            "truth": truth.get(wk),
        })
    out = pd.DataFrame(rows)
    out["covered"] = (out["ci_low"] <= out["truth"]) & (out["truth"] <= out["ci_high"])
    with pd.option_context("display.float_format", "{:.4f}".format, "display.width", 120):
        print(out.to_string(index=False))
    print(f"\nmean naive/truth {(out['naive'] / out['truth']).mean():.3f}, "
          f"mean adjusted/truth {(out['adjusted'] / out['truth']).mean():.3f}, "
          f"CI covers truth in {out['covered'].mean():.0%} of weeks")


if __name__ == "__main__":
    main()
