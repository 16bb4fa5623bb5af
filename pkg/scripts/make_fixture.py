"""Regenerate the bundled demonstration cohort in data/fixture/.

    python3 scripts/make_fixture.py [--config data/fixture/synth.toml] [--out data/fixture]
"""

import argparse
from pathlib import Path

from symptom_incidence.pipeline import write_text
from symptom_incidence.synth import SynthConfig, dataset_files, generate_cohort

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "data" / "fixture" / "synth.toml")
    ap.add_argument("--out", type=Path, default=ROOT / "data" / "fixture")
    args = ap.parse_args()

    cohort = generate_cohort(SynthConfig.from_toml(args.config))
    for name, text in dataset_files(cohort).items():
        write_text(f"# schema_version: 1\n{text}", args.out / name)
    print(f"{len(cohort.participants)} participants, {len(cohort.responses)} responses -> {args.out}")


if __name__ == "__main__":
    main()
