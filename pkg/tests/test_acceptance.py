"""Acceptance criteria for the incidence pipeline.

Each test records a PASS/FAIL line in ``RESULTS``; the lines are printed in the
pytest terminal summary (see ``conftest.py``) and when the module is run as a
script (``python3 tests/test_acceptance.py``).
"""

import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from symptom_incidence.cli import main as cli_main
from symptom_incidence.consistency import ConsistencyParams, consistency_marks
from symptom_incidence.estimation import (
    cells_frame,
    compare_groups,
    estimate_by,
    estimate_cell,
    prepare_cells,
    weekly_proportions,
)
from symptom_incidence.incidents import CLI1, CLI2, ILI, add_onset_columns, assign_incidents, mark_onsets
from symptom_incidence.pipeline import RunConfig, run_estimate
from symptom_incidence.raking import MarginSpec, compute_weights, rake
from symptom_incidence.survey_data import (
    ResponseRecord,
    SurveyWeek,
    five_year_bands,
    parse_demographics,
    parse_reference_population,
    parse_responses,
)
from symptom_incidence.synth import (
    SynthConfig,
    all_patterns,
    bootstrap_ci,
    generate_cohort,
    incident_oracle,
    pattern_flags,
)

FIXTURE = Path(__file__).resolve().parents[1] / "data" / "fixture"
START = 2700  # week index of an arbitrary Sunday
GROUPINGS = (CLI1, CLI2, ILI)
RESULTS = {}
SYMPTOM_NAMES = ("cough", "fever", "sore_throat", "shortness_of_breath", "runny_nose", "loss_taste_smell")


def report(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[criterion] = line
    print(line)
    return ok


# ---------------------------------------------------------------------------
# 1. incident oracle equivalence over every short pattern


def test_criterion_1_incident_oracle_equivalence():
    t0 = time.perf_counter()
    weeks = [SurveyWeek.from_index(START + t) for t in range(8)]
    records = {(t, s): ResponseRecord("P", weeks[t], *pattern_flags(s))
               for t in range(8) for s in range(1, 5)}
    mismatches = 0
    histories = 0
    full = []  # length-8 histories, for the vectorised check
    oracle_onsets = {g.name: set() for g in GROUPINGS}
    for pattern in all_patterns(8):
        h = [records[t, s] for t, s in enumerate(pattern) if s]
        for g in GROUPINGS:
            want = incident_oracle(h, g)
            if assign_incidents(h, g) != want:
                mismatches += 1
            if len(pattern) == 8:
                oracle_onsets[g.name].update((len(full), i.onset_week.index) for i in want)
        if len(pattern) == 8:
            full.append(pattern)
        histories += 1

    # vectorised onset flags on all length-8 histories at once
    pats = np.array(full)
    hist, off = np.nonzero(pats)  # row-major: sorted by history then week
    flags = np.array([pattern_flags(s) for s in range(1, 5)])[pats[hist, off] - 1]
    table = pd.DataFrame({"participant_id": [f"H{i:06d}" for i in hist],
                          "week_ending": [weeks[t].ending_date for t in off],
                          "week": START + off})
    for j, name in enumerate(SYMPTOM_NAMES):
        table[name] = flags[:, j]
    vec_mismatch = 0
    for g in GROUPINGS:
        onset = mark_onsets(table, g)["is_onset"].to_numpy()
        got = set(zip(hist[onset].tolist(), (START + off[onset]).tolist()))
        vec_mismatch += len(got ^ oracle_onsets[g.name])

    expected = sum(5 ** k for k in range(1, 9))
    ok = mismatches == 0 and vec_mismatch == 0 and histories == expected
    report(1, ok, f"{histories} histories x 3 groupings: {mismatches} mismatches; "
                  f"vectorised onsets: {vec_mismatch} mismatches ({time.perf_counter() - t0:.0f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. worked example


def test_criterion_2_worked_example():
    def rec(t, **flags):
        return ResponseRecord("P1", SurveyWeek.from_index(START + t), **flags)

    h = [rec(0, cough=True, fever=True), rec(1, cough=True), rec(2, cough=True, runny_nose=True)]
    cli1 = assign_incidents(h, CLI1)
    cli2 = assign_incidents(h, CLI2)
    onsets2 = [i.onset_week.index - START for i in cli2]
    ok = len(cli1) == 1 and len(cli2) == 2 and onsets2 == [0, 2]
    report(2, ok, f"CLI1+ incidents={len(cli1)} (want 1), CLI2+ incidents={len(cli2)} onsets {onsets2} "
                  "(want 2 at weeks 0 and 2)")
    assert ok


# ---------------------------------------------------------------------------
# 3. consistency nesting

GRID = [(w, m) for w in range(1, 9) for m in range(w)]
MINIMAL = ((1, 0), (2, 1), (3, 2))


def random_tables(count=1000, seed=31):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, 25))
        T = int(rng.integers(1, 21))
        propensity = rng.beta(2, 1, size=n)
        join = rng.integers(0, T, size=n)
        leave = np.minimum(T, join + rng.integers(1, T + 1, size=n))
        t = np.arange(T)
        present = (rng.random((n, T)) < propensity[:, None]) & (t >= join[:, None]) & (t < leave[:, None])
        present[0, 0] = True  # every table starts in week 0
        pid, off = np.nonzero(present)
        table = pd.DataFrame({"participant_id": [f"P{i:03d}" for i in pid], "week": START + off})
        table["week_ending"] = [SurveyWeek.from_index(w).ending_date for w in table["week"]]
        yield table[["participant_id", "week_ending", "week"]]


def _subsets(table):
    out = {}
    for w, m in GRID:
        marks = consistency_marks(table, ConsistencyParams(w, m))
        out[w, m] = marks["consistent"].to_numpy(bool)
    return out


def test_criterion_3_consistency_nesting():
    nest_violations = 0
    minimal_differences = 0
    tables = 0
    for table in random_tables():
        tables += 1
        sub = _subsets(table)
        for w, m in GRID:
            if (w + 1, m) in sub and np.any(sub[w + 1, m] & ~sub[w, m]):
                nest_violations += 1
            if (w, m + 1) in sub and np.any(sub[w, m] & ~sub[w, m + 1]):
                nest_violations += 1
        a, b, c = (sub[k] for k in MINIMAL)
        if not (np.array_equal(a, b) and np.array_equal(b, c)):
            minimal_differences += 1
    ok = nest_violations == 0 and minimal_differences == 0
    report(3, ok, f"{tables} tables: {nest_violations} nesting violations; "
                  f"{minimal_differences} tables where (1,0), (2,1), (3,2) subsets differ")
    assert nest_violations == 0, "nesting violated"
    assert minimal_differences == 0, (
        f"minimal-window subsets differ on {minimal_differences} of {tables} tables"
    )


# ---------------------------------------------------------------------------
# 4. raking


def test_criterion_4_raking():
    rng = np.random.default_rng(404)
    # single margin: weights equal target share / sample share (scaled to n)
    single_err = 0.0
    for _ in range(200):
        k = int(rng.integers(2, 7))
        counts = rng.integers(1, 40, size=k)
        target = rng.dirichlet(np.ones(k))
        cats = [f"c{i}" for i in range(k)]
        df = pd.DataFrame({"age_band": np.repeat(cats, counts)})
        res = rake(df, [MarginSpec("age_band", tuple(cats), dict(zip(cats, target)))])
        n = counts.sum()
        expected = np.repeat(target / (counts / n), counts)
        single_err = max(single_err, float(np.max(np.abs(res.weights - expected))))

    # two margins on random 2x2 and 5x3 tables
    multi_err = 0.0
    not_converged = 0
    for shape in [(2, 2)] * 100 + [(5, 3)] * 100:
        counts = rng.integers(1, 30, size=shape)
        rows = [(f"r{i}", f"c{j}") for i in range(shape[0]) for j in range(shape[1])
                for _ in range(counts[i, j])]
        df = pd.DataFrame(rows, columns=["age_band", "location"])
        rt, ct = rng.dirichlet(np.ones(shape[0])), rng.dirichlet(np.ones(shape[1]))
        m1 = MarginSpec("age_band", tuple(f"r{i}" for i in range(shape[0])),
                        {f"r{i}": rt[i] for i in range(shape[0])})
        m2 = MarginSpec("location", tuple(f"c{j}" for j in range(shape[1])),
                        {f"c{j}": ct[j] for j in range(shape[1])})
        res = rake(df, [m1, m2], max_iter=1000)
        not_converged += not res.converged
        w = res.table["weight"]
        for m in (m1, m2):
            share = w.groupby(res.table[m.variable]).sum() / w.sum()
            multi_err = max(multi_err, max(abs(share[c] - m.targets[c]) for c in m.categories))

    # reference-count scale invariance on the bundled fixture
    reference = parse_reference_population(FIXTURE / "reference_population.csv")
    responses = parse_responses(FIXTURE / "responses.csv")
    people = parse_demographics(FIXTURE / "participants.csv")
    sub = responses[responses["week"] == responses["week"].max()].reset_index(drop=True)
    w1, _ = compute_weights(sub, people, reference, five_year_bands())
    w2, _ = compute_weights(sub, people, reference.scaled(1234.5), five_year_bands())
    scale_err = float(np.max(np.abs(w1["weight"].to_numpy() - w2["weight"].to_numpy())))

    ok = single_err <= 1e-12 and multi_err <= 1e-9 and scale_err <= 1e-12 and not_converged == 0
    report(4, ok, f"single-margin max error {single_err:.1e} (tol 1e-12); 2x2/5x3 margin error "
                  f"{multi_err:.1e} (tol 1e-9, {not_converged} unconverged); scale {scale_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 5. confidence intervals


def test_criterion_5_confidence_intervals():
    # (a) hand delta-method values
    cell = estimate_cell(np.r_[np.ones(50), np.zeros(50)], np.ones(100))
    se = np.sqrt(0.25 / 99) / 0.25
    z = stats.norm.ppf(0.975)
    hand = (1 / (1 + np.exp(z * se)), 1 / (1 + np.exp(-z * se)))
    a_ok = (abs(cell.ci_low - 0.4027) < 1e-3 and abs(cell.ci_high - 0.5973) < 1e-3
            and abs(cell.ci_low - hand[0]) < 1e-12 and abs(cell.ci_high - hand[1]) < 1e-12)

    # (b) coverage: 2000 simulated cells per p with survey-like weights, plus the
    # exact binomial coverage of the equal-weight interval
    rng = np.random.default_rng(2021)
    coverage, exact = {}, {}
    for p in (0.02, 0.05, 0.10):
        hits = 0
        for _ in range(2000):
            y = (rng.random(500) < p).astype(float)
            w = rng.gamma(5.0, 0.2, size=500)
            c = estimate_cell(y, w)
            hits += c.ci_low <= p <= c.ci_high
        coverage[p] = hits / 2000
        cov = 0.0
        for k in range(501):
            c = estimate_cell(np.r_[np.ones(k), np.zeros(500 - k)], np.ones(500))
            if c.ci_low <= p <= c.ci_high:
                cov += stats.binom.pmf(k, 500, p)
        exact[p] = cov
    b_ok = all(0.93 <= v <= 0.97 for v in coverage.values()) and all(0.93 <= v <= 0.97 for v in exact.values())

    # (c) bootstrap agreement at n = 1000
    rel = []
    for p, seed in ((0.05, 1), (0.10, 2), (0.30, 3)):
        g = np.random.default_rng(seed)
        y = (g.random(1000) < p).astype(float)
        w = g.gamma(5.0, 0.2, size=1000)
        c = estimate_cell(y, w)
        lo, hi = bootstrap_ci(y, w, 2000, seed=seed)
        rel += [abs(c.ci_low - lo) / lo, abs(c.ci_high - hi) / hi]
    c_ok = max(rel) <= 0.10

    ok = a_ok and b_ok and c_ok
    report(5, ok, f"(a) CI ({cell.ci_low:.4f}, {cell.ci_high:.4f}); (b) coverage "
                  + ", ".join(f"p={p}: {coverage[p]:.3f} sim / {exact[p]:.3f} exact" for p in coverage)
                  + f"; (c) max relative bootstrap gap {max(rel):.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 6. reporting-bias correction direction


def test_criterion_6_reporting_bias_direction():
    params = ConsistencyParams(4, 1)
    below, rels = [], []
    for seed in range(20):
        cfg = SynthConfig(n_participants=20000, weeks=30, seed=1000 + seed, p_resp_well=0.6,
                          p_resp_ill=0.9, propensity_concentration=10.0)
        cohort = generate_cohort(cfg)
        data = add_onset_columns(cohort.responses, [CLI1])
        keep = consistency_marks(cohort.responses, params)["consistent"].to_numpy(bool)
        naive = weekly_proportions(data, [CLI1])["CLI1+"]
        consistent = weekly_proportions(data[keep], [CLI1])["CLI1+"]
        rel = (consistent - naive.loc[consistent.index]) / naive.loc[consistent.index]
        below += (rel < 0).tolist()
        rels += rel.tolist()
    frac, med = float(np.mean(below)), float(np.median(rels))
    ok = frac >= 0.95 and -0.15 <= med <= -0.02
    report(6, ok, f"consistent < naive in {frac:.1%} of {len(below)} weeks (need >= 95%); "
                  f"median relative change {med:+.1%} (need -15%..-2%)")
    assert ok


# ---------------------------------------------------------------------------
# 7. reweighting direction


def test_criterion_7_reweighting_direction():
    params = ConsistencyParams(4, 1)
    higher = []
    for seed in range(5):
        cfg = SynthConfig(n_participants=6000, weeks=20, seed=700 + seed,
                          registration={"0-4": 0.02, "5-19": 0.08, "20-39": 0.20, "40-64": 0.42,
                                        "65+": 0.28})
        cohort = generate_cohort(cfg)
        data = add_onset_columns(cohort.responses, [CLI1])
        marks = consistency_marks(cohort.responses, params)
        keep = marks["consistent"].to_numpy(bool)
        w, _ = compute_weights(cohort.responses[keep].reset_index(drop=True), cohort.participants,
                               cohort.reference, five_year_bands())
        unweighted = weekly_proportions(data[keep], [CLI1])["CLI1+"]
        weighted = weekly_proportions(prepare_cells(data, marks, w, [CLI1]), [CLI1], "weight")["CLI1+"]
        higher += (weighted > unweighted.loc[weighted.index]).tolist()
    frac = float(np.mean(higher))
    ok = frac >= 0.95
    report(7, ok, f"weighted > unweighted in {frac:.1%} of {len(higher)} weeks (need >= 95%)")
    assert ok


# ---------------------------------------------------------------------------
# 8. two-group test calibration


def _week_pair(rng, p_a, p_b, n=2000):
    cells = []
    for p in (p_a, p_b):
        y = (rng.random(n) < p).astype(float)
        w = rng.gamma(5.0, 0.2, size=n)
        cells.append(estimate_cell(y, w))
    return compare_groups(*cells)


def test_criterion_8_two_group_calibration():
    rng = np.random.default_rng(808)
    null = [_week_pair(rng, 0.03, 0.03) for _ in range(2000)]
    alt = [_week_pair(rng, 0.02, 0.05) for _ in range(500)]
    size = np.mean([c.significant for c in null])
    power = np.mean([c.significant for c in alt])
    ok = 0.03 <= size <= 0.07 and power > 0.90
    report(8, ok, f"null rejection {size:.3f} over {len(null)} weeks (need 0.03-0.07); "
                  f"power {power:.3f} for 0.02 vs 0.05 (need > 0.90)")
    assert ok


# ---------------------------------------------------------------------------
# 9. determinism and scale invariance


def test_criterion_9_determinism(tmp_path):
    inputs = ["--responses", str(FIXTURE / "responses.csv"),
              "--participants", str(FIXTURE / "participants.csv"),
              "--reference", str(FIXTURE / "reference_population.csv")]
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli_main(["estimate", *inputs, "--adjustment", "--debug-exports", "--out", str(out)]) == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    identical = runs[0] == runs[1]

    responses = parse_responses(FIXTURE / "responses.csv")
    people = parse_demographics(FIXTURE / "participants.csv")
    reference = parse_reference_population(FIXTURE / "reference_population.csv")
    base = run_estimate(RunConfig(), responses, people, reference)["estimates.csv"]
    scaled_ref = run_estimate(RunConfig(), responses, people, reference.scaled(37.0))["estimates.csv"]

    marks = consistency_marks(responses, ConsistencyParams())
    keep = marks["consistent"].to_numpy(bool)
    w, _ = compute_weights(responses[keep].reset_index(drop=True), people, reference, five_year_bands())
    data = add_onset_columns(responses)
    est = cells_frame(estimate_by(data, marks, w))
    est_scaled = cells_frame(estimate_by(data, marks, w.assign(weight=w["weight"] * 250.0)))

    num = ["p_hat", "ci_low", "ci_high"]

    def gap(a, b):
        same_keys = a.drop(columns=num).equals(b.drop(columns=num))
        diff = np.nanmax(np.abs(a[num].to_numpy(float) - b[num].to_numpy(float)))
        return diff if same_keys else np.inf

    ref_gap, w_gap = gap(base, scaled_ref), gap(est, est_scaled)
    ok = identical and ref_gap <= 1e-9 and w_gap <= 1e-9
    report(9, ok, f"reruns byte-identical: {identical}; reference-scale gap {ref_gap:.1e}; "
                  f"weight-scale gap {w_gap:.1e} (tol 1e-9)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
