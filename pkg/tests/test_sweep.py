import numpy as np
import pandas as pd

from symptom_incidence.consistency import ConsistencyParams, consistency_marks
from symptom_incidence.incidents import CLI1
from symptom_incidence.sweep import (
    filter_high_exclusion_weeks,
    parse_range,
    run_sweep,
    summarize_sweep,
)
from tests.conftest import presence_table, table


def test_parse_range():
    assert parse_range("1..4") == [1, 2, 3, 4]
    assert parse_range("0,2") == [0, 2]
    assert parse_range("3") == [3]


def test_filter_drops_high_and_undefined_weeks():
    s = pd.DataFrame({"fraction_excluded": [0.1, 0.25, 0.3, np.nan]})
    assert filter_high_exclusion_weeks(s).index.tolist() == [0, 1]


def test_grid_skips_invalid_points():
    t = presence_table(np.ones((3, 10), dtype=bool))
    res = run_sweep(t, [1, 2], [0, 1, 2], [CLI1])
    pts = set(zip(res.weekly["window_w"], res.weekly["missing_m"]))
    assert pts == {(1, 0), (2, 0), (2, 1)}
    assert len(res.warnings) == 3


def test_full_panel_sweep():
    t = presence_table(np.ones((3, 10), dtype=bool))
    res = run_sweep(t, [1, 4], [0, 1], [CLI1], trim_warmup=True)
    assert (res.weekly["fraction_excluded"] == 0).all()
    assert res.weekly["week"].min() == t["week"].min() + 4
    summ = res.summary[res.summary["weeks"] == "filtered"]
    assert (summ["fraction_excluded_max"] == 0).all()
    assert (summ["n_weeks"] == 6).all()


def test_fraction_matches_marks():
    rng = np.random.default_rng(1)
    t = presence_table(rng.random((30, 15)) < 0.7)
    res = run_sweep(t, [3], [1], [CLI1])
    marks = consistency_marks(t, ConsistencyParams(3, 1))
    frac = 1 - marks.groupby("week")["consistent"].mean()
    got = res.weekly.set_index("week")["fraction_excluded"]
    pd.testing.assert_series_equal(got.loc[frac.index], frac, check_names=False)


def test_relative_change_of_baseline_grid_point():
    t = table("A A N A A A", "A A A A N A", ". . N . . N")
    res = run_sweep(t, [1], [0], [CLI1])
    assert np.all(np.isfinite(res.weekly["baseline"]))
    summ = summarize_sweep(res.weekly)
    assert set(summ["weeks"]) == {"all_weeks", "filtered"}
