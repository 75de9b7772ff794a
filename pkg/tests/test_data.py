"""Panel ingestion, validation, and synthetic-generator tests."""
from __future__ import annotations

import io
from datetime import date, timedelta

import numpy as np
import pytest

from sectorrl.data import (
    DuplicateKeyError,
    InsufficientHistoryError,
    ParseError,
    SectorPanel,
    SplitSpec,
    SynthSpec,
    ValidationError,
    deterministic_leader,
    load_panel,
    synth_panel,
    write_panel,
)


def write_rows(path, rows, header="date,sector_id,close,cap_share"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")


def make_file(path, n_sectors=3, n_days=100):
    start = date(2015, 1, 1)
    rows = []
    for ti in range(n_days):
        day = (start + timedelta(days=ti)).isoformat()
        for si in range(n_sectors):
            close = 100.0 + si + 0.1 * ti
            rows.append(f"{day},S{si},{close},{0.9 / n_sectors}")
    write_rows(path, rows)


def test_load_well_formed_file(tmp_path):
    path = tmp_path / "panel.csv"
    make_file(path, n_sectors=3, n_days=100)
    panel = load_panel(path, report_stream=io.StringIO())
    assert panel.n_sectors == 3
    assert panel.n_days == 100
    assert panel.sector_ids == ["S0", "S1", "S2"]
    assert (panel.close > 0).all()


def test_duplicate_row_raises(tmp_path):
    path = tmp_path / "panel.csv"
    make_file(path, n_days=70)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("2015-01-05,S1,101.0,0.3\n")
    with pytest.raises(DuplicateKeyError):
        load_panel(path, report_stream=io.StringIO())


def test_insufficient_history(tmp_path):
    path = tmp_path / "panel.csv"
    make_file(path, n_days=59)
    with pytest.raises(InsufficientHistoryError):
        load_panel(path, report_stream=io.StringIO())


def test_malformed_row_reports_line_number(tmp_path):
    path = tmp_path / "panel.csv"
    make_file(path, n_days=70)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("not-a-date,S0,1.0,0.1\n")
    with pytest.raises(ParseError) as err:
        load_panel(path, report_stream=io.StringIO())
    assert ":212:" in str(err.value)  # 70 days x 3 sectors + header + 1


def test_non_positive_price_rejected(tmp_path):
    path = tmp_path / "panel.csv"
    write_rows(path, ["2015-01-01,S0,0.0,0.5", "2015-01-01,S1,1.0,0.5"])
    with pytest.raises(ValidationError):
        load_panel(path, report_stream=io.StringIO())


def test_missing_column_rejected(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("date,sector_id,close\n2015-01-01,S0,1.0\n", encoding="utf-8")
    with pytest.raises(ParseError):
        load_panel(path, report_stream=io.StringIO())


def test_forward_fill_flags_missing_days(tmp_path):
    path = tmp_path / "panel.csv"
    start = date(2015, 1, 1)
    rows = []
    skip_day = (start + timedelta(days=30)).isoformat()
    for ti in range(70):
        day = (start + timedelta(days=ti)).isoformat()
        for si in range(2):
            if si == 1 and day == skip_day:
                continue
            rows.append(f"{day},S{si},{100 + ti + si},0.4")
    write_rows(path, rows)
    report = io.StringIO()
    panel = load_panel(path, report_stream=report)
    assert panel.n_days == 70
    gap = panel.dates.index(date(2015, 1, 31))
    assert panel.close[1, gap] == panel.close[1, gap - 1]  # filled from prior day
    assert "forward-filled sector=S1 days=1" in report.getvalue()


def test_round_trip(tmp_path):
    panel = synth_panel(SynthSpec(n_sectors=4, n_days=80, seed=5, regime="gbm"))
    path = tmp_path / "out.csv"
    write_panel(panel, path)
    loaded = load_panel(path, report_stream=io.StringIO())
    assert loaded.dates == panel.dates
    assert loaded.sector_ids == panel.sector_ids
    np.testing.assert_array_equal(loaded.close, panel.close)
    np.testing.assert_array_equal(loaded.cap_share, panel.cap_share)


def test_synth_is_deterministic():
    a = synth_panel(SynthSpec(n_sectors=3, n_days=100, seed=7))
    b = synth_panel(SynthSpec(n_sectors=3, n_days=100, seed=7))
    np.testing.assert_array_equal(a.close, b.close)
    np.testing.assert_array_equal(a.cap_share, b.cap_share)
    c = synth_panel(SynthSpec(n_sectors=3, n_days=100, seed=8))
    assert not np.array_equal(a.close, c.close)


def test_deterministic_leader_rule_matches_shares():
    panel = synth_panel(SynthSpec(n_sectors=3, n_days=120, seed=3, regime="deterministic-leader"))
    for t in range(panel.n_days - 1):
        leader = deterministic_leader(panel, t)
        assert panel.cap_share[leader, t + 1] == pytest.approx(0.5)
        assert int(np.argmax(panel.cap_share[:, t + 1])) == leader


def test_gbm_prices_positive():
    panel = synth_panel(SynthSpec(n_sectors=5, n_days=200, seed=11, regime="gbm"))
    assert (panel.close > 0).all()


def test_random_synth_panels_validate():
    rng = np.random.default_rng(0)
    for _ in range(20):
        spec = SynthSpec(
            n_sectors=int(rng.integers(2, 9)),
            n_days=int(rng.integers(60, 200)),
            seed=int(rng.integers(0, 10_000)),
            regime=rng.choice(["gbm", "deterministic-leader"]),
        )
        synth_panel(spec).validate()  # raises on any invariant violation


def test_synth_spec_validation():
    with pytest.raises(ValidationError):
        SynthSpec(n_sectors=1, n_days=100)
    with pytest.raises(ValidationError):
        SynthSpec(n_sectors=3, n_days=59)
    with pytest.raises(ValidationError):
        SynthSpec(regime="sideways")


def test_split_spec_ordering():
    with pytest.raises(ValidationError):
        SplitSpec(train_start=date(2020, 1, 1), train_end=date(2021, 1, 1),
                  test_start=date(2020, 6, 1), test_end=date(2022, 1, 1))


def test_split_indices():
    panel = synth_panel(SynthSpec(n_sectors=3, n_days=100, seed=1))
    mid = panel.dates[79]
    split = SplitSpec(train_start=panel.dates[0], train_end=mid,
                      test_start=panel.dates[80], test_end=panel.dates[-1])
    assert split.train_indices(panel) == (0, 79)
    assert split.test_indices(panel) == (80, 99)
    off_panel = SplitSpec(train_start=panel.dates[0], train_end=mid,
                          test_start=panel.dates[-1] + timedelta(days=5),
                          test_end=panel.dates[-1] + timedelta(days=9))
    with pytest.raises(ValidationError):
        off_panel.test_indices(panel)


def test_cap_share_sum_tolerance():
    panel = synth_panel(SynthSpec(n_sectors=3, n_days=70, seed=2))
    panel.cap_share[:, 10] = [0.5, 0.4, 0.2]  # sums to 1.1
    with pytest.raises(ValidationError):
        panel.validate()
