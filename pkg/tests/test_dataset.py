import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.dataset import (
    PUBLISHED_STATS,
    SYNTH_INPUTS,
    VARIABLES,
    FeatureStats,
    Scaler,
    TimeSeriesDataset,
    VariableStats,
    apply_scaler,
    attach_constraint_pattern,
    compute_stats,
    fit_scaler,
    format_value,
    inverse_scaler,
    load_csv,
    monthly_climatology,
    monthly_constraint_pattern,
    planted_level,
    save_csv,
    seasonal_cycle,
    standardized_pairs,
    synthesize_dataset,
)
from core.errors import (
    CoverageError,
    DataError,
    DegenerateRangeError,
    EmptyDatasetError,
    IntegrityError,
    ParameterError,
    ParseError,
    SchemaError,
    SizeError,
    UnknownVariableError,
)
from tests.conftest import csv_text, toy_dataset, toy_record


def _row(year, month, P=1.0, R=2.0, G=1296.0, E=3.0, Ur=20.0, Ug=1.0, H=1271.0):
    return (year, month, P, R, G, E, Ur, Ug, H)


# ----------------------------
# load_csv
# ----------------------------
def test_load_csv_sorts_records(write_csv):
    path = write_csv(csv_text([_row(2018, 2), _row(2017, 12), _row(2018, 1, P=7.5)]))
    ds = load_csv(path)
    assert len(ds) == 3
    assert list(zip(ds.years, ds.months)) == [(2017, 12), (2018, 1), (2018, 2)]
    assert ds.column("P")[1] == 7.5
    assert ds.provenance == "measured"
    assert not ds.has_hcon


def test_load_csv_missing_file_names_path(tmp_path):
    path = str(tmp_path / "nowhere.csv")
    with pytest.raises(DataError, match="nowhere.csv"):
        load_csv(path)


def test_load_csv_missing_column(write_csv):
    header = "year,month,P,R,G,E,Ur,H"
    path = write_csv(csv_text([(2018, 1, 1, 2, 1296, 3, 20, 1271)], header=header))
    with pytest.raises(SchemaError) as ei:
        load_csv(path)
    assert ei.value.column == "Ug"


def test_load_csv_unparsable_cell_reports_row_and_column(write_csv):
    rows = [_row(2018, m) for m in range(1, 4)]
    rows[1] = _row(2018, 2, E="n/a")
    path = write_csv(csv_text(rows))
    with pytest.raises(ParseError) as ei:
        load_csv(path)
    assert ei.value.row == 2
    assert ei.value.column == "E"


def test_load_csv_month_out_of_range_cites_row(write_csv):
    rows = [_row(2018, m) for m in range(1, 7)] + [_row(2018, 13)]
    path = write_csv(csv_text(rows))
    with pytest.raises(IntegrityError) as ei:
        load_csv(path)
    assert 7 in ei.value.rows
    assert "row 7" in str(ei.value)


def test_load_csv_negative_flux_is_rejected(write_csv):
    path = write_csv(csv_text([_row(2018, 1), _row(2018, 2, P=-1.0)]))
    with pytest.raises(IntegrityError) as ei:
        load_csv(path)
    assert ei.value.rows == (2,)


def test_load_csv_duplicate_month_cites_both_rows(write_csv):
    path = write_csv(csv_text([_row(2018, 1), _row(2018, 2), _row(2018, 1)]))
    with pytest.raises(IntegrityError) as ei:
        load_csv(path)
    assert ei.value.rows == (1, 3)


def test_load_csv_schema_mapping_and_comments(write_csv):
    header = "yr,mo,P,R,G,E,Ur,Ug,H,Hcon"
    text = "# measured record\n" + csv_text([(2018, 1, 1, 2, 1296, 3, 20, 1, 1271, 1270.5)], header=header)
    ds = load_csv(write_csv(text), {"year": "yr", "month": "mo"})
    assert ds.years[0] == 2018
    assert ds.has_hcon
    assert ds.column("Hcon")[0] == 1270.5


def test_load_csv_accepts_byte_order_mark(tmp_path):
    path = tmp_path / "bom.csv"
    path.write_text("\ufeff" + csv_text([_row(2018, 1), _row(2018, 2)]), encoding="utf-8")
    ds = load_csv(str(path))
    assert len(ds) == 2
    assert ds.years[0] == 2018


def test_save_then_load_keeps_six_significant_digits(tmp_path):
    ds = synthesize_dataset(PUBLISHED_STATS, 2, 3)
    path = save_csv(ds, str(tmp_path / "out.csv"), comment="test")
    back = load_csv(path)
    assert len(back) == len(ds)
    assert_allclose(back.matrix(VARIABLES), ds.matrix(VARIABLES), rtol=5e-6, atol=1e-12)


def test_format_value():
    assert format_value(0.0) == "0"
    assert format_value(1272.0) == "1272"
    assert format_value(686.78) == "686.78"
    assert format_value(1.0 / 3.0) == "0.333333"
    assert format_value(1.234e-4) == "1.234e-04"


# ----------------------------
# statistics
# ----------------------------
def test_compute_stats_uses_sample_std():
    recs = [toy_record(2018, m, P=float(v)) for m, v in zip(range(1, 5), (1, 2, 3, 4))]
    st = compute_stats(TimeSeriesDataset(tuple(recs)))
    assert st["P"].min == 1.0 and st["P"].max == 4.0
    assert st["P"].mean == pytest.approx(2.5)
    assert st["P"].std == pytest.approx(np.sqrt(5.0 / 3.0))


def test_compute_stats_single_record_has_zero_std():
    st = compute_stats(TimeSeriesDataset((toy_record(2018, 1),)))
    for name in VARIABLES:
        assert st[name].std == 0.0
        assert st[name].min == st[name].mean == st[name].max


def test_compute_stats_empty_dataset():
    with pytest.raises(EmptyDatasetError):
        compute_stats(TimeSeriesDataset(()))


def test_compute_stats_orders_and_bounds(synthetic_ds):
    st = compute_stats(synthetic_ds)
    for name in VARIABLES:
        s = st[name]
        assert s.min <= s.mean <= s.max
        assert s.std >= 0.0


def test_feature_stats_unknown_variable():
    with pytest.raises(UnknownVariableError):
        PUBLISHED_STATS["Q"]


# ----------------------------
# scaling
# ----------------------------
def test_scaler_from_published_stats():
    sc = Scaler.from_stats(PUBLISHED_STATS, VARIABLES)
    assert sc.transform_value("H", 1274.6) == 1.0
    assert sc.transform_value("H", 1270.0) == 0.0
    assert sc.transform_value("R", 59.72) == pytest.approx((59.72 - 0.10) / (686.78 - 0.10), abs=1e-12)


def test_scaler_does_not_clip_out_of_range():
    sc = Scaler.from_stats(PUBLISHED_STATS, VARIABLES)
    assert sc.transform_value("H", 1275.6) > 1.0
    assert sc.transform_value("G", 1290.0) < 0.0


def test_fit_scaler_maps_extremes_exactly(synthetic_ds):
    sc = fit_scaler(synthetic_ds)
    z = apply_scaler(sc, synthetic_ds)
    assert z.shape == (len(synthetic_ds), len(VARIABLES))
    assert_array_equal(z.min(axis=0), np.zeros(len(VARIABLES)))
    assert_array_equal(z.max(axis=0), np.ones(len(VARIABLES)))

    back = inverse_scaler(sc, z)
    assert_allclose(back, synthetic_ds.matrix(VARIABLES), rtol=0, atol=1e-9)


def test_scaler_errors():
    recs = tuple(toy_record(2018, m, Ug=5.0) for m in range(1, 13))
    with pytest.raises(DegenerateRangeError) as ei:
        fit_scaler(TimeSeriesDataset(recs))
    assert ei.value.variable == "Ug"

    sc = Scaler.from_stats(PUBLISHED_STATS, ("P", "R"))
    with pytest.raises(UnknownVariableError):
        sc.transform_value("H", 1271.0)

    flat = FeatureStats({"P": VariableStats(3.0, 3.0, 3.0, 0.0)})
    with pytest.raises(DegenerateRangeError):
        Scaler.from_stats(flat, ("P",))


def test_standardized_pairs_and_chronological_split(synthetic_ds):
    sc = fit_scaler(synthetic_ds)
    pairs = standardized_pairs(synthetic_ds, sc, ("P", "R", "G", "E", "Ur", "Ug"), "H")
    assert pairs.X.shape == (228, 6)
    assert pairs.y.shape == (228,)

    train, val = pairs.split_chronological(0.2)
    assert len(train) + len(val) == 228
    assert len(val) == 46
    assert_array_equal(val.y, pairs.y[-46:])


# ----------------------------
# synthesis
# ----------------------------
def test_synthesize_is_deterministic():
    a = synthesize_dataset(PUBLISHED_STATS, 19, 42)
    b = synthesize_dataset(PUBLISHED_STATS, 19, 42)
    c = synthesize_dataset(PUBLISHED_STATS, 19, 43)
    assert_array_equal(a.matrix(VARIABLES), b.matrix(VARIABLES))
    assert not np.array_equal(a.matrix(VARIABLES), c.matrix(VARIABLES))


def test_synthesize_respects_envelope(synthetic_ds):
    assert len(synthetic_ds) == 228
    assert synthetic_ds.provenance == "synthetic"
    assert not synthetic_ds.has_hcon
    assert synthetic_ds.years[0] == 2001 and synthetic_ds.years[-1] == 2019
    for name in VARIABLES:
        col = synthetic_ds.column(name)
        assert col.min() >= PUBLISHED_STATS[name].min
        assert col.max() <= PUBLISHED_STATS[name].max


@pytest.mark.parametrize("seed", range(1, 21))
def test_synthesized_level_is_driven_by_groundwater_and_runoff(seed):
    ds = synthesize_dataset(PUBLISHED_STATS, 19, seed)
    h = ds.column("H")
    r = {v: abs(np.corrcoef(h, ds.column(v))[0, 1]) for v in SYNTH_INPUTS}
    top2 = sorted(r, key=r.get, reverse=True)[:2]
    assert set(top2) == {"G", "R"}


def test_seasonal_level_peaks_in_may_and_bottoms_in_november():
    months = np.arange(1, 13)
    cycle = {v: seasonal_cycle(v, months) for v in SYNTH_INPUTS}
    h = planted_level(cycle, np.zeros(12), noise_scale=0.0)
    assert int(months[np.argmax(h)]) == 5
    assert int(months[np.argmin(h)]) == 11
    assert int(months[np.argmax(cycle["G"])]) == 5

    with pytest.raises(UnknownVariableError):
        seasonal_cycle("H", months)


def test_level_noise_leaves_inputs_untouched():
    noisy = synthesize_dataset(PUBLISHED_STATS, 3, 11)
    clean = synthesize_dataset(PUBLISHED_STATS, 3, 11, noise=0.0)
    assert_array_equal(noisy.matrix(SYNTH_INPUTS), clean.matrix(SYNTH_INPUTS))
    assert not np.array_equal(noisy.column("H"), clean.column("H"))

    with pytest.raises(ParameterError):
        synthesize_dataset(PUBLISHED_STATS, 3, 11, noise=-0.01)
    with pytest.raises(ParameterError):
        synthesize_dataset(PUBLISHED_STATS, 3, 11, noise=float("nan"))


def test_synthesize_needs_two_years():
    with pytest.raises(SizeError):
        synthesize_dataset(PUBLISHED_STATS, 1, 42)


# ----------------------------
# monthly patterns
# ----------------------------
def test_constraint_pattern_reads_reference_year(synthetic_ds):
    pattern = monthly_constraint_pattern(synthetic_ds, 2018)
    ref = synthetic_ds.column("H")[synthetic_ds.years == 2018]
    assert_array_equal(pattern, ref)


def test_constraint_pattern_incomplete_year():
    recs = tuple(toy_record(2018, m) for m in range(1, 13) if m != 3)
    with pytest.raises(CoverageError) as ei:
        monthly_constraint_pattern(TimeSeriesDataset(recs), 2018)
    assert ei.value.missing == (3,)
    assert "March" in str(ei.value)


def test_constraint_pattern_warns_outside_envelope(caplog):
    ds = toy_dataset()
    with caplog.at_level(logging.WARNING, logger="core.dataset"):
        monthly_constraint_pattern(ds, 2018)
    assert any("outside" in r.getMessage() for r in caplog.records)


def test_attach_constraint_pattern_fills_missing_cells():
    ds = toy_dataset()
    filled = attach_constraint_pattern(ds, 2018)
    hcon = filled.column("Hcon")
    assert np.all(np.isfinite(hcon))
    assert_array_equal(hcon[:12], hcon[12:])
    assert_array_equal(hcon[12:], ds.column("H")[12:])


def test_monthly_climatology_averages_each_month():
    ds = toy_dataset()
    clim = monthly_climatology(ds, "H")
    expected = np.array([1270.0 + m / 6.0 + 0.05 for m in range(1, 13)])
    assert_allclose(clim, expected, rtol=0, atol=1e-9)
