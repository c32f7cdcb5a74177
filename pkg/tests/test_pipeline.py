import os

import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.dataset import (
    PUBLISHED_STATS,
    TimeSeriesDataset,
    compute_stats,
    fit_scaler,
    load_csv,
    monthly_climatology,
    monthly_envelope,
)
from core.errors import ConfigError, CoverageError, SeasonDivisionError, SizeError
from core.pipeline import (
    DRAINING_MONTHS,
    FILLING_MONTHS,
    MODEL_II_INPUTS,
    MonthlyPlan,
    agreement_report,
    compare_optimizers,
    constraint_levels,
    fit_to_csv,
    pipeline_to_json,
    plan_to_csv,
    rearrange,
    run_pipeline,
    run_stage1,
    run_stage2,
    seasonal_multipliers,
    train_surrogate,
)
from core.schemas import GaConfig, NlpConfig, PipelineConfig, PsConfig, TrainConfig
from core.surrogate import r2_score
from tests.conftest import constant_model, single_neuron_model, toy_dataset
from tools.json_utils import dumps

SMALL_SOLVERS = dict(
    ga=GaConfig(population_size=10, generations=5),
    pattern=PsConfig(max_iterations=200),
    nlp=NlpConfig(max_iterations=100, restarts=2),
)

FAST = PipelineConfig(
    hidden_sizes=(12, 8),
    model_i=TrainConfig(epochs=150, early_stop_patience=50),
    model_ii=TrainConfig(epochs=150, early_stop_patience=50),
    sobol_s0=200,
    sobol_max_s=400,
    sobol_tol=0.05,
    morris_trajectories=10,
    **SMALL_SOLVERS,
)


@pytest.fixture(scope="module")
def scaler(synthetic_ds):
    return fit_scaler(synthetic_ds)


# ----------------------------
# data plumbing
# ----------------------------
def test_rearrange_builds_model_ii_pairs(synthetic_ds, scaler):
    pairs = rearrange(synthetic_ds, scaler)
    assert pairs.input_names == MODEL_II_INPUTS
    assert pairs.output_name == "R"
    assert len(pairs) == len(synthetic_ds)
    assert_array_equal(pairs.X[:, 0], scaler.transform(synthetic_ds.column("H")[:, None], ["H"])[:, 0])
    assert_array_equal(pairs.y, scaler.transform(synthetic_ds.column("R")[:, None], ["R"])[:, 0])


def test_constraint_levels_prefer_hcon_cells(synthetic_ds):
    assert_array_equal(constraint_levels(synthetic_ds, 2018), synthetic_ds.column("H")[synthetic_ds.years == 2018])

    recs = tuple(r.model_copy(update={"Hcon": 1270.5}) if r.year == 2018 else r for r in synthetic_ds.records)
    ds = TimeSeriesDataset(recs, "synthetic")
    assert_array_equal(constraint_levels(ds, 2018), 1270.5)


def test_stage1_needs_two_years():
    with pytest.raises(SizeError):
        run_stage1(toy_dataset(years=(2018,)), FAST)
    with pytest.raises(SizeError):
        run_pipeline(toy_dataset(years=(2018,)), FAST)


# ----------------------------
# stage 2 on constructed models
# ----------------------------
def test_constant_model_gives_constant_plan(synthetic_ds, scaler):
    plan = run_stage2(constant_model(0.5), synthetic_ds, scaler, PipelineConfig(**SMALL_SOLVERS))
    expected = scaler.inverse_value("R", 0.5)
    assert plan.months == tuple(range(1, 13))
    assert plan.optimizers == ("ga", "pattern_search", "nlp")
    for e in plan.entries:
        assert [o.method for o in e.by_optimizer] == ["ga", "pattern_search", "nlp"]
        for o in e.by_optimizer:
            assert o.r_star == expected
        assert not e.extrapolated


def test_level_is_pinned_to_constraint(synthetic_ds, scaler):
    cfg = PipelineConfig(**SMALL_SOLVERS)
    model = single_neuron_model({"P": 2.0, "G": 1.0, "H": -1.0})
    plan = run_stage2(model, synthetic_ds, scaler, cfg)
    hcon = constraint_levels(synthetic_ds, cfg.reference_year)
    for e in plan.entries:
        h_std = scaler.transform_value("H", hcon[e.month - 1])
        assert e.hcon == hcon[e.month - 1]
        assert e.hcon_std == h_std
        for o in e.by_optimizer:
            assert o.x_star["H"] == h_std


def test_monotone_model_pushes_precipitation_to_its_bound(synthetic_ds, scaler):
    cfg = PipelineConfig(optimizers=["pattern_search", "nlp"], **SMALL_SOLVERS)
    plan = run_stage2(single_neuron_model({"P": 5.0}), synthetic_ds, scaler, cfg)
    _, p_hi = monthly_envelope(synthetic_ds, "P")
    clim_ur = monthly_climatology(synthetic_ds, "Ur")
    for e in plan.entries:
        upper = scaler.transform_value("P", p_hi[e.month - 1])
        for o in e.by_optimizer:
            assert o.x_star["P"] == pytest.approx(upper, abs=1e-12)
            assert o.x_star["Ur"] == pytest.approx(scaler.transform_value("Ur", clim_ur[e.month - 1]), abs=1e-12)


def test_all_fixed_policy_evaluates_climatology(synthetic_ds, scaler):
    cfg = PipelineConfig(bound_policy="all_fixed")
    model = single_neuron_model({"P": 1.0, "E": -1.0})
    plan = run_stage2(model, synthetic_ds, scaler, cfg)
    assert plan.optimizers == ("climatology",)
    clim_p = monthly_climatology(synthetic_ds, "P")
    for e in plan.entries:
        (o,) = e.by_optimizer
        assert o.method == "climatology"
        assert o.x_star["P"] == pytest.approx(scaler.transform_value("P", clim_p[e.month - 1]), abs=1e-12)
        assert e.r_star == scaler.inverse_value("R", e.r_star_std)

    with pytest.raises(ConfigError):
        compare_optimizers(model, synthetic_ds, scaler, cfg)


def test_extrapolation_is_flagged(synthetic_ds, scaler):
    plan = run_stage2(constant_model(1.5), synthetic_ds, scaler, PipelineConfig(optimizers=["pattern_search"]))
    assert all(e.extrapolated for e in plan.entries)


def test_incomplete_reference_year(synthetic_ds, scaler):
    recs = tuple(r for r in synthetic_ds.records if (r.year, r.month) != (2018, 3))
    with pytest.raises(CoverageError):
        run_stage2(constant_model(0.5), TimeSeriesDataset(recs, "synthetic"), scaler, PipelineConfig(**SMALL_SOLVERS))


def test_stage2_same_bits_for_any_thread_count(synthetic_ds, scaler):
    model = single_neuron_model({"P": 2.0, "G": -1.0, "E": 0.5})
    a = run_stage2(model, synthetic_ds, scaler, PipelineConfig(threads=1, **SMALL_SOLVERS))
    b = run_stage2(model, synthetic_ds, scaler, PipelineConfig(threads=4, **SMALL_SOLVERS))
    assert dumps(a.to_dict()) == dumps(b.to_dict())


# ----------------------------
# summaries
# ----------------------------
HIST = [10.0, 12.0, 30.0, 80.0, 120.0, 90.0, 40.0, 20.0, 15.0, 11.0, 9.0, 8.5]


def test_seasonal_multipliers_identity():
    s = seasonal_multipliers(MonthlyPlan.from_series(HIST, HIST))
    assert s.filling_multiplier == 1.0
    assert s.draining_multiplier == 1.0
    assert s.filling_months == FILLING_MONTHS
    assert s.draining_months == DRAINING_MONTHS


def test_seasonal_multipliers_scale():
    s2 = seasonal_multipliers(MonthlyPlan.from_series([2.0 * v for v in HIST], HIST))
    assert s2.filling_multiplier == 2.0
    assert s2.draining_multiplier == 2.0

    s5 = seasonal_multipliers(MonthlyPlan.from_series([5.0 * v for v in HIST], HIST))
    assert s5.filling_multiplier == pytest.approx(5.0, rel=1e-12)
    assert s5.draining_multiplier == pytest.approx(5.0, rel=1e-12)


def test_seasonal_multipliers_are_unit_free():
    star = [v * (1.0 + 0.1 * i) for i, v in enumerate(HIST)]
    a = seasonal_multipliers(MonthlyPlan.from_series(star, HIST))
    b = seasonal_multipliers(MonthlyPlan.from_series([3.6 * v for v in star], [3.6 * v for v in HIST]))
    assert b.filling_multiplier == pytest.approx(a.filling_multiplier, rel=1e-12)
    assert b.draining_multiplier == pytest.approx(a.draining_multiplier, rel=1e-12)


def test_seasonal_multipliers_errors():
    hist = [0.0 if m in DRAINING_MONTHS else 5.0 for m in range(1, 13)]
    with pytest.raises(SeasonDivisionError):
        seasonal_multipliers(MonthlyPlan.from_series(HIST, hist))

    full = MonthlyPlan.from_series(HIST, HIST)
    partial = MonthlyPlan(full.entries[:11], full.optimizers, full.bound_policy)
    with pytest.raises(CoverageError):
        seasonal_multipliers(partial)


def test_agreement_report():
    same = MonthlyPlan.from_series(HIST, HIST, by_optimizer={"ga": HIST, "nlp": HIST})
    rep = agreement_report(same)
    assert rep.overall_max == 0.0
    assert rep.flagged_months == ()
    assert rep.optimizers == ("ga", "nlp")

    off = list(HIST)
    off[2] = 1.1 * HIST[2]
    rep = agreement_report(MonthlyPlan.from_series(HIST, HIST, by_optimizer={"ga": HIST, "nlp": off}), 0.05)
    assert rep.flagged_months == (3,)
    assert rep.overall_max == pytest.approx(0.1 / 1.1)

    with pytest.raises(ConfigError):
        agreement_report(MonthlyPlan.from_series(HIST, HIST))


def test_compare_optimizers_needs_two_methods(synthetic_ds, scaler):
    with pytest.raises(ConfigError):
        compare_optimizers(constant_model(0.5), synthetic_ds, scaler, PipelineConfig(optimizers=["ga"]))


def test_plan_to_csv(tmp_path):
    plan = MonthlyPlan.from_series([2.0 * v for v in HIST], HIST, hcon=[1270.5] * 12)
    path = plan_to_csv(plan, str(tmp_path / "plan.csv"), comment="unit test")
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "# unit test"
    assert lines[1] == "month,Hcon,R_star,R_hist_mean,multiplier"
    assert lines[2] == "1,1270.5,20,10,2"
    assert len(lines) == 14


def test_fit_csv_covers_every_record_and_reproduces_r2(synthetic_ds, scaler, tmp_path):
    cfg = TrainConfig(epochs=80, early_stop_patience=40, seed=3)
    model, report = train_surrogate(rearrange(synthetic_ds, scaler), (8,), cfg)
    path = fit_to_csv(model, synthetic_ds, scaler, cfg.validation_fraction, str(tmp_path / "fit.csv"), comment="unit test")

    df = pd.read_csv(path, comment="#")
    assert list(df.columns) == ["year", "month", "split", "observed", "predicted"]
    assert len(df) == len(synthetic_ds)
    assert (df["split"] == "validation").sum() == report.n_val
    assert list(df["split"].iloc[: report.n_train].unique()) == ["train"]
    assert_allclose(df["observed"].to_numpy(), synthetic_ds.column("R"), rtol=1e-5)

    val = df[df["split"] == "validation"]
    assert r2_score(val["observed"].to_numpy(), val["predicted"].to_numpy()) == pytest.approx(report.r2, abs=1e-3)


# ----------------------------
# end to end
# ----------------------------
def test_fast_pipeline_shape_and_progress(synthetic_ds):
    seen = []
    result = run_pipeline(synthetic_ds, FAST, progress_cb=lambda p, m: seen.append(p))
    assert seen[-1] == 100
    assert all(b >= a for a, b in zip(seen, seen[1:]))

    doc = pipeline_to_json(result, {"seed": FAST.seed})
    assert doc["generated_by"] == {"seed": 42}
    assert len(doc["monthly"]) == 12
    assert sorted(doc["ranking"]["order"]) == sorted(["P", "R", "G", "E", "Ur", "Ug"])
    assert "loss_curve" not in doc["model_i"]
    assert doc["agreement"] is not None
    assert set(doc["seasonal"]) == {"filling", "draining"}


@pytest.mark.slow
def test_synthetic_end_to_end(synthetic_ds):
    one = run_pipeline(synthetic_ds, PipelineConfig(threads=1))
    many = run_pipeline(synthetic_ds, PipelineConfig(threads=8))

    assert set(one.stage1.ranking.order[:2]) == {"G", "R"}
    assert one.agreement is not None
    assert one.agreement.overall_max < 0.05
    assert dumps(pipeline_to_json(one)) == dumps(pipeline_to_json(many))


MEASURED = os.getenv("LAKEOPT_MEASURED_CSV")


@pytest.mark.skipif(not MEASURED, reason="LAKEOPT_MEASURED_CSV not set")
def test_measured_statistics_match_published_table():
    ds = load_csv(MEASURED)
    st = compute_stats(ds)
    for name in PUBLISHED_STATS.names:
        if name not in st.names:
            continue
        ref, got = PUBLISHED_STATS[name], st[name]
        for attr in ("min", "max", "mean", "std"):
            expected = getattr(ref, attr)
            assert getattr(got, attr) == pytest.approx(expected, rel=0.02, abs=0.01), (name, attr)


@pytest.mark.slow
@pytest.mark.skipif(not MEASURED, reason="LAKEOPT_MEASURED_CSV not set")
def test_measured_pipeline_ranks_groundwater_and_runoff_first():
    result = run_pipeline(load_csv(MEASURED), PipelineConfig())
    rk = result.stage1.ranking
    assert set(rk.order[:2]) == {"G", "R"}
    assert set(rk.morris_order[:2]) == {"G", "R"}
    assert rk.order[2] == "E"
