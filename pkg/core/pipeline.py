from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.dataset import (
    MIN_TRAINING_RECORDS,
    VARIABLES,
    Scaler,
    TimeSeriesDataset,
    TrainingPairs,
    fit_scaler,
    inverse_scaler,
    monthly_climatology,
    monthly_constraint_pattern,
    monthly_envelope,
    standardized_pairs,
    write_csv_table,
)
from core.errors import ConfigError, CoverageError, SeasonDivisionError, SizeError
from core.optimizers import BoxedProblem, OptResult, solve
from core.schemas import PipelineConfig
from core.sensitivity import (
    FactorClassification,
    FactorRanking,
    MorrisResult,
    SobolResult,
    classify_factors,
    derive_seed,
    elementary_effects,
    morris_to_dict,
    morris_trajectories,
    rank_factors,
    ranking_to_dict,
    sobol_converge,
    sobol_to_dict,
)
from core.surrogate import MlpModel, TrainReport, forward, init_model, input_gradient, train
from tools.parallel import ordered_map
from tools.progress import PIPELINE_WEIGHTS, ProgressCB, ProgressTracker

logger = logging.getLogger(__name__)

MODEL_I_INPUTS: Tuple[str, ...] = ("P", "R", "G", "E", "Ur", "Ug")
MODEL_I_OUTPUT = "H"
MODEL_II_INPUTS: Tuple[str, ...] = ("H", "P", "G", "E", "Ur", "Ug")
MODEL_II_OUTPUT = "R"

FILLING_MONTHS: Tuple[int, ...] = (11, 12, 1, 2, 3, 4, 5, 6)
DRAINING_MONTHS: Tuple[int, ...] = (7, 8, 9, 10)

STAGE1_STEPS = ("train_model_i", "sobol", "morris")

# seed streams derived from PipelineConfig.seed
_STREAM_MODEL_I = 1
_STREAM_MODEL_II = 2
_STREAM_SOBOL = 3
_STREAM_MORRIS = 4
_STREAM_GA = 5
_STREAM_NLP = 6


def _seeded_train_config(cfg: PipelineConfig, which: str):
    base = cfg.model_i if which == "i" else cfg.model_ii
    stream = _STREAM_MODEL_I if which == "i" else _STREAM_MODEL_II
    return base.model_copy(update={"seed": derive_seed(cfg.seed, stream, base.seed)})


def _require_size(ds: TimeSeriesDataset) -> None:
    if len(ds) < MIN_TRAINING_RECORDS:
        raise SizeError(f"Pipeline needs at least {MIN_TRAINING_RECORDS} monthly records, got {len(ds)}.")


# ----------------------------
# Stage 1: Model I + sensitivity
# ----------------------------
@dataclass(frozen=True, eq=False)
class Stage1Result:
    scaler: Scaler
    model: MlpModel
    report: TrainReport
    sobol: SobolResult
    morris: MorrisResult
    classification: FactorClassification
    ranking: FactorRanking


def train_surrogate(
    pairs: TrainingPairs,
    hidden_sizes: Sequence[int],
    train_cfg,
    *,
    progress_cb: Optional[ProgressCB] = None,
) -> Tuple[MlpModel, TrainReport]:
    m0 = init_model(
        pairs.input_names,
        pairs.output_name,
        hidden_sizes,
        seed=train_cfg.seed,
        weight_init_scale=train_cfg.weight_init_scale,
    )
    return train(m0, pairs, train_cfg, progress_cb=progress_cb)


def run_stage1(
    ds: TimeSeriesDataset,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    scaler: Optional[Scaler] = None,
    progress_cb: Optional[ProgressCB] = None,
    tracker: Optional[ProgressTracker] = None,
) -> Stage1Result:
    """
    Fits the scaler, trains Model I (P, R, G, E, Ur, Ug -> H) and runs Sobol
    and Morris on its forward pass over [0, 1]^6.
    """
    if tracker is None:
        tracker = ProgressTracker(progress_cb, {s: PIPELINE_WEIGHTS[s] for s in STAGE1_STEPS})
    _require_size(ds)
    scaler = scaler or fit_scaler(ds, VARIABLES)

    tracker.start("train_model_i", "Training Model I…")
    pairs = standardized_pairs(ds, scaler, MODEL_I_INPUTS, MODEL_I_OUTPUT)
    model, report = train_surrogate(
        pairs,
        cfg.hidden_sizes,
        _seeded_train_config(cfg, "i"),
        progress_cb=lambda p, msg: tracker.update("train_model_i", p / 100.0, msg),
    )
    tracker.done("train_model_i", "Model I trained")

    tracker.start("sobol", "Sobol indices…")
    sobol = sobol_converge(
        model,
        len(MODEL_I_INPUTS),
        cfg.sobol_s0,
        cfg.sobol_growth,
        cfg.sobol_tol,
        cfg.sobol_max_s,
        seed=derive_seed(cfg.seed, _STREAM_SOBOL),
        names=MODEL_I_INPUTS,
        threads=cfg.threads,
        progress_cb=lambda p, msg: tracker.update("sobol", p / 100.0, msg),
    )
    tracker.done("sobol", f"Sobol done at s={sobol.sample_size}")

    tracker.start("morris", "Morris screening…")
    design = morris_trajectories(
        len(MODEL_I_INPUTS),
        cfg.morris_levels,
        cfg.morris_trajectories,
        seed=derive_seed(cfg.seed, _STREAM_MORRIS),
        names=MODEL_I_INPUTS,
    )
    morris = elementary_effects(
        model, design, allow_single_trajectory=cfg.morris_trajectories == 1, threads=cfg.threads
    )
    classification = classify_factors(morris)
    ranking = rank_factors(sobol, morris)
    tracker.done("morris", "Morris done")

    logger.info("Stage 1 ranking by S_T: %s (Kendall tau vs mu* = %.3f)", ", ".join(ranking.order), ranking.kendall_tau)
    return Stage1Result(scaler, model, report, sobol, morris, classification, ranking)


# ----------------------------
# Stage 2: Model II + monthly optimization
# ----------------------------
def rearrange(ds: TimeSeriesDataset, scaler: Optional[Scaler] = None) -> TrainingPairs:
    """Model II pairs: (H, P, G, E, Ur, Ug) -> R, standardized with the stage-1 scaler."""
    scaler = scaler or fit_scaler(ds, VARIABLES)
    return standardized_pairs(ds, scaler, MODEL_II_INPUTS, MODEL_II_OUTPUT)


def train_model_ii(
    ds: TimeSeriesDataset,
    scaler: Scaler,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    progress_cb: Optional[ProgressCB] = None,
) -> Tuple[MlpModel, TrainReport]:
    return train_surrogate(rearrange(ds, scaler), cfg.hidden_sizes, _seeded_train_config(cfg, "ii"), progress_cb=progress_cb)


@dataclass(frozen=True)
class OptimizerOutcome:
    method: str
    r_star: float  # m3/s
    r_star_std: float
    x_star: Dict[str, float]
    converged: bool
    evaluations: int
    iterations: int
    seed: Optional[int] = None


@dataclass(frozen=True)
class MonthlyPlanEntry:
    month: int
    hcon: float  # m a.m.s.l
    hcon_std: float
    r_star: float  # m3/s, from the primary optimizer
    r_star_std: float
    r_hist_mean: float
    multiplier: Optional[float]
    extrapolated: bool = False
    converged: bool = True
    by_optimizer: Tuple[OptimizerOutcome, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "month": self.month,
            "Hcon": self.hcon,
            "Hcon_std": self.hcon_std,
            "R_star": self.r_star,
            "R_star_std": self.r_star_std,
            "R_hist_mean": self.r_hist_mean,
            "multiplier": self.multiplier,
            "extrapolation_flag": self.extrapolated,
            "converged": self.converged,
            "optimizer_details": [
                {
                    "method": o.method,
                    "seed": o.seed,
                    "R_star": o.r_star,
                    "R_star_std": o.r_star_std,
                    "x_star": o.x_star,
                    "converged": o.converged,
                    "evaluations": o.evaluations,
                    "iterations": o.iterations,
                }
                for o in self.by_optimizer
            ],
        }


@dataclass(frozen=True)
class MonthlyPlan:
    entries: Tuple[MonthlyPlanEntry, ...]
    optimizers: Tuple[str, ...]
    bound_policy: str

    def entry(self, month: int) -> MonthlyPlanEntry:
        for e in self.entries:
            if e.month == month:
                return e
        raise CoverageError(f"Plan has no entry for month {month}.", missing=[month])

    @property
    def months(self) -> Tuple[int, ...]:
        return tuple(e.month for e in self.entries)

    @classmethod
    def from_series(
        cls,
        r_star: Sequence[float],
        r_hist_mean: Sequence[float],
        *,
        hcon: Optional[Sequence[float]] = None,
        by_optimizer: Optional[Mapping[str, Sequence[float]]] = None,
    ) -> "MonthlyPlan":
        """Plan from 12 monthly values (raw units); by_optimizer adds per-method R*."""
        if len(r_star) != 12 or len(r_hist_mean) != 12:
            raise SizeError("A monthly plan needs exactly 12 values per series.")
        hcon = list(hcon) if hcon is not None else [float("nan")] * 12
        methods = tuple(by_optimizer) if by_optimizer else ("given",)
        entries = []
        for i in range(12):
            outcomes = tuple(
                OptimizerOutcome(k, float(v[i]), float("nan"), {}, True, 0, 0) for k, v in (by_optimizer or {}).items()
            )
            rs, rh = float(r_star[i]), float(r_hist_mean[i])
            entries.append(
                MonthlyPlanEntry(i + 1, float(hcon[i]), float("nan"), rs, float("nan"), rh,
                                 rs / rh if rh > 0 else None, by_optimizer=outcomes)
            )
        return cls(tuple(entries), methods, "given")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "optimizers": list(self.optimizers),
            "bound_policy": self.bound_policy,
            "monthly": [e.to_dict() for e in self.entries],
        }


def constraint_levels(ds: TimeSeriesDataset, reference_year: int) -> np.ndarray:
    """Hcon per month: the reference year's Hcon cell when present, its H otherwise."""
    pattern = monthly_constraint_pattern(ds, reference_year)
    for r in ds.records:
        if r.year == reference_year and r.Hcon is not None:
            pattern[r.month - 1] = float(r.Hcon)
    return pattern


@dataclass(frozen=True, eq=False)
class _MonthContext:
    month: int
    hcon: float
    lower: np.ndarray
    upper: np.ndarray
    fixed: Dict[int, float]
    climatology: np.ndarray


def _month_contexts(ds: TimeSeriesDataset, scaler: Scaler, cfg: PipelineConfig) -> List[_MonthContext]:
    hcon = constraint_levels(ds, cfg.reference_year)
    clim: Dict[str, np.ndarray] = {}
    env: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
    for name in MODEL_II_INPUTS[1:]:
        clim[name] = scaler.transform(monthly_climatology(ds, name)[:, None], [name])[:, 0]
        lo, hi = monthly_envelope(ds, name)
        env[name] = (
            scaler.transform(lo[:, None], [name])[:, 0],
            scaler.transform(hi[:, None], [name])[:, 0],
        )

    if cfg.bound_policy == "climate":
        free = ("P", "G", "E")
    elif cfg.bound_policy == "all_free":
        free = ("P", "G", "E", "Ur", "Ug")
    else:
        free = ()

    out = []
    for m in range(1, 13):
        h = scaler.transform_value("H", hcon[m - 1])
        lower, upper = np.empty(len(MODEL_II_INPUTS)), np.empty(len(MODEL_II_INPUTS))
        fixed: Dict[int, float] = {0: h}
        lower[0] = upper[0] = h
        point = np.empty(len(MODEL_II_INPUTS))
        point[0] = h
        for k, name in enumerate(MODEL_II_INPUTS[1:], start=1):
            point[k] = clim[name][m - 1]
            if name in free:
                lower[k], upper[k] = env[name][0][m - 1], env[name][1][m - 1]
            else:
                lower[k] = upper[k] = fixed[k] = float(clim[name][m - 1])
        out.append(_MonthContext(m, float(hcon[m - 1]), lower, upper, fixed, point))
    return out


def _solver_config(cfg: PipelineConfig, method: str, month: int):
    if method == "ga":
        return cfg.ga.model_copy(update={"seed": derive_seed(cfg.seed, _STREAM_GA, month, cfg.ga.seed)})
    if method == "nlp":
        return cfg.nlp.model_copy(update={"seed": derive_seed(cfg.seed, _STREAM_NLP, month, cfg.nlp.seed)})
    return cfg.pattern


def _solve_month(model: MlpModel, scaler: Scaler, ctx: _MonthContext, cfg: PipelineConfig, r_hist: float) -> MonthlyPlanEntry:
    outcomes: List[OptimizerOutcome] = []
    if cfg.bound_policy == "all_fixed":
        y = float(forward(model, ctx.climatology))
        outcomes.append(
            OptimizerOutcome("climatology", scaler.inverse_value("R", y), y,
                             dict(zip(MODEL_II_INPUTS, map(float, ctx.climatology))), True, 1, 0)
        )
    else:
        problem = BoxedProblem(
            objective=lambda x: forward(model, x),
            lower=ctx.lower,
            upper=ctx.upper,
            fixed=ctx.fixed,
            gradient=lambda x: input_gradient(model, x),
            batch_objective=model,
            names=MODEL_II_INPUTS,
        )
        for method in cfg.optimizers:
            res: OptResult = solve(method, problem, _solver_config(cfg, method, ctx.month))
            outcomes.append(
                OptimizerOutcome(
                    method,
                    scaler.inverse_value("R", res.f_star),
                    res.f_star,
                    res.to_dict(MODEL_II_INPUTS)["x_star"],
                    res.converged,
                    res.evaluations,
                    res.iterations,
                    res.seed,
                )
            )
            if not res.converged:
                logger.warning("Month %d: %s did not converge.", ctx.month, method)

    primary = outcomes[0]
    extrapolated = not 0.0 <= primary.r_star_std <= 1.0
    if extrapolated:
        logger.warning("Month %d: R* (standardized %.3f) lies outside the training range.", ctx.month, primary.r_star_std)

    return MonthlyPlanEntry(
        month=ctx.month,
        hcon=ctx.hcon,
        hcon_std=ctx.fixed[0],
        r_star=primary.r_star,
        r_star_std=primary.r_star_std,
        r_hist_mean=r_hist,
        multiplier=primary.r_star / r_hist if r_hist > 0 else None,
        extrapolated=extrapolated,
        converged=all(o.converged for o in outcomes),
        by_optimizer=tuple(outcomes),
    )


def run_stage2(
    model_ii: MlpModel,
    ds: TimeSeriesDataset,
    scaler: Scaler,
    cfg: PipelineConfig = PipelineConfig(),
) -> MonthlyPlan:
    """
    One bounded maximization of Model II per calendar month, with H pinned to
    the standardized constraint level. Months run on up to cfg.threads workers
    and are collected in month order.
    """
    contexts = _month_contexts(ds, scaler, cfg)
    r_hist = monthly_climatology(ds, MODEL_II_OUTPUT)

    entries = ordered_map(
        lambda ctx: _solve_month(model_ii, scaler, ctx, cfg, float(r_hist[ctx.month - 1])),
        contexts,
        threads=cfg.threads,
    )
    methods = ("climatology",) if cfg.bound_policy == "all_fixed" else tuple(cfg.optimizers)
    return MonthlyPlan(tuple(entries), methods, cfg.bound_policy)


# ----------------------------
# Summaries
# ----------------------------
@dataclass(frozen=True)
class SeasonalSummary:
    filling_months: Tuple[int, ...]
    draining_months: Tuple[int, ...]
    filling_multiplier: float
    draining_multiplier: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "filling": {"months": list(self.filling_months), "multiplier": self.filling_multiplier},
            "draining": {"months": list(self.draining_months), "multiplier": self.draining_multiplier},
        }


def seasonal_multipliers(plan: MonthlyPlan) -> SeasonalSummary:
    """Ratio of seasonal means: mean R* over the season / mean historical R over the season."""
    missing = [m for m in range(1, 13) if m not in plan.months]
    if missing:
        raise CoverageError(f"Plan is missing months {missing}.", missing=missing)

    def ratio(months: Tuple[int, ...], label: str) -> float:
        star = float(np.mean([plan.entry(m).r_star for m in months]))
        hist = float(np.mean([plan.entry(m).r_hist_mean for m in months]))
        if hist == 0.0:
            raise SeasonDivisionError(f"Historical mean runoff over the {label} season ({months}) is zero.")
        return star / hist

    return SeasonalSummary(
        FILLING_MONTHS,
        DRAINING_MONTHS,
        ratio(FILLING_MONTHS, "filling"),
        ratio(DRAINING_MONTHS, "draining"),
    )


@dataclass(frozen=True)
class AgreementReport:
    optimizers: Tuple[str, ...]
    tolerance: float
    per_month: Tuple[Tuple[int, float], ...]
    overall_max: float
    overall_mean: float
    flagged_months: Tuple[int, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "optimizers": list(self.optimizers),
            "tolerance": self.tolerance,
            "per_month": [{"month": m, "max_relative_difference": d} for m, d in self.per_month],
            "overall_max": self.overall_max,
            "overall_mean": self.overall_mean,
            "flagged_months": list(self.flagged_months),
        }


def _relative_difference(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def agreement_report(plan: MonthlyPlan, tolerance: float = 0.05) -> AgreementReport:
    """Max pairwise relative difference of per-optimizer R* in each month."""
    per_month: List[Tuple[int, float]] = []
    methods: Tuple[str, ...] = ()
    for e in plan.entries:
        values = [o.r_star for o in e.by_optimizer]
        if len(values) < 2:
            raise ConfigError(f"Month {e.month} has {len(values)} optimizer result(s); agreement needs >= 2.")
        methods = tuple(o.method for o in e.by_optimizer)
        per_month.append((e.month, max(_relative_difference(a, b) for a, b in combinations(values, 2))))

    diffs = [d for _, d in per_month]
    return AgreementReport(
        optimizers=methods,
        tolerance=tolerance,
        per_month=tuple(per_month),
        overall_max=max(diffs),
        overall_mean=float(np.mean(diffs)),
        flagged_months=tuple(m for m, d in per_month if d > tolerance),
    )


def compare_optimizers(
    model_ii: MlpModel,
    ds: TimeSeriesDataset,
    scaler: Scaler,
    cfg: PipelineConfig = PipelineConfig(),
) -> Tuple[MonthlyPlan, AgreementReport]:
    if len(set(cfg.optimizers)) < 2:
        raise ConfigError(f"Comparing optimizers needs >= 2 distinct methods, got {cfg.optimizers}.")
    if cfg.bound_policy == "all_fixed":
        raise ConfigError("bound_policy 'all_fixed' runs no optimizer; nothing to compare.")
    plan = run_stage2(model_ii, ds, scaler, cfg)
    return plan, agreement_report(plan, cfg.agreement_tolerance)


# ----------------------------
# End to end
# ----------------------------
@dataclass(frozen=True, eq=False)
class PipelineResult:
    stage1: Stage1Result
    model_ii: MlpModel
    report_ii: TrainReport
    plan: MonthlyPlan
    seasonal: SeasonalSummary
    agreement: Optional[AgreementReport]


def run_pipeline(
    ds: TimeSeriesDataset,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    progress_cb: Optional[ProgressCB] = None,
) -> PipelineResult:
    def emit(p: int, msg: str) -> None:
        if progress_cb:
            progress_cb(int(max(0, min(100, p))), msg)

    tracker = ProgressTracker(emit)
    _require_size(ds)

    stage1 = run_stage1(ds, cfg, tracker=tracker)

    tracker.start("train_model_ii", "Training Model II…")
    model_ii, report_ii = train_model_ii(
        ds, stage1.scaler, cfg,
        progress_cb=lambda p, msg: tracker.update("train_model_ii", p / 100.0, msg),
    )
    tracker.done("train_model_ii", "Model II trained")

    tracker.start("optimize", "Monthly optimization…")
    plan = run_stage2(model_ii, ds, stage1.scaler, cfg)
    seasonal = seasonal_multipliers(plan)
    agreement = None
    if cfg.bound_policy != "all_fixed" and len(set(cfg.optimizers)) >= 2:
        agreement = agreement_report(plan, cfg.agreement_tolerance)
        if agreement.flagged_months:
            logger.warning(
                "Optimizers disagree by more than %.0f%% in months %s.",
                100 * cfg.agreement_tolerance, list(agreement.flagged_months),
            )
    tracker.done("optimize", "Done")

    logger.info(
        "Seasonal multipliers: filling %.3f, draining %.3f",
        seasonal.filling_multiplier, seasonal.draining_multiplier,
    )
    return PipelineResult(stage1, model_ii, report_ii, plan, seasonal, agreement)


def _report_summary(r: TrainReport) -> Dict[str, Any]:
    d = r.to_dict()
    d.pop("loss_curve")
    d.pop("val_curve")
    return d


def pipeline_to_json(result: PipelineResult, generated_by: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    s1 = result.stage1
    doc: Dict[str, Any] = {}
    if generated_by is not None:
        doc["generated_by"] = dict(generated_by)
    doc.update(
        {
            "scaling": s1.scaler.to_dict(),
            "model_i": _report_summary(s1.report),
            "model_ii": _report_summary(result.report_ii),
            "ranking": ranking_to_dict(s1.ranking),
            "sobol": sobol_to_dict(s1.sobol),
            "morris": morris_to_dict(s1.morris, s1.classification),
            **result.plan.to_dict(),
            "seasonal": result.seasonal.to_dict(),
            "agreement": result.agreement.to_dict() if result.agreement else None,
        }
    )
    return doc


PLAN_CSV_COLUMNS = ("month", "Hcon", "R_star", "R_hist_mean", "multiplier")


def plan_to_csv(plan: MonthlyPlan, path: str, *, comment: Optional[str] = None) -> str:
    rows = ([e.month, e.hcon, e.r_star, e.r_hist_mean, e.multiplier] for e in plan.entries)
    return write_csv_table(path, PLAN_CSV_COLUMNS, rows, comment=comment)


FIT_CSV_COLUMNS = ("year", "month", "split", "observed", "predicted")


def fit_rows(model: MlpModel, ds: TimeSeriesDataset, scaler: Scaler, validation_fraction: float) -> List[list]:
    """
    Observed vs predicted output for every record, in physical units, tagged
    with the chronological train/validation split used during training.
    """
    pairs = standardized_pairs(ds, scaler, model.input_names, model.output_name)
    n_train = len(pairs.split_chronological(validation_fraction)[0])
    pred_std = np.atleast_1d(forward(model, pairs.X))
    predicted = inverse_scaler(scaler, pred_std[:, None], [model.output_name])[:, 0]
    observed = ds.column(model.output_name)
    return [
        [int(ds.years[i]), int(ds.months[i]), "train" if i < n_train else "validation", float(observed[i]), float(predicted[i])]
        for i in range(len(ds))
    ]


def fit_to_csv(
    model: MlpModel,
    ds: TimeSeriesDataset,
    scaler: Scaler,
    validation_fraction: float,
    path: str,
    *,
    comment: Optional[str] = None,
) -> str:
    return write_csv_table(path, FIT_CSV_COLUMNS, fit_rows(model, ds, scaler, validation_fraction), comment=comment)
