# core/cli.py
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Any, Callable, Dict, Mapping, Optional, Sequence

from pydantic import ValidationError

from core.dataset import (
    PUBLISHED_STATS,
    Scaler,
    TimeSeriesDataset,
    compute_stats,
    fit_scaler,
    load_csv,
    save_csv,
    standardized_pairs,
    synthesize_dataset,
    write_csv_table,
)
from core.errors import ConfigError, LakeOptError, exit_code_for
from core.optimizers import OPTIMIZERS
from core.pipeline import (
    MODEL_I_INPUTS,
    MODEL_I_OUTPUT,
    MODEL_II_INPUTS,
    agreement_report,
    fit_to_csv,
    pipeline_to_json,
    plan_to_csv,
    rearrange,
    run_pipeline,
    run_stage2,
    seasonal_multipliers,
    train_surrogate,
)
from core.schemas import CliConfig, PipelineConfig
from core.sensitivity import (
    classify_factors,
    elementary_effects,
    morris_to_dict,
    morris_trajectories,
    rank_factors,
    ranking_to_dict,
    sobol_converge,
    sobol_to_dict,
)
from core.surrogate import load_model, response_surface_grid, save_model
from tools.json_utils import dumps, read_json_object, write_json
from tools.settings import EnvDefaults

logger = logging.getLogger("lakeopt")


# ----------------------------
# Config resolution
# ----------------------------
class Context:
    """Effective configuration for one command: defaults < env < --config < flags."""

    def __init__(self, command: str, args: argparse.Namespace, env: EnvDefaults):
        self.command = command
        self.args = args
        file_doc: Dict[str, Any] = read_json_object(args.config) if args.config else {}
        try:
            file_cfg = CliConfig.model_validate(file_doc)
        except ValidationError as e:
            raise ConfigError(f"Invalid config {args.config}: {e}") from e

        pipeline_doc = file_doc.get("pipeline") or {}
        seed = _first(args.seed, file_cfg.seed, pipeline_doc.get("seed"), env.seed)
        threads = _first(args.threads, file_cfg.threads, pipeline_doc.get("threads"), env.threads)
        try:
            self.pipeline: PipelineConfig = PipelineConfig.model_validate(
                {**file_cfg.pipeline.model_dump(), "seed": seed, "threads": threads}
            )
        except ValidationError as e:
            raise ConfigError(f"Invalid pipeline settings: {e}") from e

        self.config = file_cfg.model_copy(
            update={
                "input": _first(getattr(args, "input", None), file_cfg.input),
                "out": _first(args.out, file_cfg.out),
                "seed": seed,
                "threads": threads,
                "years": _first(getattr(args, "years", None), file_cfg.years),
                "pipeline": self.pipeline,
            }
        )
        self._overrides = dict(file_cfg.overrides.get(command, {}))
        self.options: Dict[str, Any] = {}

    @property
    def seed(self) -> int:
        return int(self.config.seed)

    @property
    def out(self) -> str:
        return self.config.out

    def option(self, name: str, default: Any = None) -> Any:
        """Command flag, else config `overrides[command][name]`, else default."""
        v = getattr(self.args, name, None)
        if v is None:
            v = self._overrides.get(name, default)
        self.options[name] = v
        return v

    def require_input(self) -> str:
        if not self.config.input:
            raise ConfigError(f"'{self.command}' needs --input.")
        return self.config.input

    def generated_by(self) -> Dict[str, Any]:
        # worker count and output location never change results, so they are not echoed
        cfg = self.config.model_dump(mode="json", exclude={"threads", "out"})
        cfg["pipeline"].pop("threads", None)
        return {"tool": "lakeopt", "command": self.command, "seed": self.seed, "options": dict(self.options), "config": cfg}

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def comment(self) -> str:
        return "generated_by: " + dumps(self.generated_by(), indent=None).strip()


def _first(*values: Any) -> Any:
    for v in values:
        if v is not None:
            return v
    return None


# ----------------------------
# Commands
# ----------------------------
def _load_input(ctx: Context) -> TimeSeriesDataset:
    return load_csv(ctx.require_input())


def cmd_stats(ctx: Context) -> int:
    ds = _load_input(ctx)
    st = compute_stats(ds)
    rows = [[name, s.min, s.max, s.mean, s.std] for name, s in st.variables.items()]
    csv_path = write_csv_table(ctx.path("stats.csv"), ("variable", "min", "max", "mean", "std"), rows, comment=ctx.comment())
    write_json(ctx.path("stats.json"), {"generated_by": ctx.generated_by(), "n_records": len(ds), "variables": st.to_dict()})

    with open(csv_path, "r", encoding="utf-8") as f:
        sys.stdout.write("".join(line for line in f if not line.startswith("#")))
    return 0


def cmd_synth(ctx: Context) -> int:
    ds = synthesize_dataset(PUBLISHED_STATS, ctx.config.years, ctx.seed)
    path = save_csv(ds, ctx.path("synthetic.csv"), comment=ctx.comment())
    logger.info("Wrote %d synthetic records to %s", len(ds), path)
    return 0


def _training_pairs(ds: TimeSeriesDataset, scaler: Scaler, target: str):
    if target == MODEL_I_OUTPUT:
        return standardized_pairs(ds, scaler, MODEL_I_INPUTS, MODEL_I_OUTPUT)
    return rearrange(ds, scaler)


def cmd_train(ctx: Context) -> int:
    ds = _load_input(ctx)
    target = ctx.option("target", "H")
    if target not in ("H", "R"):
        raise ConfigError(f"--target must be H (Model I) or R (Model II), got {target!r}.")

    base = ctx.pipeline.model_i if target == "H" else ctx.pipeline.model_ii
    update: Dict[str, Any] = {"seed": ctx.seed}
    lr = ctx.option("learning_rate")
    epochs = ctx.option("epochs")
    if lr is not None:
        update["learning_rate"] = lr
    if epochs is not None:
        update["epochs"] = epochs
    try:
        train_cfg = base.model_validate({**base.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(f"Invalid training settings: {e}") from e

    scaler = fit_scaler(ds)
    model, report = train_surrogate(_training_pairs(ds, scaler, target), ctx.pipeline.hidden_sizes, train_cfg)

    name = "model_i" if target == "H" else "model_ii"
    save_model(model, ctx.path(f"{name}.json"), extra={"generated_by": ctx.generated_by(), "scaling": scaler.to_dict()})
    write_json(ctx.path(f"{name}_report.json"), {"generated_by": ctx.generated_by(), **report.to_dict()})
    fit_to_csv(model, ds, scaler, train_cfg.validation_fraction, ctx.path(f"fit_{name}.csv"), comment=ctx.comment())
    logger.info("Model saved to %s (R2 = %s)", ctx.path(f"{name}.json"), report.r2)
    return 0


def _model_scaler(model_path: str, ds: Optional[TimeSeriesDataset]) -> Scaler:
    doc = read_json_object(model_path)
    scaling = doc.get("scaling")
    if isinstance(scaling, Mapping) and scaling:
        try:
            return Scaler({k: (float(v["min"]), float(v["max"])) for k, v in scaling.items()})
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed 'scaling' block in {model_path}.") from e
    if ds is None:
        raise ConfigError(f"{model_path} carries no scaling; pass --input to refit it.")
    return fit_scaler(ds)


def cmd_sensitivity(ctx: Context) -> int:
    model_path = ctx.option("model")
    if not model_path:
        raise ConfigError("'sensitivity' needs --model.")
    method = ctx.option("method", "both")
    if method not in ("sobol", "morris", "both"):
        raise ConfigError(f"--method must be sobol, morris or both, got {method!r}.")

    model = load_model(model_path)
    names = model.input_names
    cfg = ctx.pipeline
    gb = ctx.generated_by()

    sobol = morris = None
    if method in ("sobol", "both"):
        sobol = sobol_converge(
            model, len(names), cfg.sobol_s0, cfg.sobol_growth, cfg.sobol_tol, cfg.sobol_max_s,
            seed=ctx.seed, names=names, threads=cfg.threads,
        )
        write_json(ctx.path("sensitivity_sobol.json"), {"generated_by": gb, **sobol_to_dict(sobol)})
    if method in ("morris", "both"):
        design = morris_trajectories(len(names), cfg.morris_levels, cfg.morris_trajectories, ctx.seed, names)
        morris = elementary_effects(
            model, design, allow_single_trajectory=cfg.morris_trajectories == 1, threads=cfg.threads
        )
        write_json(
            ctx.path("sensitivity_morris.json"),
            {"generated_by": gb, **morris_to_dict(morris, classify_factors(morris))},
        )
    if sobol is not None and morris is not None:
        write_json(ctx.path("ranking.json"), {"generated_by": gb, **ranking_to_dict(rank_factors(sobol, morris))})
    return 0


def cmd_optimize(ctx: Context) -> int:
    model_path = ctx.option("model")
    if not model_path:
        raise ConfigError("'optimize' needs --model.")
    ds = _load_input(ctx)
    model = load_model(model_path)
    if model.input_names != MODEL_II_INPUTS:
        raise ConfigError(f"'optimize' needs a Model II file with inputs {list(MODEL_II_INPUTS)}, got {list(model.input_names)}.")

    method = ctx.option("method", "all")
    methods = list(OPTIMIZERS) if method == "all" else [method]
    try:
        cfg = PipelineConfig.model_validate({**ctx.pipeline.model_dump(), "optimizers": methods})
    except ValidationError as e:
        raise ConfigError(f"Unknown optimizer {method!r}; choose from {list(OPTIMIZERS)} or 'all'.") from e

    plan = run_stage2(model, ds, _model_scaler(model_path, ds), cfg)
    doc: Dict[str, Any] = {"generated_by": ctx.generated_by(), **plan.to_dict()}
    doc["seasonal"] = seasonal_multipliers(plan).to_dict()
    if cfg.bound_policy != "all_fixed" and len(methods) >= 2:
        doc["agreement"] = agreement_report(plan, cfg.agreement_tolerance).to_dict()
    write_json(ctx.path("plan.json"), doc)
    plan_to_csv(plan, ctx.path("plan.csv"), comment=ctx.comment())
    return 0


def cmd_pipeline(ctx: Context) -> int:
    if ctx.config.input:
        ds = load_csv(ctx.config.input)
    else:
        logger.info("No --input given; synthesizing %d years with seed %d.", ctx.config.years, ctx.seed)
        ds = synthesize_dataset(PUBLISHED_STATS, ctx.config.years, ctx.seed)

    result = run_pipeline(ds, ctx.pipeline, progress_cb=lambda p, msg: logger.info("[%3d%%] %s", p, msg))
    gb = ctx.generated_by()
    scaling = result.stage1.scaler.to_dict()
    write_json(ctx.path("plan.json"), pipeline_to_json(result, gb))
    plan_to_csv(result.plan, ctx.path("plan.csv"), comment=ctx.comment())
    s1 = result.stage1
    fit_to_csv(s1.model, ds, s1.scaler, ctx.pipeline.model_i.validation_fraction, ctx.path("fit_model_i.csv"), comment=ctx.comment())
    fit_to_csv(result.model_ii, ds, s1.scaler, ctx.pipeline.model_ii.validation_fraction, ctx.path("fit_model_ii.csv"), comment=ctx.comment())
    save_model(result.stage1.model, ctx.path("model_i.json"), extra={"generated_by": gb, "scaling": scaling})
    save_model(result.model_ii, ctx.path("model_ii.json"), extra={"generated_by": gb, "scaling": scaling})
    return 0


def cmd_surface(ctx: Context) -> int:
    model_path = ctx.option("model")
    var_i, var_j = ctx.option("var_i"), ctx.option("var_j")
    if not (model_path and var_i and var_j):
        raise ConfigError("'surface' needs --model, --var-i and --var-j.")
    resolution = int(ctx.option("resolution", 21))
    fixed = float(ctx.option("fixed", 0.5))

    model = load_model(model_path)
    Z = response_surface_grid(model, var_i, var_j, fixed, resolution)
    u = [a / (resolution - 1) for a in range(resolution)]
    rows = ([u[a], u[b], float(Z[a, b])] for a in range(resolution) for b in range(resolution))
    write_csv_table(ctx.path(f"surface_{var_i}_{var_j}.csv"), (var_i, var_j, model.output_name), rows, comment=ctx.comment())
    return 0


HANDLERS: Dict[str, Callable[[Context], int]] = {
    "stats": cmd_stats,
    "synth": cmd_synth,
    "train": cmd_train,
    "sensitivity": cmd_sensitivity,
    "optimize": cmd_optimize,
    "pipeline": cmd_pipeline,
    "surface": cmd_surface,
}


# ----------------------------
# Parser / entry point
# ----------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lakeopt", description="Lake-level surrogate, sensitivity and monthly runoff optimization.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", default=None, help="monthly CSV (year,month,P,R,G,E,Ur,Ug,H[,Hcon])")
    common.add_argument("--out", default=None, help="output directory (default runs/latest)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stats", parents=[common], help="per-variable min/max/mean/std")

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic dataset")
    p.add_argument("--years", type=int, default=None)

    p = sub.add_parser("train", parents=[common], help="train Model I (--target H) or Model II (--target R)")
    p.add_argument("--target", default=None, choices=["H", "R"])
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("sensitivity", parents=[common], help="Sobol / Morris on a saved model")
    p.add_argument("--model", default=None)
    p.add_argument("--method", default=None, choices=["sobol", "morris", "both"])

    p = sub.add_parser("optimize", parents=[common], help="monthly runoff maximization with a saved Model II")
    p.add_argument("--model", default=None)
    p.add_argument("--method", default=None, choices=list(OPTIMIZERS) + ["all"])

    p = sub.add_parser("pipeline", parents=[common], help="two-stage workflow end to end")
    p.add_argument("--years", type=int, default=None, help="synthetic years when --input is absent")

    p = sub.add_parser("surface", parents=[common], help="response-surface grid of a saved model")
    p.add_argument("--model", default=None)
    p.add_argument("--var-i", dest="var_i", default=None)
    p.add_argument("--var-j", dest="var_j", default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--fixed", type=float, default=None)
    return parser


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, (level or "INFO").upper(), logging.INFO),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    env = EnvDefaults.from_env()
    _configure_logging(args.log_level or env.log_level)

    try:
        ctx = Context(args.command, args, env)
        os.makedirs(ctx.out, exist_ok=True)
        return HANDLERS[args.command](ctx)
    except LakeOptError as e:
        logger.error("%s", e)
        return exit_code_for(e)
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return ConfigError.exit_code
