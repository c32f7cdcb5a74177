# core/schemas.py
from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, confloat, conint

# variable symbols, in file column order
VariableName = Literal["P", "R", "G", "E", "Ur", "Ug", "H"]
OptimizerTag = Literal["ga", "pattern_search", "nlp"]
BoundPolicy = Literal["climate", "all_free", "all_fixed"]


class MonthlyRecord(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    year: int
    month: conint(ge=1, le=12)

    P: confloat(ge=0)  # mm
    R: confloat(ge=0)  # m3/s, monthly mean flow
    G: float  # m a.m.s.l
    E: confloat(ge=0)  # mm
    Ur: confloat(ge=0)  # mm
    Ug: confloat(ge=0)  # mm
    H: float  # m a.m.s.l

    # optional constraint level; derived from the reference year when absent
    Hcon: Optional[float] = None


# ----------------------------
# Training / solver configs
# ----------------------------
class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: conint(ge=1) = 3000
    learning_rate: confloat(gt=0) = 0.05
    batch_size: conint(ge=1) = 32
    seed: int = 0
    validation_fraction: confloat(gt=0, lt=0.5) = 0.2
    weight_init_scale: confloat(gt=0) = 4.0
    early_stop_patience: conint(ge=1) = 200
    momentum: confloat(ge=0, lt=1) = 0.9


class GaConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # checked by the solver itself (parameter error below 4)
    population_size: int = 50
    generations: conint(ge=1) = 100
    bits_per_variable: conint(ge=1, le=52) = 16
    crossover_rate: confloat(ge=0, le=1) = 0.9
    mutation_rate: confloat(ge=0, le=1) = 0.01
    elite_fraction: confloat(ge=0, le=1) = 0.05
    replacement_fraction: confloat(ge=0, le=1) = 0.8
    seed: int = 0


class PsConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    initial_mesh: confloat(gt=0) = 0.25
    expansion: confloat(ge=1) = 2.0
    contraction: confloat(gt=0, lt=1) = 0.5
    min_mesh: confloat(gt=0) = 1e-6
    max_iterations: conint(ge=1) = 1000


class NlpConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iterations: conint(ge=1) = 500
    initial_step: confloat(gt=0) = 1.0
    backtracking: confloat(gt=0, lt=1) = 0.5
    gradient_tolerance: confloat(gt=0) = 1e-6
    restarts: conint(ge=1) = 4
    min_step: confloat(gt=0) = 1e-12
    seed: int = 0


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 42
    hidden_sizes: Tuple[conint(ge=1), ...] = Field(default=(30, 20, 10), min_length=1)
    model_i: TrainConfig = Field(default_factory=TrainConfig)
    model_ii: TrainConfig = Field(default_factory=TrainConfig)

    # stage 1
    sobol_s0: conint(ge=2) = 1000
    sobol_growth: confloat(gt=1) = 2.0
    sobol_tol: confloat(gt=0) = 0.02
    sobol_max_s: conint(ge=2) = 16000
    morris_levels: conint(ge=2) = 4
    morris_trajectories: conint(ge=1) = 100

    # stage 2
    optimizers: List[OptimizerTag] = Field(default_factory=lambda: ["ga", "pattern_search", "nlp"], min_length=1)
    ga: GaConfig = Field(default_factory=GaConfig)
    pattern: PsConfig = Field(default_factory=PsConfig)
    nlp: NlpConfig = Field(default_factory=NlpConfig)
    reference_year: int = 2018
    bound_policy: BoundPolicy = "climate"
    agreement_tolerance: confloat(gt=0) = 0.05

    threads: conint(ge=1) = 1


class CliConfig(BaseModel):
    """
    JSON config file for lakeopt_cli.py. Flags override these values;
    the merged result is echoed into every output file.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    input: Optional[str] = None
    out: str = "runs/latest"
    seed: Optional[int] = None
    threads: Optional[conint(ge=1)] = None
    years: conint(ge=2) = 19
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)

    # per-subcommand flag defaults, e.g. {"surface": {"resolution": 41}}
    overrides: Dict[str, Dict[str, Any]] = Field(default_factory=dict)


# ----------------------------
# Model file document
# ----------------------------
class ModelActivations(BaseModel):
    hidden: Literal["logsig"] = "logsig"
    output: Literal["linear"] = "linear"


class ModelDocument(BaseModel):
    # extra keys (generated_by, scaling) are carried but ignored
    model_config = ConfigDict(extra="allow")

    schema_version: Literal[1]
    input_names: List[str] = Field(min_length=1)
    output_name: str
    layer_sizes: List[conint(ge=1)] = Field(min_length=3)
    activations: ModelActivations
    weights: List[List[List[float]]]
    biases: List[List[float]]
