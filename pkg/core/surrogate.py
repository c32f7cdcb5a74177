# core/surrogate.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.special import expit

from core.dataset import MIN_TRAINING_RECORDS, TrainingPairs
from core.errors import (
    DivergenceError,
    FormatError,
    IntegrityError,
    ParameterError,
    ShapeError,
    SizeError,
    UndefinedR2Error,
    UnknownVariableError,
)
from core.schemas import ModelDocument, TrainConfig
from tools.json_utils import read_json_object, write_json
from tools.progress import ProgressCB

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN: Tuple[int, ...] = (30, 20, 10)
MODEL_SCHEMA_VERSION = 1


# ----------------------------
# Model
# ----------------------------
def _frozen(a: Any) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MlpModel:
    """
    Fully connected net: log-sigmoid hidden layers, linear output.
    weights[k] has shape (fan_in, fan_out), so a layer is h @ W + b.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    input_names: Tuple[str, ...]
    output_name: str
    hidden_activation: Literal["logsig"] = "logsig"
    output_activation: Literal["linear"] = "linear"

    def __post_init__(self) -> None:
        if self.hidden_activation != "logsig" or self.output_activation != "linear":
            raise FormatError(
                f"Unsupported activations hidden={self.hidden_activation!r}, output={self.output_activation!r}; "
                "only logsig hidden layers with a linear output are evaluated."
            )
        W = tuple(_frozen(w) for w in self.weights)
        b = tuple(_frozen(v) for v in self.biases)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "input_names", tuple(self.input_names))

        if len(W) < 2 or len(W) != len(b):
            raise IntegrityError(f"Need >= 2 layers with one bias each; got {len(W)} weights, {len(b)} biases.")
        for k, (w, v) in enumerate(zip(W, b)):
            if w.ndim != 2 or v.shape != (w.shape[1],):
                raise IntegrityError(f"Layer {k}: weight {w.shape} and bias {v.shape} do not match.")
            if k > 0 and W[k - 1].shape[1] != w.shape[0]:
                raise IntegrityError(f"Layer {k}: fan-in {w.shape[0]} != previous fan-out {W[k - 1].shape[1]}.")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
                raise IntegrityError(f"Layer {k} holds non-finite parameters.")
        if W[-1].shape[1] != 1:
            raise IntegrityError(f"Output layer must have 1 unit, got {W[-1].shape[1]}.")
        if len(self.input_names) != W[0].shape[0]:
            raise IntegrityError(
                f"{len(self.input_names)} input names for an input layer of {W[0].shape[0]} units."
            )

    @property
    def layer_sizes(self) -> List[int]:
        return [int(self.weights[0].shape[0])] + [int(w.shape[1]) for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return int(self.weights[0].shape[0])

    def index_of(self, name: str) -> int:
        try:
            return self.input_names.index(name)
        except ValueError:
            raise UnknownVariableError(name, self.input_names) from None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_1d(forward(self, X))


def init_model(
    input_names: Sequence[str],
    output_name: str,
    hidden_sizes: Sequence[int] = DEFAULT_HIDDEN,
    seed: int = 0,
    *,
    weight_init_scale: float = 4.0,
) -> MlpModel:
    """Weights ~ U(-a, a) with a = weight_init_scale / sqrt(fan_in); zero biases."""
    if not input_names:
        raise ShapeError("input_names must not be empty.")
    if not hidden_sizes or any(int(h) < 1 for h in hidden_sizes):
        raise ShapeError(f"hidden_sizes must be a non-empty list of positive sizes, got {list(hidden_sizes)}.")

    sizes = [len(input_names)] + [int(h) for h in hidden_sizes] + [1]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = weight_init_scale / np.sqrt(fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases), tuple(input_names), output_name)


# ----------------------------
# Evaluation
# ----------------------------
def _as_batch(m: MlpModel, x: Union[np.ndarray, Sequence[float]]) -> Tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=float)
    single = a.ndim == 1
    X = a[None, :] if single else a
    if X.ndim != 2 or X.shape[1] != m.n_inputs:
        raise ShapeError(f"Expected {m.n_inputs} inputs per row, got array of shape {a.shape}.")
    return X, single


def _layer_outputs(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], X: np.ndarray) -> List[np.ndarray]:
    acts = [X]
    h = X
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        h = z if k == last else expit(z)
        acts.append(h)
    return acts


def forward(m: MlpModel, x: Union[np.ndarray, Sequence[float]]) -> Union[float, np.ndarray]:
    """Prediction for one standardized input vector (float) or a batch of rows (array)."""
    X, single = _as_batch(m, x)
    y = _layer_outputs(m.weights, m.biases, X)[-1][:, 0]
    return float(y[0]) if single else y


def input_gradient(m: MlpModel, x: Union[np.ndarray, Sequence[float]]) -> np.ndarray:
    """Exact dy/dx by reverse mode; shape (n,) for a vector, (rows, n) for a batch."""
    X, single = _as_batch(m, x)
    acts = _layer_outputs(m.weights, m.biases, X)
    delta = np.ones((X.shape[0], 1))
    g = delta
    for k in range(len(m.weights) - 1, -1, -1):
        g = delta @ m.weights[k].T
        if k == 0:
            break
        a = acts[k]
        delta = g * a * (1.0 - a)
    return g[0] if single else g


def output_bound(m: MlpModel) -> float:
    """|y| <= |b_out| + sum |w_out| since hidden activations lie in (0, 1)."""
    return float(np.abs(m.biases[-1]).sum() + np.abs(m.weights[-1]).sum())


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=float).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"R2 needs equal lengths, got {y_true.shape} and {y_pred.shape}.")
    if y_true.size < 2:
        raise UndefinedR2Error(f"R2 needs at least 2 pairs, got {y_true.size}.")
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0.0:
        raise UndefinedR2Error("R2 is undefined for constant targets.")
    sse = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - sse / sst


def evaluate_r2(m: MlpModel, pairs: TrainingPairs) -> float:
    return r2_score(pairs.y, forward(m, pairs.X))


# ----------------------------
# Training
# ----------------------------
@dataclass(frozen=True)
class TrainReport:
    train_mse: float
    val_mse: float
    r2: Optional[float]
    initial_val_mse: float
    epochs_run: int
    best_epoch: int
    n_train: int
    n_val: int
    loss_curve: Tuple[float, ...] = field(default_factory=tuple)
    val_curve: Tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "r2": self.r2,
            "initial_val_mse": self.initial_val_mse,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "loss_curve": list(self.loss_curve),
            "val_curve": list(self.val_curve),
        }


def _mse(weights, biases, X: np.ndarray, y: np.ndarray) -> float:
    pred = _layer_outputs(weights, biases, X)[-1][:, 0]
    return float(np.mean((pred - y) ** 2))


def train(
    m: MlpModel,
    pairs: TrainingPairs,
    cfg: TrainConfig = TrainConfig(),
    *,
    progress_cb: Optional[ProgressCB] = None,
) -> Tuple[MlpModel, TrainReport]:
    """
    Mini-batch SGD with classical momentum on MSE. The last
    validation_fraction of the (chronological) rows is held out and the
    parameters with the best validation MSE are returned.
    Single-threaded; identical (model, pairs, cfg) give identical results.
    """

    def emit(p: int, msg: str):
        if progress_cb:
            progress_cb(p, msg)

    if len(pairs) < MIN_TRAINING_RECORDS:
        raise SizeError(f"Training needs at least {MIN_TRAINING_RECORDS} samples, got {len(pairs)}.")
    if pairs.X.shape[1] != m.n_inputs:
        raise ShapeError(f"Model expects {m.n_inputs} inputs, pairs carry {pairs.X.shape[1]}.")
    if tuple(pairs.input_names) != m.input_names:
        raise ShapeError(f"Input order {list(pairs.input_names)} != model inputs {list(m.input_names)}.")

    tr, va = pairs.split_chronological(cfg.validation_fraction)
    Xt, yt = tr.X, tr.y
    Xv, yv = va.X, va.y

    W = [w.copy() for w in m.weights]
    b = [v.copy() for v in m.biases]
    vW = [np.zeros_like(w) for w in W]
    vb = [np.zeros_like(v) for v in b]
    lr, mu = cfg.learning_rate, cfg.momentum
    rng = np.random.default_rng(cfg.seed)

    initial_val = _mse(W, b, Xv, yv)
    best_val = initial_val
    best_W, best_b = [w.copy() for w in W], [v.copy() for v in b]
    best_epoch = 0
    stale = 0
    loss_curve: List[float] = []
    val_curve: List[float] = []
    epoch = 0

    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, cfg.epochs + 1):
            perm = rng.permutation(len(yt))
            for start in range(0, len(yt), cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                acts = _layer_outputs(W, b, Xt[idx])
                delta = 2.0 * (acts[-1] - yt[idx, None]) / len(idx)

                for k in range(len(W) - 1, -1, -1):
                    gW = acts[k].T @ delta
                    gb = delta.sum(axis=0)
                    if k > 0:
                        a = acts[k]
                        delta = (delta @ W[k].T) * a * (1.0 - a)
                    vW[k] = mu * vW[k] - lr * gW
                    vb[k] = mu * vb[k] - lr * gb
                    W[k] += vW[k]
                    b[k] += vb[k]

                if not all(np.all(np.isfinite(w)) for w in W):
                    raise DivergenceError(epoch, lr)

            train_mse = _mse(W, b, Xt, yt)
            val_mse = _mse(W, b, Xv, yv)
            if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
                raise DivergenceError(epoch, lr)
            loss_curve.append(train_mse)
            val_curve.append(val_mse)

            if val_mse < best_val:
                best_val, best_epoch, stale = val_mse, epoch, 0
                best_W, best_b = [w.copy() for w in W], [v.copy() for v in b]
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    logger.debug("Early stop at epoch %d (best %d)", epoch, best_epoch)
                    break

            if progress_cb and epoch % max(1, cfg.epochs // 20) == 0:
                emit(int(100 * epoch / cfg.epochs), f"epoch {epoch}: train {train_mse:.3g}, val {val_mse:.3g}")

    model = MlpModel(tuple(best_W), tuple(best_b), m.input_names, m.output_name)
    try:
        r2: Optional[float] = evaluate_r2(model, va)
    except UndefinedR2Error:
        logger.warning("Validation targets are constant; R2 is undefined.")
        r2 = None

    report = TrainReport(
        train_mse=_mse(model.weights, model.biases, Xt, yt),
        val_mse=best_val,
        r2=r2,
        initial_val_mse=initial_val,
        epochs_run=epoch,
        best_epoch=best_epoch,
        n_train=len(yt),
        n_val=len(yv),
        loss_curve=tuple(loss_curve),
        val_curve=tuple(val_curve),
    )
    logger.info(
        "Trained %s model: %d epochs (best %d), val MSE %.4g, R2 %s",
        m.output_name, report.epochs_run, best_epoch, best_val, "n/a" if r2 is None else f"{r2:.4f}",
    )
    emit(100, "training done")
    return model, report


# ----------------------------
# Model files
# ----------------------------
def model_to_dict(m: MlpModel) -> Dict[str, Any]:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "input_names": list(m.input_names),
        "output_name": m.output_name,
        "layer_sizes": m.layer_sizes,
        "activations": {"hidden": m.hidden_activation, "output": m.output_activation},
        "weights": [w.tolist() for w in m.weights],
        "biases": [v.tolist() for v in m.biases],
    }


def save_model(m: MlpModel, path: str, *, extra: Optional[Mapping[str, Any]] = None) -> str:
    doc = model_to_dict(m)
    if extra:
        for k, v in extra.items():
            doc.setdefault(k, v)
    return write_json(path, doc)


def load_model(path: str) -> MlpModel:
    obj = read_json_object(path)
    try:
        doc = ModelDocument.model_validate(obj)
    except ValidationError as e:
        raise FormatError(f"Not a model file ({path}): {e.error_count()} schema error(s).") from e

    sizes = list(doc.layer_sizes)
    if len(doc.weights) != len(sizes) - 1 or len(doc.biases) != len(sizes) - 1:
        raise IntegrityError(f"{path}: layer_sizes {sizes} do not match {len(doc.weights)} weight matrices.")
    if len(doc.input_names) != sizes[0]:
        raise IntegrityError(f"{path}: {len(doc.input_names)} input names for input layer of {sizes[0]}.")

    weights, biases = [], []
    for k, (w, v) in enumerate(zip(doc.weights, doc.biases)):
        try:
            W = np.array(w, dtype=float)
            bvec = np.array(v, dtype=float)
        except ValueError as e:
            raise IntegrityError(f"{path}: layer {k} is ragged.") from e
        if W.shape != (sizes[k], sizes[k + 1]) or bvec.shape != (sizes[k + 1],):
            raise IntegrityError(
                f"{path}: layer {k} has weight {W.shape} / bias {bvec.shape}, "
                f"expected ({sizes[k]}, {sizes[k + 1]}) / ({sizes[k + 1]},)."
            )
        weights.append(W)
        biases.append(bvec)

    return MlpModel(
        tuple(weights),
        tuple(biases),
        tuple(doc.input_names),
        doc.output_name,
        doc.activations.hidden,
        doc.activations.output,
    )


# ----------------------------
# Response surfaces
# ----------------------------
def response_surface_grid(
    m: MlpModel,
    var_i: str,
    var_j: str,
    fixed_value: float = 0.5,
    resolution: int = 21,
) -> np.ndarray:
    """
    Z[a, b] = forward(x) with x[var_i] = u[a], x[var_j] = u[b], u = linspace(0, 1),
    every other input held at fixed_value.
    """
    i, j = m.index_of(var_i), m.index_of(var_j)
    if i == j:
        raise ParameterError(f"Surface axes must differ, got '{var_i}' twice.")
    if resolution < 2:
        raise ParameterError(f"resolution must be >= 2, got {resolution}.")

    u = np.linspace(0.0, 1.0, resolution)
    ui, uj = np.meshgrid(u, u, indexing="ij")
    X = np.full((resolution * resolution, m.n_inputs), float(fixed_value))
    X[:, i] = ui.reshape(-1)
    X[:, j] = uj.reshape(-1)
    return forward(m, X).reshape(resolution, resolution)
