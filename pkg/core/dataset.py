# core/dataset.py
from __future__ import annotations

import calendar
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from core.errors import (
    CoverageError,
    DataError,
    DegenerateRangeError,
    EmptyDatasetError,
    FormatError,
    IntegrityError,
    ParameterError,
    ParseError,
    SchemaError,
    SizeError,
    UnknownVariableError,
)
from core.schemas import MonthlyRecord

logger = logging.getLogger(__name__)

Provenance = Literal["measured", "synthetic"]

VARIABLES: Tuple[str, ...] = ("P", "R", "G", "E", "Ur", "Ug", "H")
CSV_COLUMNS: Tuple[str, ...] = ("year", "month") + VARIABLES
OPTIONAL_COLUMNS: Tuple[str, ...] = ("Hcon",)

MIN_TRAINING_RECORDS = 24  # two seasonal cycles

# published envelope of the measured constraint pattern
HCON_ENVELOPE = (1270.3, 1270.8)


# ----------------------------
# Dataset container
# ----------------------------
@dataclass(frozen=True)
class TimeSeriesDataset:
    records: Tuple[MonthlyRecord, ...]
    provenance: Provenance = "measured"

    def __post_init__(self) -> None:
        recs = tuple(self.records)
        object.__setattr__(self, "records", recs)
        for i in range(1, len(recs)):
            prev = (recs[i - 1].year, recs[i - 1].month)
            cur = (recs[i].year, recs[i].month)
            if cur == prev:
                raise IntegrityError(f"Duplicate record for {cur[0]}-{cur[1]:02d}.", rows=(i, i + 1))
            if cur < prev:
                raise IntegrityError(f"Records not sorted by (year, month) at position {i + 1}.", rows=(i + 1,))

    @classmethod
    def from_records(cls, records: Iterable[MonthlyRecord], provenance: Provenance = "measured") -> "TimeSeriesDataset":
        return cls(tuple(sorted(records, key=lambda r: (r.year, r.month))), provenance)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def years(self) -> np.ndarray:
        return np.array([r.year for r in self.records], dtype=int)

    @property
    def months(self) -> np.ndarray:
        return np.array([r.month for r in self.records], dtype=int)

    @property
    def has_hcon(self) -> bool:
        return any(r.Hcon is not None for r in self.records)

    def column(self, name: str) -> np.ndarray:
        if name not in VARIABLES and name not in OPTIONAL_COLUMNS:
            raise UnknownVariableError(name, VARIABLES + OPTIONAL_COLUMNS)
        vals = [getattr(r, name) for r in self.records]
        return np.array([np.nan if v is None else float(v) for v in vals], dtype=float)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        if not names:
            return np.zeros((len(self), 0), dtype=float)
        return np.column_stack([self.column(n) for n in names])


# ----------------------------
# CSV in / out
# ----------------------------
def _parse_int(cell: str, row: int, column: str) -> int:
    s = (cell or "").strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        f = float(s)
    except ValueError:
        raise ParseError(row, column, cell) from None
    if not f.is_integer():
        raise ParseError(row, column, cell)
    return int(f)


def _parse_float(cell: str, row: int, column: str, *, optional: bool = False) -> Optional[float]:
    s = (cell or "").strip()
    if not s:
        if optional:
            return None
        raise ParseError(row, column, cell)
    try:
        return float(s)
    except ValueError:
        raise ParseError(row, column, cell) from None


def load_csv(
    path: str,
    schema: Optional[Mapping[str, str]] = None,
    *,
    provenance: Provenance = "measured",
) -> TimeSeriesDataset:
    """
    Reads `year,month,P,R,G,E,Ur,Ug,H[,Hcon]` into a validated, sorted dataset.

    schema maps canonical names to the file's column names (identity by default).
    Row numbers in errors are 1-based data rows (the header is not counted).
    """
    mapping: Dict[str, str] = {c: c for c in CSV_COLUMNS + OPTIONAL_COLUMNS}
    if schema:
        mapping.update(schema)

    if not os.path.exists(path):
        raise DataError(f"Input file not found: {path}")

    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, comment="#", encoding="utf-8-sig")
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise FormatError(f"Cannot read CSV {path}: {e}") from e

    df.columns = [str(c).strip() for c in df.columns]
    for canon in CSV_COLUMNS:
        if mapping[canon] not in df.columns:
            raise SchemaError(canon, path=path)
    hcon_col = mapping["Hcon"] if mapping["Hcon"] in df.columns else None

    records: List[Tuple[int, MonthlyRecord]] = []
    failures: List[Tuple[int, str]] = []
    for row_no, raw in enumerate(df.to_dict("records"), start=1):
        values: Dict[str, Any] = {
            "year": _parse_int(raw[mapping["year"]], row_no, mapping["year"]),
            "month": _parse_int(raw[mapping["month"]], row_no, mapping["month"]),
        }
        for v in VARIABLES:
            values[v] = _parse_float(raw[mapping[v]], row_no, mapping[v])
        if hcon_col is not None:
            values["Hcon"] = _parse_float(raw[hcon_col], row_no, hcon_col, optional=True)

        try:
            records.append((row_no, MonthlyRecord(**values)))
        except ValidationError as e:
            fields = ", ".join(str(err["loc"][0]) for err in e.errors() if err.get("loc"))
            failures.append((row_no, fields))

    if failures:
        detail = "; ".join(f"row {r} ({f})" for r, f in failures[:20])
        raise IntegrityError(f"Rows failing record invariants in {path}: {detail}", rows=[r for r, _ in failures])

    seen: Dict[Tuple[int, int], int] = {}
    for row_no, rec in records:
        key = (rec.year, rec.month)
        if key in seen:
            raise IntegrityError(
                f"Duplicate (year, month) = {key} at rows {seen[key]} and {row_no} in {path}.",
                rows=(seen[key], row_no),
            )
        seen[key] = row_no

    ds = TimeSeriesDataset.from_records((rec for _, rec in records), provenance)
    logger.info("Loaded %d monthly records from %s", len(ds), path)
    return ds


def format_value(x: float) -> str:
    """6 significant digits; positional for |x| in [1e-3, 1e7]."""
    x = float(x)
    if x == 0.0:
        return "0"
    if 1e-3 <= abs(x) <= 1e7:
        return np.format_float_positional(x, precision=6, unique=False, fractional=False, trim="-")
    return np.format_float_scientific(x, precision=5, unique=False, trim="-")


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_value(v) if math.isfinite(float(v)) else ""
    return str(v)


def write_csv_table(
    path: str,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    *,
    comment: Optional[str] = None,
) -> str:
    """Canonical report writer: ints as-is, floats via format_value, None -> empty cell."""
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if comment:
            f.write(f"# {comment}\n")
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")
    return path


def save_csv(ds: TimeSeriesDataset, path: str, *, comment: Optional[str] = None) -> str:
    cols = list(CSV_COLUMNS) + (["Hcon"] if ds.has_hcon else [])
    rows = (
        [r.year, r.month] + [float(getattr(r, v)) for v in VARIABLES] + ([r.Hcon] if ds.has_hcon else [])
        for r in ds.records
    )
    return write_csv_table(path, cols, rows, comment=comment)


# ----------------------------
# Statistics
# ----------------------------
@dataclass(frozen=True)
class VariableStats:
    min: float
    max: float
    mean: float
    std: float


@dataclass(frozen=True)
class FeatureStats:
    variables: Dict[str, VariableStats]

    def __getitem__(self, name: str) -> VariableStats:
        try:
            return self.variables[name]
        except KeyError:
            raise UnknownVariableError(name, self.variables) from None

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.variables)

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {k: {"min": s.min, "max": s.max, "mean": s.mean, "std": s.std} for k, s in self.variables.items()}


# Published statistics of the 2001-2019 monthly record
PUBLISHED_STATS = FeatureStats(
    {
        "P": VariableStats(0.00, 173.00, 25.31, 29.86),
        "R": VariableStats(0.10, 686.78, 59.72, 98.92),
        "G": VariableStats(1295.5, 1298.8, 1297.2, 0.848),
        "E": VariableStats(0.36, 293.23, 95.27, 84.12),
        "Ur": VariableStats(18.86, 241.64, 103.71, 74.37),
        "Ug": VariableStats(0.00, 46.52, 17.93, 18.45),
        "H": VariableStats(1270.0, 1274.6, 1272.0, 1.34),
        "Hcon": VariableStats(1270.3, 1270.8, 1270.5, 0.205),
    }
)


def _describe(values: np.ndarray) -> VariableStats:
    lo = float(np.min(values))
    hi = float(np.max(values))
    mean = min(max(float(np.mean(values)), lo), hi)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return VariableStats(lo, hi, mean, std)


def compute_stats(ds: TimeSeriesDataset, variables: Optional[Sequence[str]] = None) -> FeatureStats:
    """Sample min/max/mean and sample std (n - 1) per variable."""
    if len(ds) == 0:
        raise EmptyDatasetError("Cannot compute statistics of an empty dataset.")

    names = list(variables) if variables else list(VARIABLES) + (["Hcon"] if ds.has_hcon else [])
    out: Dict[str, VariableStats] = {}
    for name in names:
        col = ds.column(name)
        col = col[np.isfinite(col)]
        if col.size == 0:
            continue
        out[name] = _describe(col)
    return FeatureStats(out)


# ----------------------------
# Min-max scaling to [0, 1]
# ----------------------------
ArrayLike = Union[np.ndarray, Sequence[float], float]


@dataclass(frozen=True)
class Scaler:
    bounds: Dict[str, Tuple[float, float]]

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(self.bounds)

    @classmethod
    def from_stats(cls, stats: FeatureStats, variables: Sequence[str]) -> "Scaler":
        b: Dict[str, Tuple[float, float]] = {}
        for v in variables:
            s = stats[v]
            if not s.max > s.min:
                raise DegenerateRangeError(v, s.min)
            b[v] = (float(s.min), float(s.max))
        return cls(b)

    def _range(self, name: str) -> Tuple[float, float]:
        try:
            return self.bounds[name]
        except KeyError:
            raise UnknownVariableError(name, self.bounds) from None

    def transform_value(self, name: str, x: float) -> float:
        lo, hi = self._range(name)
        return (float(x) - lo) / (hi - lo)

    def inverse_value(self, name: str, z: float) -> float:
        lo, hi = self._range(name)
        return float(z) * (hi - lo) + lo

    def transform(self, values: ArrayLike, names: Sequence[str]) -> np.ndarray:
        lo, span = self._vectors(names)
        return (np.asarray(values, dtype=float) - lo) / span

    def inverse(self, values: ArrayLike, names: Sequence[str]) -> np.ndarray:
        lo, span = self._vectors(names)
        return np.asarray(values, dtype=float) * span + lo

    def _vectors(self, names: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        pairs = [self._range(n) for n in names]
        lo = np.array([p[0] for p in pairs], dtype=float)
        span = np.array([p[1] - p[0] for p in pairs], dtype=float)
        return lo, span

    def to_dict(self) -> Dict[str, Dict[str, float]]:
        return {k: {"min": lo, "max": hi} for k, (lo, hi) in self.bounds.items()}


def fit_scaler(ds: TimeSeriesDataset, variables: Sequence[str] = VARIABLES) -> Scaler:
    if len(ds) == 0:
        raise EmptyDatasetError("Cannot fit a scaler on an empty dataset.")
    b: Dict[str, Tuple[float, float]] = {}
    for v in variables:
        col = ds.column(v)
        col = col[np.isfinite(col)]
        if col.size == 0:
            raise EmptyDatasetError(f"Variable '{v}' has no values to fit.")
        lo, hi = float(col.min()), float(col.max())
        if not hi > lo:
            raise DegenerateRangeError(v, lo)
        b[v] = (lo, hi)
    return Scaler(b)


def apply_scaler(s: Scaler, data: Union[TimeSeriesDataset, ArrayLike], names: Optional[Sequence[str]] = None) -> np.ndarray:
    """
    Standardizes a dataset (rows x names) or an array whose last axis follows `names`.
    Values outside the fitted range map outside [0, 1]; no clipping.
    """
    names = tuple(names) if names is not None else s.variables
    if isinstance(data, TimeSeriesDataset):
        return s.transform(data.matrix(names), names)
    return s.transform(data, names)


def inverse_scaler(s: Scaler, values: ArrayLike, names: Optional[Sequence[str]] = None) -> np.ndarray:
    names = tuple(names) if names is not None else s.variables
    return s.inverse(values, names)


# ----------------------------
# Supervised pairs
# ----------------------------
@dataclass(frozen=True)
class TrainingPairs:
    X: np.ndarray
    y: np.ndarray
    input_names: Tuple[str, ...]
    output_name: str

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[1] != len(self.input_names):
            raise SizeError(f"Inconsistent pairs: X{X.shape}, y{y.shape}, inputs={list(self.input_names)}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "input_names", tuple(self.input_names))

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def split_chronological(self, validation_fraction: float) -> Tuple["TrainingPairs", "TrainingPairs"]:
        # last fraction of the (time-ordered) rows is held out
        n = len(self)
        n_val = min(n - 1, max(1, int(round(n * validation_fraction))))
        cut = n - n_val
        return (
            TrainingPairs(self.X[:cut], self.y[:cut], self.input_names, self.output_name),
            TrainingPairs(self.X[cut:], self.y[cut:], self.input_names, self.output_name),
        )


def standardized_pairs(
    ds: TimeSeriesDataset,
    scaler: Scaler,
    inputs: Sequence[str],
    output: str,
) -> TrainingPairs:
    X = apply_scaler(scaler, ds, inputs)
    y = apply_scaler(scaler, ds, [output])[:, 0]
    return TrainingPairs(X, y, tuple(inputs), output)


# ----------------------------
# Synthetic record generator
# ----------------------------
SYNTH_INPUTS: Tuple[str, ...] = ("P", "R", "G", "E", "Ur", "Ug")

# month of the seasonal maximum; P is bimodal (spring + autumn), hence harmonic 2
SEASONAL_PEAK: Dict[str, int] = {"P": 5, "R": 5, "G": 5, "E": 8, "Ur": 7, "Ug": 9}
SEASONAL_HARMONIC: Dict[str, int] = {"P": 2}
SEASONAL_AMPLITUDE = 0.3
NOISE_SD: Dict[str, float] = {"P": 0.15, "R": 0.15, "G": 0.12, "E": 0.12, "Ur": 0.10, "Ug": 0.10}
WET_YEAR_SD = 0.05  # interannual anomaly on P and R

# planted lake-level response in standardized space
PLANTED_WEIGHTS: Dict[str, float] = {"G": 0.45, "R": 0.35, "E": -0.10}
PLANTED_INTERACTION = 0.05  # P * R
PLANTED_NOISE = 0.05
_PLANTED_LO = -0.10
_PLANTED_HI = 0.85


def seasonal_cycle(name: str, months: np.ndarray) -> np.ndarray:
    """Noiseless standardized seasonal signal of a synthetic input for the given months."""
    if name not in SEASONAL_PEAK:
        raise UnknownVariableError(name, SYNTH_INPUTS)
    k = SEASONAL_HARMONIC.get(name, 1)
    phase = 2.0 * math.pi * k * (np.asarray(months) - SEASONAL_PEAK[name]) / 12.0
    return 0.5 + SEASONAL_AMPLITUDE * np.cos(phase)


def planted_level(std: Mapping[str, np.ndarray], noise: np.ndarray, *, noise_scale: float = PLANTED_NOISE) -> np.ndarray:
    """
    H_std = 0.45 G + 0.35 R - 0.10 E + 0.05 P R + noise_scale * noise, mapped
    affinely from its noiseless range [-0.10, 0.85] onto [0, 1] and clipped.
    """
    h = sum(w * std[k] for k, w in PLANTED_WEIGHTS.items())
    h = h + PLANTED_INTERACTION * std["P"] * std["R"] + noise_scale * noise
    return np.clip((h - _PLANTED_LO) / (_PLANTED_HI - _PLANTED_LO), 0.0, 1.0)


def synthesize_dataset(
    stats: FeatureStats = PUBLISHED_STATS,
    n_years: int = 19,
    seed: int = 42,
    *,
    start_year: int = 2001,
    noise: float = PLANTED_NOISE,
) -> TimeSeriesDataset:
    """
    Seeded monthly records: seasonal sinusoid + noise per input variable,
    clipped to the stats envelope, and H generated from the planted function
    (G and R dominant). `noise` scales the residual on H; 0 makes H an exact
    function of the other variables. Identical seed -> identical dataset.
    """
    if n_years < 2:
        raise SizeError(f"n_years must be >= 2, got {n_years}.")
    if not (math.isfinite(noise) and noise >= 0.0):
        raise ParameterError(f"noise must be a finite value >= 0, got {noise}.")

    rng = np.random.default_rng(seed)
    n = 12 * n_years
    months = np.tile(np.arange(1, 13), n_years)
    years = np.repeat(start_year + np.arange(n_years), 12)

    std: Dict[str, np.ndarray] = {}
    for name in SYNTH_INPUTS:
        z = seasonal_cycle(name, months) + NOISE_SD[name] * rng.standard_normal(n)
        if name in ("P", "R"):
            z = z + WET_YEAR_SD * np.repeat(rng.standard_normal(n_years), 12)
        std[name] = np.clip(z, 0.0, 1.0)
    std["H"] = planted_level(std, rng.standard_normal(n), noise_scale=noise)

    raw: Dict[str, np.ndarray] = {}
    for name in VARIABLES:
        s = stats[name]
        raw[name] = np.clip(s.min + std[name] * (s.max - s.min), s.min, s.max)

    records = [
        MonthlyRecord(
            year=int(years[i]),
            month=int(months[i]),
            **{v: float(raw[v][i]) for v in VARIABLES},
        )
        for i in range(n)
    ]
    logger.debug("Synthesized %d records (seed=%d)", n, seed)
    return TimeSeriesDataset(tuple(records), "synthetic")


# ----------------------------
# Monthly patterns
# ----------------------------
def _month_label(m: int) -> str:
    return calendar.month_name[m]


def monthly_constraint_pattern(ds: TimeSeriesDataset, reference_year: int) -> np.ndarray:
    """Hcon[m] = H of (reference_year, m), m = 1..12."""
    ref = {r.month: float(r.H) for r in ds.records if r.year == reference_year}
    missing = [m for m in range(1, 13) if m not in ref]
    if missing:
        names = ", ".join(_month_label(m) for m in missing)
        raise CoverageError(f"Reference year {reference_year} is incomplete; missing: {names}.", missing=missing)

    pattern = np.array([ref[m] for m in range(1, 13)], dtype=float)
    if ds.provenance == "measured":
        lo, hi = HCON_ENVELOPE
        outside = [m for m in range(1, 13) if not lo <= pattern[m - 1] <= hi]
        if outside:
            logger.warning(
                "Constraint pattern for %d lies outside [%.1f, %.1f] in: %s",
                reference_year, lo, hi, ", ".join(_month_label(m) for m in outside),
            )
    return pattern


def attach_constraint_pattern(ds: TimeSeriesDataset, reference_year: int) -> TimeSeriesDataset:
    """Fills missing Hcon cells with the reference-year pattern of their month."""
    pattern = monthly_constraint_pattern(ds, reference_year)
    recs = [
        r if r.Hcon is not None else r.model_copy(update={"Hcon": float(pattern[r.month - 1])})
        for r in ds.records
    ]
    return TimeSeriesDataset(tuple(recs), ds.provenance)


def _by_month(ds: TimeSeriesDataset, name: str) -> List[np.ndarray]:
    col = ds.column(name)
    months = ds.months
    out = []
    for m in range(1, 13):
        vals = col[(months == m) & np.isfinite(col)]
        if vals.size == 0:
            raise CoverageError(f"No observations of '{name}' for {_month_label(m)}.", missing=[m])
        out.append(vals)
    return out


def monthly_climatology(ds: TimeSeriesDataset, name: str) -> np.ndarray:
    return np.array([float(np.mean(v)) for v in _by_month(ds, name)], dtype=float)


def monthly_envelope(ds: TimeSeriesDataset, name: str) -> Tuple[np.ndarray, np.ndarray]:
    parts = _by_month(ds, name)
    return (
        np.array([float(v.min()) for v in parts], dtype=float),
        np.array([float(v.max()) for v in parts], dtype=float),
    )
