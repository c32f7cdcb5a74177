from __future__ import annotations

import json
import logging
from typing import Dict, Iterable, List, Optional

import numpy as np
import pytest

from core.dataset import PUBLISHED_STATS, TimeSeriesDataset, synthesize_dataset
from core.schemas import MonthlyRecord
from core.surrogate import MlpModel

CSV_HEADER = "year,month,P,R,G,E,Ur,Ug,H"


def toy_record(year: int, month: int, **overrides) -> MonthlyRecord:
    values = dict(
        year=year,
        month=month,
        P=float(month),
        R=10.0 + month,
        G=1296.0 + month / 10.0,
        E=2.0 * month,
        Ur=20.0 + month,
        Ug=float(month),
        H=1270.0 + month / 6.0 + (year - 2017) * 0.1,
    )
    values.update(overrides)
    return MonthlyRecord(**values)


def toy_dataset(years: Iterable[int] = (2017, 2018), provenance: str = "measured") -> TimeSeriesDataset:
    return TimeSeriesDataset(tuple(toy_record(y, m) for y in years for m in range(1, 13)), provenance)


def csv_text(rows: Iterable[Iterable[object]], header: str = CSV_HEADER) -> str:
    lines = [header] + [",".join(str(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def constant_model(value: float, input_names=("H", "P", "G", "E", "Ur", "Ug"), output_name: str = "R") -> MlpModel:
    n = len(input_names)
    return MlpModel(
        (np.zeros((n, 3)), np.zeros((3, 1))),
        (np.zeros(3), np.array([value])),
        tuple(input_names),
        output_name,
    )


def single_neuron_model(weights: Dict[str, float], output_weight: float = 1.0,
                        input_names=("H", "P", "G", "E", "Ur", "Ug"), output_name: str = "R") -> MlpModel:
    w = np.array([[weights.get(n, 0.0)] for n in input_names])
    return MlpModel(
        (w, np.array([[output_weight]])),
        (np.zeros(1), np.zeros(1)),
        tuple(input_names),
        output_name,
    )


@pytest.fixture(scope="session")
def synthetic_ds() -> TimeSeriesDataset:
    return synthesize_dataset(PUBLISHED_STATS, 19, 42)


@pytest.fixture
def write_csv(tmp_path):
    def _write(text: str, name: str = "data.csv") -> str:
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return str(p)

    return _write


FAST_PIPELINE: Dict[str, object] = {
    "hidden_sizes": [12, 8],
    "model_i": {"epochs": 150, "early_stop_patience": 50},
    "model_ii": {"epochs": 150, "early_stop_patience": 50},
    "sobol_s0": 200,
    "sobol_max_s": 400,
    "sobol_tol": 0.05,
    "morris_trajectories": 10,
    "ga": {"population_size": 12, "generations": 8},
    "pattern": {"max_iterations": 200},
    "nlp": {"max_iterations": 100, "restarts": 2},
}


@pytest.fixture
def fast_config_file(tmp_path):
    def _write(extra: Optional[Dict[str, object]] = None, pipeline: Optional[Dict[str, object]] = None) -> str:
        doc: Dict[str, object] = {"pipeline": {**FAST_PIPELINE, **(pipeline or {})}}
        doc.update(extra or {})
        p = tmp_path / "config.json"
        p.write_text(json.dumps(doc), encoding="utf-8")
        return str(p)

    return _write


@pytest.fixture
def restore_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)
