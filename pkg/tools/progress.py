from __future__ import annotations
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

ProgressCB = Callable[[int, str], None]

# relative cost of each pipeline stage
PIPELINE_WEIGHTS: Dict[str, float] = {
    "train_model_i": 3.0,
    "sobol": 2.0,
    "morris": 1.0,
    "train_model_ii": 3.0,
    "optimize": 3.0,
}


@dataclass
class ProgressTracker:
    cb: Optional[ProgressCB] = None
    weights: Dict[str, float] = field(default_factory=lambda: dict(PIPELINE_WEIGHTS))

    def __post_init__(self):
        self._done: Dict[str, bool] = {}

    def _emit(self, p: float, msg: str):
        if self.cb:
            self.cb(int(round(100 * max(0.0, min(1.0, p)))), msg)

    def start(self, stage: str, msg: Optional[str] = None):
        self._emit(self.progress(stage, 0.0), msg or f"{stage}…")

    def done(self, stage: str, msg: Optional[str] = None):
        self._done[stage] = True
        self._emit(self.progress(stage, 1.0), msg or f"{stage} done")

    def update(self, stage: str, frac: float, msg: str):
        self._emit(self.progress(stage, frac), msg)

    def progress(self, stage: str, frac: float) -> float:
        # completed stages count fully, the current one by fraction
        total_w = sum(self.weights.values()) or 1.0
        p = 0.0
        for s, w in self.weights.items():
            if s == stage:
                p += w * max(0.0, min(1.0, frac))
            elif self._done.get(s):
                p += w
        return p / total_w
