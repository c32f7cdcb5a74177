# core/benchmarks.py
"""Analytic test functions over the unit hypercube, evaluated row-wise."""
from __future__ import annotations

import math
from typing import Callable, Dict, Sequence

import numpy as np

ISHIGAMI_A = 7.0
ISHIGAMI_B = 0.1


def ishigami(X: np.ndarray, a: float = ISHIGAMI_A, b: float = ISHIGAMI_B) -> np.ndarray:
    """sin x1 + a sin^2 x2 + b x3^4 sin x1 with unit inputs mapped to [-pi, pi]."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = -math.pi + 2.0 * math.pi * X[:, :3]
    s1 = np.sin(z[:, 0])
    return s1 + a * np.sin(z[:, 1]) ** 2 + b * z[:, 2] ** 4 * s1


def ishigami_indices(a: float = ISHIGAMI_A, b: float = ISHIGAMI_B) -> Dict[str, list]:
    """Closed-form first-order and total indices of the Ishigami function."""
    pi4 = math.pi ** 4
    pi8 = math.pi ** 8
    v1 = 0.5 * (1.0 + b * pi4 / 5.0) ** 2
    v2 = a * a / 8.0
    v13 = 8.0 * b * b * pi8 / 225.0
    d = v1 + v2 + v13
    return {
        "variance": [d],
        "S": [v1 / d, v2 / d, 0.0],
        "S_T": [(v1 + v13) / d, v2 / d, v13 / d],
    }


def linear(coefficients: Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    c = np.asarray(coefficients, dtype=float)

    def f(X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ c

    return f


def product(X: np.ndarray) -> np.ndarray:
    """x1 * x2 (extra columns ignored)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return X[:, 0] * X[:, 1]
