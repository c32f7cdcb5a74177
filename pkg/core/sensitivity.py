# core/sensitivity.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from core.errors import ConstantOutputError, IntegrityError, NumericalError, ParameterError, SizeError
from tools.parallel import evaluate_rows
from tools.progress import ProgressCB

logger = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], np.ndarray]

VARIANCE_FLOOR = 1e-12


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for (seed, keys...); order of keys matters."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]) >> 1


def _default_names(n: int) -> Tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(n))


def _evaluate(f: Evaluator, X: np.ndarray, threads: int) -> np.ndarray:
    y = evaluate_rows(f, X, threads=threads)
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise NumericalError(f"Evaluator returned a non-finite value at design row {bad}.")
    return y


# ----------------------------
# Sobol' indices (Jansen estimators)
# ----------------------------
@dataclass(frozen=True, eq=False)
class SobolDesign:
    A: np.ndarray
    B: np.ndarray
    seed: int
    names: Tuple[str, ...] = ()

    @property
    def n_factors(self) -> int:
        return int(self.A.shape[1])

    @property
    def sample_size(self) -> int:
        return int(self.A.shape[0])

    def ab(self, j: int) -> np.ndarray:
        """A with column j taken from B."""
        M = self.A.copy()
        M[:, j] = self.B[:, j]
        return M

    def rows(self) -> np.ndarray:
        """All s(n + 2) evaluation rows: A, B, then A_B^(j) for j = 1..n."""
        return np.vstack([self.A, self.B] + [self.ab(j) for j in range(self.n_factors)])


def sobol_sample(n: int, s: int, seed: int = 0, names: Optional[Sequence[str]] = None) -> SobolDesign:
    if n < 1:
        raise SizeError(f"Need at least one factor, got n={n}.")
    if s < 2:
        raise SizeError(f"Sobol sample size must be >= 2, got s={s}.")
    names = tuple(names) if names else _default_names(n)
    if len(names) != n:
        raise SizeError(f"{len(names)} names for {n} factors.")

    seq_a, seq_b = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(2)
    A = np.random.default_rng(seq_a).random((s, n))
    B = np.random.default_rng(seq_b).random((s, n))
    return SobolDesign(A, B, int(seed), names)


def mc_tolerance(s: int) -> float:
    """Reported Monte Carlo slack on the indices: 0.05 at s = 1000, shrinking as 1/sqrt(s)."""
    return 0.05 * math.sqrt(1000.0 / s)


@dataclass(frozen=True)
class SobolRound:
    sample_size: int
    seed: int
    first_order: Tuple[float, ...]
    total: Tuple[float, ...]


@dataclass(frozen=True)
class SobolResult:
    names: Tuple[str, ...]
    first_order: Tuple[float, ...]
    total: Tuple[float, ...]
    variance: float
    sample_size: int
    seed: int
    mc_tolerance: float
    # None: single estimate, no convergence check was run
    converged: Optional[bool] = None
    history: Tuple[SobolRound, ...] = field(default_factory=tuple)

    def index_of(self, name: str) -> int:
        return self.names.index(name)


def sobol_jansen(f: Evaluator, d: SobolDesign, *, threads: int = 1) -> SobolResult:
    """
    Var  = sample variance of (yA, yB)
    V_j  = Var - 1/(2s) sum (yB - yAB_j)^2
    VT_j = 1/(2s) sum (yA - yAB_j)^2
    Negative S_j from Monte Carlo noise are kept as estimated.
    """
    s, n = d.sample_size, d.n_factors
    y = _evaluate(f, d.rows(), threads)
    yA, yB = y[:s], y[s : 2 * s]

    var = float(np.var(np.concatenate([yA, yB]), ddof=1))
    if not var >= VARIANCE_FLOOR:
        raise ConstantOutputError(f"Output variance {var:.3g} < {VARIANCE_FLOOR:g}; Sobol indices are undefined.")

    first, total = [], []
    for j in range(n):
        yAB = y[(2 + j) * s : (3 + j) * s]
        vj = var - float(np.sum((yB - yAB) ** 2)) / (2 * s)
        vt = float(np.sum((yA - yAB) ** 2)) / (2 * s)
        first.append(vj / var)
        total.append(vt / var)

    return SobolResult(
        names=d.names or _default_names(n),
        first_order=tuple(first),
        total=tuple(total),
        variance=var,
        sample_size=s,
        seed=d.seed,
        mc_tolerance=mc_tolerance(s),
    )


def sobol_converge(
    f: Evaluator,
    n: int,
    s0: int = 1000,
    growth_factor: float = 2.0,
    tol: float = 0.02,
    max_s: int = 16000,
    seed: int = 0,
    *,
    names: Optional[Sequence[str]] = None,
    threads: int = 1,
    progress_cb: Optional[ProgressCB] = None,
) -> SobolResult:
    """
    Re-estimates with s = s0, s0*g, s0*g^2, ... (fresh design per round, seed
    derived from `seed` and the round number) until every index moves by at
    most tol between consecutive rounds. At least two rounds always run; later
    rounds stop once the next size would exceed max_s.
    """
    if s0 < 2:
        raise SizeError(f"s0 must be >= 2, got {s0}.")
    if not growth_factor > 1:
        raise ParameterError(f"growth_factor must be > 1, got {growth_factor}.")
    if not tol > 0:
        raise ParameterError(f"tol must be > 0, got {tol}.")

    history: List[SobolRound] = []
    result: Optional[SobolResult] = None
    converged = False
    k = 0
    s = int(s0)
    while True:
        round_seed = derive_seed(seed, k)
        result = sobol_jansen(f, sobol_sample(n, s, round_seed, names), threads=threads)
        history.append(SobolRound(s, round_seed, result.first_order, result.total))

        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            change = max(
                max(abs(a - b) for a, b in zip(prev.first_order, cur.first_order)),
                max(abs(a - b) for a, b in zip(prev.total, cur.total)),
            )
            logger.debug("Sobol round %d: s=%d, max change %.4g", k, s, change)
            if change <= tol:
                converged = True
                break

        next_s = max(s + 1, int(round(s0 * growth_factor ** (k + 1))))
        if next_s > max_s and len(history) >= 2:
            break
        if progress_cb:
            progress_cb(min(99, int(100 * s / max(max_s, s))), f"Sobol s={s}")
        s = next_s
        k += 1

    if not converged:
        logger.warning("Sobol indices did not converge to tol=%g by s=%d.", tol, s)
    return SobolResult(
        names=result.names,
        first_order=result.first_order,
        total=result.total,
        variance=result.variance,
        sample_size=result.sample_size,
        seed=int(seed),
        mc_tolerance=result.mc_tolerance,
        converged=converged,
        history=tuple(history),
    )


# ----------------------------
# Morris elementary effects
# ----------------------------
@dataclass(frozen=True, eq=False)
class MorrisDesign:
    levels: int
    delta: float
    # (r, n + 1, n) grid points, (r, n) factor moved at each step
    points: np.ndarray
    order: np.ndarray
    seed: int
    names: Tuple[str, ...] = ()

    @property
    def n_factors(self) -> int:
        return int(self.points.shape[2])

    @property
    def trajectories(self) -> int:
        return int(self.points.shape[0])


def morris_trajectories(
    n: int, p: int = 4, r: int = 100, seed: int = 0, names: Optional[Sequence[str]] = None
) -> MorrisDesign:
    """
    Each trajectory starts at a random level index and moves every factor
    exactly once, in random order, by p/2 levels (delta = p / (2(p - 1))),
    upward from the lower half of the grid and downward from the upper half.
    """
    if p < 2 or p % 2:
        raise ParameterError(f"Morris levels must be even and >= 2, got p={p}.")
    if r < 1:
        raise ParameterError(f"Need at least one trajectory, got r={r}.")
    if n < 1:
        raise SizeError(f"Need at least one factor, got n={n}.")
    names = tuple(names) if names else _default_names(n)

    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    jump = p // 2
    idx = np.zeros((r, n + 1, n), dtype=int)
    order = np.zeros((r, n), dtype=int)
    for t in range(r):
        cur = rng.integers(0, p, size=n)
        perm = rng.permutation(n)
        idx[t, 0] = cur
        for step, i in enumerate(perm):
            cur = cur.copy()
            cur[i] = cur[i] + jump if cur[i] < jump else cur[i] - jump
            idx[t, step + 1] = cur
        order[t] = perm

    points = idx / float(p - 1)
    return MorrisDesign(p, p / (2.0 * (p - 1)), points, order, int(seed), names)


@dataclass(frozen=True)
class MorrisResult:
    names: Tuple[str, ...]
    mu: Tuple[float, ...]
    mu_star: Tuple[float, ...]
    sigma: Tuple[float, ...]
    trajectories: int
    levels: int
    delta: float
    seed: int


def elementary_effects(
    f: Evaluator,
    d: MorrisDesign,
    *,
    allow_single_trajectory: bool = False,
    threads: int = 1,
) -> MorrisResult:
    r, n = d.trajectories, d.n_factors
    if r == 1 and not allow_single_trajectory:
        raise ParameterError("sigma needs at least 2 trajectories; pass allow_single_trajectory to accept sigma = 0.")

    y = _evaluate(f, d.points.reshape(-1, n), threads).reshape(r, n + 1)
    effects = np.zeros((n, r))
    for t in range(r):
        for k, i in enumerate(d.order[t]):
            step = d.points[t, k + 1, i] - d.points[t, k, i]
            effects[i, t] = (y[t, k + 1] - y[t, k]) / step

    mu = effects.mean(axis=1)
    mu_star = np.abs(effects).mean(axis=1)
    sigma = effects.std(axis=1, ddof=1) if r > 1 else np.zeros(n)
    return MorrisResult(
        names=d.names or _default_names(n),
        mu=tuple(float(v) for v in mu),
        mu_star=tuple(float(v) for v in mu_star),
        sigma=tuple(float(v) for v in sigma),
        trajectories=r,
        levels=d.levels,
        delta=d.delta,
        seed=d.seed,
    )


@dataclass(frozen=True)
class FactorClassification:
    # I: linear-effective, II: nonlinear/interacting, III: negligible
    classes: Dict[str, str]
    mu_star_threshold: float
    sigma_threshold: Optional[float]
    sigma_ratio: float = 0.5

    def members(self, label: str) -> List[str]:
        return [k for k, v in self.classes.items() if v == label]


def classify_factors(
    mr: MorrisResult,
    mu_star_threshold: Optional[float] = None,
    sigma_threshold: Optional[float] = None,
    *,
    sigma_ratio: float = 0.5,
) -> FactorClassification:
    """
    Defaults: mu* cut at 0.1 * max mu*; a factor is nonlinear when
    sigma >= sigma_ratio * its own mu*.
    """
    if mu_star_threshold is not None and not mu_star_threshold > 0:
        raise ParameterError(f"mu* threshold must be > 0, got {mu_star_threshold}.")
    if sigma_threshold is not None and not sigma_threshold > 0:
        raise ParameterError(f"sigma threshold must be > 0, got {sigma_threshold}.")

    top = max(mr.mu_star) if mr.mu_star else 0.0
    mst = mu_star_threshold if mu_star_threshold is not None else 0.1 * top

    classes: Dict[str, str] = {}
    for name, ms, sd in zip(mr.names, mr.mu_star, mr.sigma):
        if mst <= 0 or ms < mst:
            classes[name] = "III"
            continue
        cut = sigma_threshold if sigma_threshold is not None else sigma_ratio * ms
        classes[name] = "II" if sd >= cut else "I"
    return FactorClassification(classes, float(mst), sigma_threshold, sigma_ratio)


# ----------------------------
# Ranking
# ----------------------------
@dataclass(frozen=True)
class FactorRanking:
    order: Tuple[str, ...]  # by S_T, descending
    morris_order: Tuple[str, ...]  # by mu*, descending
    kendall_tau: float


def _ranked(names: Sequence[str], scores: Sequence[float]) -> Tuple[str, ...]:
    # ties keep input order; negative estimates count as 0
    keyed = sorted(range(len(names)), key=lambda i: (-max(0.0, scores[i]), i))
    return tuple(names[i] for i in keyed)


def rank_factors(sobol: SobolResult, morris: MorrisResult) -> FactorRanking:
    if set(sobol.names) != set(morris.names) or len(sobol.names) != len(morris.names):
        raise IntegrityError(f"Factor sets differ: Sobol {list(sobol.names)} vs Morris {list(morris.names)}.")

    by_total = _ranked(sobol.names, sobol.total)
    by_mu_star = _ranked(morris.names, morris.mu_star)
    if len(by_total) < 2:
        tau = 1.0
    else:
        pos_m = {name: i for i, name in enumerate(by_mu_star)}
        tau = float(stats.kendalltau(np.arange(len(by_total)), [pos_m[name] for name in by_total])[0])
    return FactorRanking(by_total, by_mu_star, tau)


# ----------------------------
# Export
# ----------------------------
def sobol_to_dict(res: SobolResult) -> Dict[str, Any]:
    return {
        "method": "sobol_jansen",
        "seed": res.seed,
        "sample_size": res.sample_size,
        "variance": res.variance,
        "mc_tolerance": res.mc_tolerance,
        "converged": res.converged,
        "factors": [
            {"name": n, "S": s, "S_T": t} for n, s, t in zip(res.names, res.first_order, res.total)
        ],
        "history": [
            {
                "sample_size": h.sample_size,
                "seed": h.seed,
                "S": list(h.first_order),
                "S_T": list(h.total),
            }
            for h in res.history
        ],
    }


def morris_to_dict(res: MorrisResult, classification: Optional[FactorClassification] = None) -> Dict[str, Any]:
    factors = []
    for n, mu, ms, sd in zip(res.names, res.mu, res.mu_star, res.sigma):
        row: Dict[str, Any] = {"name": n, "mu": mu, "mu_star": ms, "sigma": sd}
        if classification is not None:
            row["class"] = classification.classes.get(n)
        factors.append(row)
    out: Dict[str, Any] = {
        "method": "morris",
        "seed": res.seed,
        "trajectories": res.trajectories,
        "levels": res.levels,
        "delta": res.delta,
        "factors": factors,
    }
    if classification is not None:
        out["thresholds"] = {
            "mu_star": classification.mu_star_threshold,
            "sigma": classification.sigma_threshold,
            "sigma_ratio": classification.sigma_ratio,
        }
    return out


def ranking_to_dict(rk: FactorRanking) -> Dict[str, Any]:
    return {"order": list(rk.order), "morris_order": list(rk.morris_order), "kendall_tau": rk.kendall_tau}
