# core/optimizers.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import CapabilityError, ConfigError, DispatchError, ParameterError
from core.schemas import GaConfig, NlpConfig, OptimizerTag, PsConfig
from tools.parallel import evaluate_rows

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]
BatchObjective = Callable[[np.ndarray], np.ndarray]
Sense = Literal["maximize", "minimize"]

ARMIJO_C1 = 1e-4


# ----------------------------
# Problem / result
# ----------------------------
@dataclass(frozen=True, eq=False)
class BoxedProblem:
    """
    Maximize objective(x) over lower <= x <= upper with some coordinates
    pinned. Solvers search the free coordinates only; embed() rebuilds the
    full vector with the pinned values copied in unchanged.
    """

    objective: Objective
    lower: np.ndarray
    upper: np.ndarray
    fixed: Mapping[int, float] = field(default_factory=dict)
    gradient: Optional[Gradient] = None
    # rows -> values; used for GA populations when present
    batch_objective: Optional[BatchObjective] = None
    names: Tuple[str, ...] = ()
    start: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise ParameterError(f"Bounds must be equal-length non-empty vectors, got {lo.shape} and {hi.shape}.")
        if not np.all(lo <= hi):
            bad = int(np.flatnonzero(~(lo <= hi))[0])
            raise ParameterError(f"Lower bound exceeds upper bound at coordinate {bad}: {lo[bad]} > {hi[bad]}.")

        fixed = {int(i): float(v) for i, v in dict(self.fixed).items()}
        for i, v in fixed.items():
            if not 0 <= i < lo.size:
                raise ParameterError(f"Fixed coordinate {i} outside dimension {lo.size}.")
            if not lo[i] <= v <= hi[i]:
                raise ParameterError(f"Fixed value {v} for coordinate {i} outside [{lo[i]}, {hi[i]}].")
        if len(fixed) >= lo.size:
            raise ParameterError("At least one coordinate must be free.")
        names = tuple(self.names) if self.names else tuple(f"x{i + 1}" for i in range(lo.size))
        if len(names) != lo.size:
            raise ParameterError(f"{len(names)} names for dimension {lo.size}.")

        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "names", names)
        if self.start is not None:
            object.__setattr__(self, "start", np.array(self.start, dtype=float).reshape(-1))

    @property
    def dimension(self) -> int:
        return int(self.lower.size)

    @property
    def free_index(self) -> np.ndarray:
        return np.array([i for i in range(self.dimension) if i not in self.fixed], dtype=int)

    @property
    def free_lower(self) -> np.ndarray:
        return self.lower[self.free_index]

    @property
    def free_upper(self) -> np.ndarray:
        return self.upper[self.free_index]

    def embed(self, z: np.ndarray) -> np.ndarray:
        """Free vector (or rows of free vectors) -> full vector(s)."""
        z = np.asarray(z, dtype=float)
        base = np.zeros(self.dimension)
        for i, v in self.fixed.items():
            base[i] = v
        if z.ndim == 1:
            x = base.copy()
            x[self.free_index] = z
            return x
        X = np.tile(base, (z.shape[0], 1))
        X[:, self.free_index] = z
        return X

    def free_start(self) -> np.ndarray:
        lo, hi = self.free_lower, self.free_upper
        if self.start is None:
            return lo + 0.5 * (hi - lo)
        return np.clip(self.start[self.free_index], lo, hi)

    def negated(self) -> "BoxedProblem":
        obj, grad, batch = self.objective, self.gradient, self.batch_objective
        return BoxedProblem(
            objective=lambda x: -obj(x),
            lower=self.lower,
            upper=self.upper,
            fixed=self.fixed,
            gradient=(lambda x: -np.asarray(grad(x), dtype=float)) if grad is not None else None,
            batch_objective=(lambda X: -np.asarray(batch(X), dtype=float)) if batch is not None else None,
            names=self.names,
            start=self.start,
        )


@dataclass(frozen=True, eq=False)
class OptResult:
    method: str
    x_star: np.ndarray
    f_star: float
    evaluations: int
    iterations: int
    converged: bool
    trace: Tuple[float, ...]
    seed: Optional[int] = None

    def to_dict(self, names: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        names = list(names) if names else [f"x{i + 1}" for i in range(len(self.x_star))]
        return {
            "method": self.method,
            "seed": self.seed,
            "x_star": {n: float(v) for n, v in zip(names, self.x_star)},
            "f_star": self.f_star,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": list(self.trace),
        }


class _Counter:
    """Objective over free vectors, counting calls."""

    def __init__(self, p: BoxedProblem, threads: int = 1):
        self.p = p
        self.threads = threads
        self.count = 0

    def __call__(self, z: np.ndarray) -> float:
        self.count += 1
        return float(self.p.objective(self.p.embed(z)))

    def many(self, Z: np.ndarray) -> np.ndarray:
        self.count += int(Z.shape[0])
        X = self.p.embed(Z)
        if self.p.batch_objective is not None:
            return evaluate_rows(self.p.batch_objective, X, threads=self.threads)
        return np.array([float(self.p.objective(x)) for x in X], dtype=float)

    def grad(self, z: np.ndarray) -> np.ndarray:
        g = np.asarray(self.p.gradient(self.p.embed(z)), dtype=float).reshape(-1)
        return g[self.p.free_index]


def _finish(method: str, p: BoxedProblem, ev: _Counter, z: np.ndarray, iterations: int,
            converged: bool, trace: List[float], seed: Optional[int]) -> OptResult:
    z = np.clip(z, p.free_lower, p.free_upper)
    x = p.embed(z)
    f = ev(z)
    return OptResult(method, x, f, ev.count, iterations, converged, tuple(trace), seed)


# ----------------------------
# Binary-coded genetic algorithm
# ----------------------------
def _decoder(p: BoxedProblem, bits: int) -> Callable[[np.ndarray], np.ndarray]:
    lo, hi = p.free_lower, p.free_upper
    nf = lo.size
    place = 2 ** np.arange(bits - 1, -1, -1, dtype=np.int64)  # big-endian
    top = float(2 ** bits - 1)

    def decode(pop: np.ndarray) -> np.ndarray:
        k = pop.reshape(pop.shape[0], nf, bits).astype(np.int64) @ place
        return np.clip(lo + (k / top) * (hi - lo), lo, hi)

    return decode


def _tournament(rng: np.random.Generator, fit: np.ndarray) -> int:
    a, b = rng.integers(0, fit.size, size=2)
    return int(a) if fit[a] >= fit[b] else int(b)


def genetic_algorithm(p: BoxedProblem, cfg: GaConfig = GaConfig(), *, threads: int = 1) -> OptResult:
    """
    Each generation: sort by fitness, keep the best as survivors, replace the
    worst replacement_fraction by single-point crossover children of
    tournament-2 parents, then flip bits with mutation_rate outside the elite.
    """
    N = int(cfg.population_size)
    if N < 4:
        raise ParameterError(f"population_size must be >= 4, got {N}.")

    rng = np.random.default_rng(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF)
    ev = _Counter(p, threads)
    nbits = int(cfg.bits_per_variable)
    L = nbits * p.free_index.size
    decode = _decoder(p, nbits)

    n_replace = min(N, int(round(cfg.replacement_fraction * N)))
    n_elite = min(N - n_replace, int(round(cfg.elite_fraction * N)))

    pop = rng.integers(0, 2, size=(N, L), dtype=np.uint8)
    fit = ev.many(decode(pop))
    best_i = int(np.argmax(fit))
    best_z, best_f = decode(pop[best_i : best_i + 1])[0], float(fit[best_i])
    trace = [best_f]
    last_gain = 0

    for gen in range(1, cfg.generations + 1):
        order = np.argsort(fit, kind="stable")  # ascending: worst first
        pop, fit = pop[order], fit[order]

        children: List[np.ndarray] = []
        while len(children) < n_replace:
            a = pop[_tournament(rng, fit)]
            b = pop[_tournament(rng, fit)]
            if L > 1 and rng.random() < cfg.crossover_rate:
                cut = int(rng.integers(1, L))
                children.append(np.concatenate([a[:cut], b[cut:]]))
                children.append(np.concatenate([b[:cut], a[cut:]]))
            else:
                children.extend([a.copy(), b.copy()])

        survivors = pop[n_replace:]
        new_pop = np.vstack([survivors] + children[:n_replace]) if n_replace else survivors.copy()

        flip = rng.random(new_pop.shape) < cfg.mutation_rate
        if n_elite:
            # survivors are ascending, so the elite are the last survivor rows
            s = survivors.shape[0]
            flip[s - n_elite : s] = False
        pop = new_pop ^ flip.astype(np.uint8)
        fit = ev.many(decode(pop))

        i = int(np.argmax(fit))
        if fit[i] > best_f:
            best_f = float(fit[i])
            best_z = decode(pop[i : i + 1])[0]
            last_gain = gen
        trace.append(best_f)

    # stagnated over the final tenth of the run
    converged = cfg.generations - last_gain >= max(1, cfg.generations // 10)
    return _finish("ga", p, ev, best_z, cfg.generations, converged, trace, cfg.seed)


# ----------------------------
# Pattern search
# ----------------------------
def pattern_search(p: BoxedProblem, cfg: PsConfig = PsConfig()) -> OptResult:
    """
    Complete coordinate poll x +/- mesh * e_i (clipped to the box). The best
    strictly improving poll point is accepted and the mesh expands;
    otherwise the mesh contracts. No randomness.
    """
    ev = _Counter(p)
    lo, hi = p.free_lower, p.free_upper
    z = p.free_start()
    fz = ev(z)
    mesh = float(cfg.initial_mesh)
    trace = [fz]
    converged = False
    it = 0

    while it < cfg.max_iterations:
        if mesh < cfg.min_mesh:
            converged = True
            break
        it += 1

        best_cand, best_f = None, fz
        seen = set()
        for i in range(z.size):
            for sgn in (1.0, -1.0):
                cand = z.copy()
                cand[i] = min(max(z[i] + sgn * mesh, lo[i]), hi[i])
                key = cand.tobytes()
                if cand[i] == z[i] or key in seen:
                    continue
                seen.add(key)
                fc = ev(cand)
                if fc > best_f:
                    best_cand, best_f = cand, fc

        if best_cand is not None:
            z, fz = best_cand, best_f
            mesh *= cfg.expansion
        else:
            mesh *= cfg.contraction
        trace.append(fz)

    if not converged and mesh < cfg.min_mesh:
        converged = True
    return _finish("pattern_search", p, ev, z, it, converged, trace, None)


# ----------------------------
# Projected-gradient ascent
# ----------------------------
def _ascend(ev: _Counter, z: np.ndarray, lo: np.ndarray, hi: np.ndarray, cfg: NlpConfig,
            trace: List[float], best_so_far: float) -> Tuple[np.ndarray, float, int, bool]:
    fz = ev(z)
    g = ev.grad(z)
    it = 0
    converged = False
    while it < cfg.max_iterations:
        pg = np.clip(z + g, lo, hi) - z
        if float(np.linalg.norm(pg)) < cfg.gradient_tolerance:
            converged = True
            break
        it += 1

        eta = float(cfg.initial_step)
        accepted = False
        while eta >= cfg.min_step:
            zn = np.clip(z + eta * g, lo, hi)
            fn = ev(zn)
            if fn >= fz + ARMIJO_C1 * float(g @ (zn - z)) and fn > fz:
                accepted = True
                break
            eta *= cfg.backtracking
        if not accepted:
            # line search underflow: no ascent left at working precision
            break

        z, fz = zn, fn
        g = ev.grad(z)
        best_so_far = max(best_so_far, fz)
        trace.append(best_so_far)
    return z, fz, it, converged


def nlp_solve(p: BoxedProblem, cfg: NlpConfig = NlpConfig()) -> OptResult:
    """
    x <- clip(x + eta * grad) with Armijo backtracking, from the box centre and
    restarts - 1 seeded uniform points; the best end point wins.
    Converged when ||clip(x + grad) - x|| < gradient_tolerance.
    """
    if p.gradient is None:
        raise CapabilityError("nlp needs a gradient; the problem provides none.")

    ev = _Counter(p)
    lo, hi = p.free_lower, p.free_upper
    rng = np.random.default_rng(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF)
    starts = [p.free_start()] + [lo + rng.random(lo.size) * (hi - lo) for _ in range(cfg.restarts - 1)]

    best: Optional[Tuple[np.ndarray, float, bool]] = None
    trace: List[float] = []
    iterations = 0
    for k, z0 in enumerate(starts):
        z, fz, it, conv = _ascend(ev, z0, lo, hi, cfg, trace, best[1] if best else -np.inf)
        iterations += it
        logger.debug("nlp start %d: f=%.6g after %d iterations (converged=%s)", k, fz, it, conv)
        if best is None or fz > best[1]:
            best = (z, fz, conv)
        trace.append(best[1])

    z, _, conv = best
    return _finish("nlp", p, ev, z, iterations, conv, trace, cfg.seed)


# ----------------------------
# Dispatch
# ----------------------------
SolverConfig = Union[GaConfig, PsConfig, NlpConfig]

_CONFIG_TYPES: Dict[str, type] = {"ga": GaConfig, "pattern_search": PsConfig, "nlp": NlpConfig}


def solve(
    method: str,
    p: BoxedProblem,
    cfg: Optional[SolverConfig] = None,
    *,
    sense: Sense = "maximize",
    threads: int = 1,
) -> OptResult:
    """
    Uniform entry point. sense="minimize" negates the objective (and gradient)
    and reports f* and the trace in the caller's sense.
    """
    if method not in _CONFIG_TYPES:
        raise DispatchError(f"Unknown optimizer '{method}'. Known: {sorted(_CONFIG_TYPES)}")
    if sense not in ("maximize", "minimize"):
        raise ConfigError(f"sense must be 'maximize' or 'minimize', got {sense!r}.")
    cfg = cfg if cfg is not None else _CONFIG_TYPES[method]()
    if not isinstance(cfg, _CONFIG_TYPES[method]):
        raise ConfigError(f"Optimizer '{method}' expects {_CONFIG_TYPES[method].__name__}, got {type(cfg).__name__}.")

    q = p.negated() if sense == "minimize" else p
    if method == "ga":
        res = genetic_algorithm(q, cfg, threads=threads)
    elif method == "pattern_search":
        res = pattern_search(q, cfg)
    else:
        res = nlp_solve(q, cfg)

    if sense == "minimize":
        res = OptResult(
            res.method, res.x_star, -res.f_star, res.evaluations, res.iterations,
            res.converged, tuple(-v for v in res.trace), res.seed,
        )
    return res


OPTIMIZERS: Tuple[OptimizerTag, ...] = ("ga", "pattern_search", "nlp")
