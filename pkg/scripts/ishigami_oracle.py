# scripts/ishigami_oracle.py
"""
Brute-force double-loop Sobol indices of the Ishigami function.

    python scripts/ishigami_oracle.py --outer 1000 --inner 1000 --out tests/fixtures/ishigami_oracle.json

First order:  V_j  = Var over x_j of E[y | x_j]           (outer x_j, inner x_~j)
Total:        VT_j = E over x_~j of Var[y | x_~j]          (outer x_~j, inner x_j)
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.benchmarks import ISHIGAMI_A, ISHIGAMI_B, ishigami, ishigami_indices  # noqa: E402
from tools.json_utils import write_json  # noqa: E402

logger = logging.getLogger("ishigami_oracle")

N_FACTORS = 3


def _conditional_moments(rng: np.random.Generator, j: int, outer: int, inner: int, total: bool) -> float:
    acc = np.empty(outer)
    for k in range(outer):
        X = rng.random((inner, N_FACTORS))
        if total:
            # x_~j held at one outer draw, x_j varies
            others = rng.random(N_FACTORS)
            keep = np.arange(N_FACTORS) != j
            X[:, keep] = others[keep]
            acc[k] = np.var(ishigami(X), ddof=1)
        else:
            X[:, j] = rng.random()
            acc[k] = np.mean(ishigami(X))
    return float(np.mean(acc)) if total else float(np.var(acc, ddof=1))


def double_loop(outer: int, inner: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    var = float(np.var(ishigami(rng.random((outer * inner, N_FACTORS))), ddof=1))
    first = [_conditional_moments(rng, j, outer, inner, total=False) / var for j in range(N_FACTORS)]
    tot = [_conditional_moments(rng, j, outer, inner, total=True) / var for j in range(N_FACTORS)]
    return {"variance": var, "S": first, "S_T": tot}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--outer", type=int, default=1000)
    ap.add_argument("--inner", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", default=os.path.join("tests", "fixtures", "ishigami_oracle.json"))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    est = double_loop(args.outer, args.inner, args.seed)
    exact = ishigami_indices()
    logger.info("double loop S=%s S_T=%s", est["S"], est["S_T"])
    logger.info("closed form S=%s S_T=%s", exact["S"], exact["S_T"])

    write_json(
        args.out,
        {
            "function": "ishigami",
            "a": ISHIGAMI_A,
            "b": ISHIGAMI_B,
            "source": "double_loop",
            "samples": args.outer * args.inner,
            "seed": args.seed,
            **est,
            "closed_form": exact,
        },
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
