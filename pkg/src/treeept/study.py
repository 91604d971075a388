"""Approximation study: closed-form regularization versus the exact value.

Synthetic pairs of measures are drawn from seeded uniform point clouds; each
pair gets its own sampled tree. For every value of the swept parameter the
relative difference ``(ET~^0 - ET) / ET`` is averaged over the pairs.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .closed_form import regularized_ept
from .exact import exact_ept
from .params import EptParams, ParameterError, WeightFn
from .sampling import SamplingConfig, derive_seed, measure_on_sampled_tree, sample_tree

__all__ = ["Sweep", "StudyRow", "StudyConfig", "parse_grid", "run_study", "write_rows", "STUDY_FIELDS"]

DENOM_EPS = 1e-9
STUDY_FIELDS = (
    "sweep_variable",
    "value",
    "mean_rel_diff",
    "mean_abs_rel_diff",
    "pair_count",
    "fallback_count",
)


class Sweep(str, enum.Enum):
    A1 = "a1"
    LAMBDA = "lambda"
    B = "b"


@dataclass(frozen=True)
class StudyRow:
    """Averages over all pairs at one grid value.

    ``fallback_count`` pairs had ``ET <= 1e-9`` (or ``|ET| <= 1e-9`` for the
    absolute column) and contribute the plain difference instead of a ratio.
    """

    sweep_variable: Sweep
    value: float
    mean_rel_diff: float
    mean_abs_rel_diff: float
    pair_count: int
    fallback_count: int

    def as_csv(self) -> str:
        return ",".join(
            [
                self.sweep_variable.value,
                repr(float(self.value)),
                repr(float(self.mean_rel_diff)),
                repr(float(self.mean_abs_rel_diff)),
                str(self.pair_count),
                str(self.fallback_count),
            ]
        )


@dataclass(frozen=True)
class StudyConfig:
    pairs: int = 1000
    support_size: int = 10
    dim: int = 2
    seed: int = 0
    scale: float = 1.0
    sampling: SamplingConfig = SamplingConfig()
    b: float = 1.0
    lam: float = 1.0
    a1: float = 0.0
    a0: float = 1.0


def parse_grid(text: str) -> list[float]:
    """``"lo:step:hi"`` to an inclusive list of values.

    >>> parse_grid("0:0.25:1")
    [0.0, 0.25, 0.5, 0.75, 1.0]
    """
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must look like lo:step:hi, got {text!r}")
    lo, step, hi = (float(v) for v in parts)
    if not all(math.isfinite(v) for v in (lo, step, hi)):
        raise ValueError("grid bounds must be finite")
    if hi < lo:
        return []
    if step <= 0:
        if hi == lo:
            return [lo]
        raise ValueError("grid step must be positive")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def _params_at(cfg: StudyConfig, sweep: Sweep, value: float) -> EptParams:
    b, lam, a1 = cfg.b, cfg.lam, cfg.a1
    if sweep is Sweep.A1:
        a1 = value
    elif sweep is Sweep.LAMBDA:
        lam = value
    else:
        b = value
    w = WeightFn(a1, cfg.a0)
    return EptParams(b=b, lam=lam, alpha=0.0, w1=w, w2=w)


def _make_pair(cfg: StudyConfig, index: int):
    rng = np.random.default_rng(derive_seed(cfg.seed, index))
    k = cfg.support_size
    points = rng.uniform(0.0, cfg.scale, size=(2 * k, cfg.dim))
    masses = rng.uniform(0.0, 1.0, size=2 * k)
    tree_cfg = replace(cfg.sampling, seed=derive_seed(cfg.seed ^ 0x5EED, index))
    tree, assign = sample_tree(points, tree_cfg)
    a = np.where(np.arange(2 * k) < k, masses, 0.0)
    b = np.where(np.arange(2 * k) >= k, masses, 0.0)
    n = tree.node_count
    return tree, measure_on_sampled_tree(assign, a, n), measure_on_sampled_tree(assign, b, n)


def _pair_diffs(cfg: StudyConfig, params: list, index: int) -> np.ndarray:
    """Rows ``(exact, regularized)`` for each grid value on one pair."""
    tree, mu, nu = _make_pair(cfg, index)
    out = np.empty((len(params), 2))
    for g, p in enumerate(params):
        out[g] = exact_ept(tree, mu, nu, p), regularized_ept(tree, mu, nu, p)
    return out


def run_study(cfg: StudyConfig, sweep: Sweep, grid: list, workers: int = 1) -> list[StudyRow]:
    """One :class:`StudyRow` per grid value, in grid order."""
    sweep = Sweep(sweep)
    if not grid:
        raise ParameterError("empty grid")
    if cfg.pairs < 1 or cfg.support_size < 1 or cfg.dim < 1:
        raise ParameterError("pairs, support size and dimension must be positive")
    params = [_params_at(cfg, sweep, v) for v in grid]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_pair = list(pool.map(lambda i: _pair_diffs(cfg, params, i), range(cfg.pairs)))
    else:
        per_pair = [_pair_diffs(cfg, params, i) for i in range(cfg.pairs)]
    values = np.stack(per_pair)  # (pairs, grid, 2)

    rows = []
    for g, v in enumerate(grid):
        exact, reg = values[:, g, 0], values[:, g, 1]
        diff = reg - exact
        pos = exact > DENOM_EPS
        rel = np.where(pos, diff / np.where(pos, exact, 1.0), diff)
        big = np.abs(exact) > DENOM_EPS
        abs_rel = np.where(big, np.abs(diff) / np.where(big, np.abs(exact), 1.0), np.abs(diff))
        rows.append(
            StudyRow(
                sweep_variable=sweep,
                value=float(v),
                mean_rel_diff=float(rel.mean()),
                mean_abs_rel_diff=float(abs_rel.mean()),
                pair_count=cfg.pairs,
                fallback_count=int((~pos).sum()),
            )
        )
    return rows


def write_rows(rows, fh) -> None:
    fh.write(",".join(STUDY_FIELDS) + "\n")
    for row in rows:
        fh.write(row.as_csv() + "\n")
