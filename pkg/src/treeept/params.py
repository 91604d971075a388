"""Problem parameters shared by the closed form and the exact oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .tree import RootedTree

__all__ = ["ParameterError", "WeightFn", "EptParams"]


class ParameterError(ValueError):
    """A parameter violates its admissible range."""


@dataclass(frozen=True)
class WeightFn:
    """Affine weight in the root distance: ``w(x) = a1 * d_T(r, x) + a0``."""

    a1: float = 0.0
    a0: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.a1) and math.isfinite(self.a0)):
            raise ParameterError("weight coefficients must be finite")
        if self.a1 < 0:
            raise ParameterError(f"weight slope a1={self.a1} must be >= 0")
        if self.a0 < 0:
            raise ParameterError(f"weight offset a0={self.a0} must be >= 0")

    @property
    def at_root(self) -> float:
        return self.a0

    def __call__(self, t: RootedTree, x: int) -> float:
        return self.a1 * float(t.depth_to_root[t.check_node(x)]) + self.a0

    def values(self, t: RootedTree, nodes=None) -> np.ndarray:
        d = t.depth_to_root if nodes is None else t.depth_to_root[np.asarray(nodes, dtype=np.int64)]
        return self.a1 * d + self.a0


@dataclass(frozen=True)
class EptParams:
    """Parameters ``b``, ``lam``, ``alpha`` and the two weights.

    The constructor enforces ``b > 0``, ``lam >= 0``, ``alpha >= 0``,
    ``alpha <= (b*lam + w1(r) + w2(r)) / 2`` and ``a1 <= b`` for both weights
    (so each weight is b-Lipschitz for the tree metric).
    """

    b: float = 1.0
    lam: float = 1.0
    alpha: float = 0.0
    w1: WeightFn = field(default_factory=WeightFn)
    w2: WeightFn = field(default_factory=WeightFn)

    def __post_init__(self):
        for name in ("b", "lam", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if self.b <= 0:
            raise ParameterError(f"b={self.b} must be > 0")
        if self.lam < 0:
            raise ParameterError(f"lambda={self.lam} must be >= 0")
        if self.alpha < 0:
            raise ParameterError(f"alpha={self.alpha} must be >= 0")
        if self.alpha > self.alpha_max:
            raise ParameterError(
                f"alpha={self.alpha} exceeds (b*lambda + w1(r) + w2(r))/2 = {self.alpha_max}"
            )
        for name, w in (("w1", self.w1), ("w2", self.w2)):
            if w.a1 > self.b:
                raise ParameterError(f"{name} slope a1={w.a1} exceeds b={self.b}")

    @classmethod
    def symmetric(cls, b=1.0, lam=1.0, alpha=0.0, a1=0.0, a0=1.0) -> "EptParams":
        """Equal weights ``w1 = w2 = a1 * d_T(r, .) + a0``."""
        w = WeightFn(a1, a0)
        return cls(b=b, lam=lam, alpha=alpha, w1=w, w2=w)

    @property
    def alpha_max(self) -> float:
        return 0.5 * (self.b * self.lam + self.w1.a0 + self.w2.a0)

    @property
    def metric_alpha_bound(self) -> float:
        """``alpha`` must stay strictly below this for ``d_alpha`` to separate points."""
        return 0.5 * self.b * self.lam + min(self.w1.a0, self.w2.a0)

    @property
    def is_metric_regime(self) -> bool:
        return self.alpha < self.metric_alpha_bound

    def with_alpha(self, alpha: float) -> "EptParams":
        return replace(self, alpha=alpha)

    def with_lambda(self, lam: float) -> "EptParams":
        return replace(self, lam=lam)
