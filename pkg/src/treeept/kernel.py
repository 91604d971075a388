"""Tree-sliced distances and exponential kernels built on them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .closed_form import pairwise_d_alpha
from .params import EptParams
from .sampling import TreeEnsemble

__all__ = [
    "Which",
    "KernelError",
    "GramMatrix",
    "sliced_distance",
    "sliced_distance_matrix",
    "quantile_bandwidth",
    "gram_matrix",
    "gram_from_distances",
    "psd_check",
    "regularize_diagonal",
]

SYMMETRY_TOL = 1e-12


class KernelError(ValueError):
    pass


class Which(str, enum.Enum):
    D_ALPHA = "dalpha"
    REGULARIZED_EPT = "ept"


def sliced_distance_matrix(
    ens: TreeEnsemble, mass_vectors, p: EptParams, which: Which = Which.D_ALPHA
) -> np.ndarray:
    """Average over slices of the all-pairs distance between point-mass vectors.

    ``mass_vectors`` has one row per measure and one column per point of the
    ensemble's universe.
    """
    which = Which(which)
    mv = np.atleast_2d(np.asarray(mass_vectors, dtype=np.float64))
    if np.any(mv < 0):
        raise KernelError("point masses must be nonnegative")
    total = np.zeros((mv.shape[0], mv.shape[0]))
    for s in range(ens.n_slices):
        total += pairwise_d_alpha(ens.trees[s], ens.dense_masses(s, mv), p)
    out = total / ens.n_slices
    if which is Which.REGULARIZED_EPT:
        m = mv.sum(axis=1)
        out = out - 0.5 * p.b * p.lam * (m[:, None] + m[None, :])
    return out


def sliced_distance(
    ens: TreeEnsemble, point_masses_a, point_masses_b, p: EptParams, which: Which = Which.D_ALPHA
) -> float:
    """Mean over the ensemble's trees of ``d_alpha`` (or regularized EPT)."""
    return float(
        sliced_distance_matrix(ens, np.vstack([point_masses_a, point_masses_b]), p, which)[0, 1]
    )


def quantile_bandwidth(distances, s: int) -> float:
    """``t = 1 / q_s`` with ``q_s`` the nearest-rank ``s``-th percentile.

    >>> quantile_bandwidth(range(1, 11), 50)
    0.2
    """
    if s not in (10, 20, 50):
        raise KernelError(f"percent must be one of 10, 20, 50, got {s}")
    d = np.sort(np.asarray(list(distances), dtype=np.float64).ravel())
    if d.size == 0:
        raise KernelError("empty distance sample")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise KernelError("distances must be finite and nonnegative")
    rank = max(1, math.ceil(s * d.size / 100))
    q = float(d[rank - 1])
    if q <= 0:
        raise KernelError(
            f"the {s}% quantile of the distances is 0; use a larger percent or a "
            "sample with more distinct measures"
        )
    return 1.0 / q


@dataclass(frozen=True, eq=False)
class GramMatrix:
    values: np.ndarray
    bandwidth_t: float
    min_eigenvalue: float
    diagonal_shift: float = 0.0


def _min_eig(values: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(values)[0])


def gram_from_distances(distances, t: float) -> GramMatrix:
    """``exp(-t * D)`` with its smallest eigenvalue."""
    if not t > 0:
        raise KernelError(f"bandwidth t must be positive, got {t}")
    D = np.asarray(distances, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise KernelError("distance matrix must be square")
    K = np.exp(-t * D)
    K = 0.5 * (K + K.T)
    return GramMatrix(K, float(t), _min_eig(K))


def gram_matrix(
    ens: TreeEnsemble, mass_vectors, p: EptParams, t: float, which: Which = Which.D_ALPHA
) -> GramMatrix:
    """Kernel matrix ``exp(-t * sliced distance)`` over a family of measures."""
    return gram_from_distances(sliced_distance_matrix(ens, mass_vectors, p, which), t)


def psd_check(g, tol: float = 1e-8) -> bool:
    """True iff the smallest eigenvalue is at least ``-tol``."""
    values = g.values if isinstance(g, GramMatrix) else np.asarray(g, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise KernelError("matrix must be square")
    scale = max(1.0, float(np.abs(values).max())) if values.size else 1.0
    if np.abs(values - values.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise KernelError("matrix is not symmetric")
    return _min_eig(values) >= -tol


def regularize_diagonal(g: GramMatrix, margin: float = 1e-10) -> GramMatrix:
    """Shift the diagonal just enough to make an indefinite Gram matrix PSD.

    A no-op for matrices that are already PSD.
    """
    shift = max(0.0, -g.min_eigenvalue + margin) if g.min_eigenvalue < 0 else 0.0
    if shift == 0.0:
        return g
    values = g.values + shift * np.eye(g.values.shape[0])
    return GramMatrix(values, g.bandwidth_t, _min_eig(values), g.diagonal_shift + shift)
