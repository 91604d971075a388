"""Random tree metrics built from point clouds.

Two schemes:

* clustering-based: recursive farthest-point clustering into ``branching``
  groups per node, for high-dimensional points;
* partition-based: recursive axis-aligned halving of a randomly shifted
  bounding cube (``2**d`` cells per split), for low-dimensional points.

Both stop splitting a group at level ``depth`` or once it holds a single
distinct point. Edge lengths are Euclidean distances between the
representatives of parent and child.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tree import RootedTree, TreeMeasure, build_tree

__all__ = [
    "Scheme",
    "SamplingConfig",
    "SamplingError",
    "TreeEnsemble",
    "as_point_cloud",
    "derive_seed",
    "sample_tree",
    "sample_ensemble",
    "measure_on_sampled_tree",
]

MAX_PARTITION_DIM = 10


class SamplingError(ValueError):
    """Bad point cloud or sampling configuration."""


class Scheme(str, enum.Enum):
    CLUSTERING = "clustering"
    PARTITION = "partition"


@dataclass(frozen=True)
class SamplingConfig:
    scheme: Scheme = Scheme.CLUSTERING
    depth: int = 6
    branching: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if int(self.depth) != self.depth or self.depth < 1:
            raise SamplingError(f"depth must be a positive integer, got {self.depth}")
        if self.scheme is Scheme.CLUSTERING and (
            int(self.branching) != self.branching or self.branching < 2
        ):
            raise SamplingError(f"branching must be an integer >= 2, got {self.branching}")


def as_point_cloud(points) -> np.ndarray:
    """Validate and return points as a float (n, d) array."""
    try:
        arr = np.asarray(points, dtype=np.float64)
    except ValueError:
        raise SamplingError("points must all have the same dimension") from None
    if arr.ndim == 1 and arr.size:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise SamplingError("point cloud must be a nonempty (n, d) array")
    if not np.all(np.isfinite(arr)):
        raise SamplingError("point coordinates must be finite")
    return arr


def derive_seed(seed: int, index: int) -> int:
    """Child seed for slice ``index`` of an ensemble seeded with ``seed``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _has_two_distinct(pts: np.ndarray) -> bool:
    return bool(np.any(pts != pts[0]))


def _farthest_point_clusters(pts: np.ndarray, k: int, rng: np.random.Generator):
    """Greedy k-center: returns (center indices, labels into centers)."""
    first = int(rng.integers(pts.shape[0]))
    centers = [first]
    dmin = np.linalg.norm(pts - pts[first], axis=1)
    labels = np.zeros(pts.shape[0], dtype=np.int64)
    while len(centers) < k:
        j = int(np.argmax(dmin))  # lowest index on ties
        if dmin[j] == 0:
            break
        d = np.linalg.norm(pts - pts[j], axis=1)
        closer = d < dmin
        labels[closer] = len(centers)
        dmin = np.where(closer, d, dmin)
        centers.append(j)
    return centers, labels


class _Builder:
    def __init__(self, dim: int):
        self.parents: list = []
        self.lengths: list = []
        self.reps: list = []
        self.dim = dim

    def add(self, parent: Optional[int], rep: np.ndarray) -> int:
        self.parents.append(parent)
        self.lengths.append(
            0.0 if parent is None else float(np.linalg.norm(rep - self.reps[parent]))
        )
        self.reps.append(np.asarray(rep, dtype=np.float64))
        return len(self.parents) - 1

    def tree(self) -> RootedTree:
        return build_tree(self.parents, self.lengths, np.vstack(self.reps))


def _sample_clustering(pts, cfg, rng):
    n = pts.shape[0]
    builder = _Builder(pts.shape[1])
    assignment = np.empty(n, dtype=np.int64)
    whole = np.arange(n)
    root_rep = pts.mean(axis=0) if _has_two_distinct(pts) else pts[0]
    queue = [(builder.add(None, root_rep), whole, 0)]
    head = 0
    while head < len(queue):
        node, idx, level = queue[head]
        head += 1
        sub = pts[idx]
        if level >= cfg.depth or not _has_two_distinct(sub):
            assignment[idx] = node
            continue
        centers, labels = _farthest_point_clusters(sub, cfg.branching, rng)
        for c, center in enumerate(centers):
            members = idx[labels == c]
            child = builder.add(node, sub[center])
            queue.append((child, members, level + 1))
    return builder.tree(), assignment


def _sample_partition(pts, cfg, rng):
    n, dim = pts.shape
    if dim > MAX_PARTITION_DIM:
        raise SamplingError(
            f"partition scheme supports dimension <= {MAX_PARTITION_DIM}, got {dim}"
        )
    builder = _Builder(dim)
    assignment = np.empty(n, dtype=np.int64)
    whole = np.arange(n)
    if not _has_two_distinct(pts):
        assignment[:] = builder.add(None, pts[0])
        return builder.tree(), assignment

    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    # shifted cube of side 2*extent still covers every point
    shift = rng.uniform(0.0, extent, size=dim)
    side = 2.0 * extent
    origin = lo - shift
    queue = [(builder.add(None, origin + 0.5 * side), whole, 0, origin, side)]
    powers = 1 << np.arange(dim)
    head = 0
    while head < len(queue):
        node, idx, level, corner, width = queue[head]
        head += 1
        sub = pts[idx]
        if level >= cfg.depth or not _has_two_distinct(sub):
            assignment[idx] = node
            continue
        half = 0.5 * width
        bits = (sub - corner) >= half
        codes = bits.astype(np.int64) @ powers
        for code in np.unique(codes):
            members = idx[codes == code]
            child_corner = corner + half * ((int(code) & powers) > 0)
            child = builder.add(node, child_corner + 0.5 * half)
            queue.append((child, members, level + 1, child_corner, half))
    return builder.tree(), assignment


def sample_tree(cloud, cfg: SamplingConfig) -> tuple[RootedTree, np.ndarray]:
    """Sample one tree metric from a point cloud.

    Returns the tree (nodes numbered breadth-first, root ``0``) and, for each
    point, the deepest node whose group contains it. The result depends only
    on ``(cloud, cfg)``.
    """
    pts = as_point_cloud(cloud)
    rng = np.random.default_rng(int(cfg.seed) & 0xFFFFFFFFFFFFFFFF)
    if cfg.scheme is Scheme.CLUSTERING:
        return _sample_clustering(pts, cfg, rng)
    return _sample_partition(pts, cfg, rng)


def measure_on_sampled_tree(
    assignment: Sequence[int], masses: Sequence[float], node_count: Optional[int] = None
) -> TreeMeasure:
    """Lift per-point masses to the nodes the points are assigned to."""
    assignment = np.asarray(assignment, dtype=np.int64)
    masses = np.asarray(masses, dtype=np.float64)
    if assignment.shape != masses.shape:
        raise SamplingError(
            f"{masses.size} masses for {assignment.size} assigned points"
        )
    if np.any(masses < 0):
        raise SamplingError("point masses must be nonnegative")
    size = node_count if node_count is not None else (int(assignment.max()) + 1 if assignment.size else 0)
    return TreeMeasure.from_dense(np.bincount(assignment, weights=masses, minlength=size))


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    """Independently sampled trees over one point universe."""

    trees: tuple
    assignments: tuple
    seeds: tuple
    config: SamplingConfig
    n_points: int

    @property
    def n_slices(self) -> int:
        return len(self.trees)

    def lift(self, slice_index: int, masses) -> TreeMeasure:
        masses = np.asarray(masses, dtype=np.float64)
        if masses.shape != (self.n_points,):
            raise SamplingError(
                f"mass vector has shape {masses.shape}, ensemble has {self.n_points} points"
            )
        t = self.trees[slice_index]
        return measure_on_sampled_tree(self.assignments[slice_index], masses, t.node_count)

    def dense_masses(self, slice_index: int, mass_vectors: np.ndarray) -> np.ndarray:
        """(node_count, k) node masses for k point-mass vectors given as rows."""
        mv = np.atleast_2d(np.asarray(mass_vectors, dtype=np.float64))
        if mv.shape[1] != self.n_points:
            raise SamplingError(
                f"mass vectors have {mv.shape[1]} entries, ensemble has {self.n_points} points"
            )
        t = self.trees[slice_index]
        out = np.zeros((t.node_count, mv.shape[0]))
        np.add.at(out, self.assignments[slice_index], mv.T)
        return out

    def to_dict(self) -> dict:
        return {
            "n_slices": self.n_slices,
            "n_points": self.n_points,
            "scheme": self.config.scheme.value,
            "depth": self.config.depth,
            "branching": self.config.branching,
            "seed": self.config.seed,
            "slice_seeds": [int(s) for s in self.seeds],
            "trees": [t.to_dict() for t in self.trees],
            "assignments": [[int(v) for v in a] for a in self.assignments],
        }


def sample_ensemble(
    cloud, cfg: SamplingConfig, n_slices: int, workers: int = 1
) -> TreeEnsemble:
    """Sample ``n_slices`` trees, slice ``i`` seeded with ``derive_seed(cfg.seed, i)``."""
    if int(n_slices) != n_slices or n_slices < 1:
        raise SamplingError(f"n_slices must be a positive integer, got {n_slices}")
    pts = as_point_cloud(cloud)
    seeds = [derive_seed(cfg.seed, i) for i in range(n_slices)]
    cfgs = [SamplingConfig(cfg.scheme, cfg.depth, cfg.branching, s) for s in seeds]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: sample_tree(pts, c), cfgs))
    else:
        results = [sample_tree(pts, c) for c in cfgs]
    for _, a in results:
        a.setflags(write=False)
    return TreeEnsemble(
        trees=tuple(t for t, _ in results),
        assignments=tuple(a for _, a in results),
        seeds=tuple(seeds),
        config=cfg,
        n_points=pts.shape[0],
    )
