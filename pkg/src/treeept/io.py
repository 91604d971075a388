"""File formats: tree JSON, measure CSV, point-cloud CSV.

Floats are written with ``repr`` so every format round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Optional

import numpy as np

from .tree import RootedTree, TreeError, TreeMeasure, build_tree

__all__ = [
    "FormatError",
    "read_tree_json",
    "write_tree_json",
    "tree_from_dict",
    "read_measure_csv",
    "write_measure_csv",
    "read_points_csv",
    "write_points_csv",
]


class FormatError(ValueError):
    """Malformed input file."""


def tree_from_dict(data: dict) -> RootedTree:
    try:
        parents = data["parents"]
        lengths = data["edge_lengths"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"tree JSON needs 'parents' and 'edge_lengths': {exc}") from None
    return build_tree(parents, lengths, data.get("embedding"))


def read_tree_json(path: str | os.PathLike) -> RootedTree:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    try:
        return tree_from_dict(data)
    except TreeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_tree_json(t: RootedTree, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(t.to_dict(), fh)
        fh.write("\n")


def _rows(path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def read_measure_csv(path: str | os.PathLike) -> TreeMeasure:
    """Read ``node_id,mass`` rows. A non-numeric first row is taken as a header."""
    nodes, masses = [], []
    for lineno, row in _rows(path):
        if len(row) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'node_id,mass', got {row}")
        try:
            node, mass = int(row[0]), float(row[1])
        except ValueError:
            if not nodes and lineno == 1:
                continue
            raise FormatError(f"{path}:{lineno}: cannot parse {row}") from None
        if not np.isfinite(mass) or mass < 0:
            raise FormatError(f"{path}:{lineno}: mass must be finite and nonnegative")
        if node < 0:
            raise FormatError(f"{path}:{lineno}: negative node id")
        nodes.append(node)
        masses.append(mass)
    return TreeMeasure.from_arrays(nodes, masses)


def write_measure_csv(m: TreeMeasure, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for node, mass in zip(m.nodes, m.masses):
            fh.write(f"{int(node)},{float(mass)!r}\n")


def read_points_csv(
    path: str | os.PathLike, mass_column: bool = False
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Read one point per row; with ``mass_column`` the last column is a mass.

    Returns ``(points, masses)`` where ``masses`` is None unless requested.
    """
    rows = []
    for lineno, row in _rows(path):
        try:
            rows.append([float(c) for c in row])
        except ValueError:
            if not rows and lineno == 1:
                continue
            raise FormatError(f"{path}:{lineno}: non-numeric value in {row}") from None
    if not rows:
        raise FormatError(f"{path}: no points")
    width = {len(r) for r in rows}
    if len(width) != 1:
        raise FormatError(f"{path}: rows have differing lengths {sorted(width)}")
    arr = np.asarray(rows)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite value")
    if mass_column:
        if arr.shape[1] < 2:
            raise FormatError(f"{path}: mass column requested but rows have one column")
        masses = arr[:, -1].copy()
        if np.any(masses < 0):
            raise FormatError(f"{path}: negative mass")
        return arr[:, :-1].copy(), masses
    return arr, None


def write_points_csv(points, path: str | os.PathLike, masses=None) -> None:
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w") as fh:
        for i, row in enumerate(pts):
            vals = [repr(float(v)) for v in row]
            if masses is not None:
                vals.append(repr(float(masses[i])))
            fh.write(",".join(vals) + "\n")
