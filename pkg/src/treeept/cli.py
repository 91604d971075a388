"""Command-line interface.

Exit codes: 0 success, 2 unreadable or malformed input, 3 invalid parameter
or domain error, 4 diagnostic failure (Gram matrix not PSD).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .closed_form import d_alpha, pairwise_d_alpha, regularized_ept
from .exact import calibrate_lambda, exact_ept, partial_transport_value
from .io import FormatError, read_measure_csv, read_points_csv, read_tree_json
from .kernel import (
    KernelError,
    Which,
    gram_from_distances,
    psd_check,
    quantile_bandwidth,
    sliced_distance_matrix,
)
from .params import EptParams, ParameterError, WeightFn
from .sampling import SamplingConfig, SamplingError, sample_ensemble
from .study import StudyConfig, Sweep, parse_grid, run_study, write_rows
from .tree import TreeError

EXIT_IO = 2
EXIT_PARAM = 3
EXIT_DIAGNOSTIC = 4
THREADS_ENV = "TREEEPT_THREADS"
PSD_TOL = 1e-8


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _fmt(x: float) -> str:
    return repr(float(x))


def _add_params(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem parameters")
    g.add_argument("--b", type=float, default=1.0, help="transport/entropy balance (default 1)")
    g.add_argument("--lambda", dest="lam", type=float, default=1.0, help="multiplier (default 1)")
    g.add_argument("--alpha", type=float, default=0.0, help="regularization offset (default 0)")
    g.add_argument("--a1", type=float, default=0.0, help="weight slope in root distance")
    g.add_argument("--a0", type=float, default=1.0, help="weight offset")


def _add_sampling(p: argparse.ArgumentParser, slices: bool = True) -> None:
    g = p.add_argument_group("tree sampling")
    g.add_argument("--scheme", choices=["clustering", "partition"], default="clustering")
    g.add_argument("--depth", type=int, default=6, help="deepest tree level (default 6)")
    g.add_argument("--branching", type=int, default=4, help="clusters per split (default 4)")
    if slices:
        g.add_argument("--slices", type=int, default=10, help="number of sampled trees")
    g.add_argument("--seed", type=int, default=None, help="random seed (required when sampling)")


def _params(args) -> EptParams:
    w = WeightFn(args.a1, args.a0)
    return EptParams(b=args.b, lam=args.lam, alpha=args.alpha, w1=w, w2=w)


def _sampling(args) -> SamplingConfig:
    if args.seed is None:
        raise CliError("--seed is required for commands that sample trees", EXIT_IO)
    return SamplingConfig(args.scheme, args.depth, args.branching, args.seed)


def _read_clouds(paths, mass_column: bool):
    """Stack point files into one universe; one mass vector per file."""
    clouds, masses = [], []
    for path in paths:
        pts, m = read_points_csv(path, mass_column)
        clouds.append(pts)
        masses.append(np.ones(pts.shape[0]) if m is None else m)
    dims = {c.shape[1] for c in clouds}
    if len(dims) != 1:
        raise FormatError(f"point files have differing dimensions {sorted(dims)}")
    universe = np.vstack(clouds)
    vectors = np.zeros((len(clouds), universe.shape[0]))
    start = 0
    for i, m in enumerate(masses):
        vectors[i, start : start + m.size] = m
        start += m.size
    return universe, vectors


def cmd_dist(args) -> int:
    p = _params(args)
    mode = args.mode
    if args.tree:
        if len(args.measure or []) != 2:
            raise CliError("--tree needs exactly two --measure files", EXIT_IO)
        t = read_tree_json(args.tree)
        mu, nu = (read_measure_csv(m) for m in args.measure)
        fn = {"dalpha": d_alpha, "ept": regularized_ept, "exact": exact_ept}[mode]
        value = fn(t, mu, nu, p)
    else:
        if len(args.points or []) != 2:
            raise CliError("give either --tree with two --measure or two --points files", EXIT_IO)
        universe, vectors = _read_clouds(args.points, args.mass_column)
        cfg = _sampling(args)
        n_slices = 1 if mode == "exact" else args.slices
        ens = sample_ensemble(universe, cfg, n_slices, workers=_threads())
        if mode == "exact":
            t = ens.trees[0]
            value = exact_ept(t, ens.lift(0, vectors[0]), ens.lift(0, vectors[1]), p)
        else:
            which = Which.D_ALPHA if mode == "dalpha" else Which.REGULARIZED_EPT
            value = sliced_distance_matrix(ens, vectors, p, which)[0, 1]
    print(_fmt(value))
    return 0


def _manifest(path: str) -> list:
    base = Path(path).parent
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                entry = Path(line)
                entries.append(entry if entry.is_absolute() else base / entry)
    if not entries:
        raise FormatError(f"{path}: manifest lists no files")
    return entries


def cmd_gram(args) -> int:
    p = _params(args)
    which = Which.D_ALPHA if args.mode == "dalpha" else Which.REGULARIZED_EPT
    files = _manifest(args.manifest)
    labels = [f.stem for f in files]
    seed = None
    n_slices = 1
    if args.tree:
        t = read_tree_json(args.tree)
        measures = [read_measure_csv(f) for f in files]
        for m in measures:
            m.check_on(t)
        dense = np.column_stack([m.dense(t.node_count) for m in measures])
        D = pairwise_d_alpha(t, dense, p)
        if which is Which.REGULARIZED_EPT:
            tot = dense.sum(axis=0)
            D = D - 0.5 * p.b * p.lam * (tot[:, None] + tot[None, :])
    else:
        universe, vectors = _read_clouds(files, args.mass_column)
        cfg = _sampling(args)
        seed, n_slices = cfg.seed, args.slices
        ens = sample_ensemble(universe, cfg, n_slices, workers=_threads())
        D = sliced_distance_matrix(ens, vectors, p, which)

    if args.t is not None:
        t_value = args.t
    else:
        iu = np.triu_indices(D.shape[0], 1)
        if iu[0].size == 0:
            raise CliError("bandwidth quantile needs at least two measures; pass --t", EXIT_PARAM)
        t_value = quantile_bandwidth(D[iu], args.bandwidth_quantile)
    g = gram_from_distances(D, t_value)
    ok = psd_check(g, PSD_TOL)

    out = Path(args.out)
    with open(out, "w") as fh:
        fh.write(",".join(labels) + "\n")
        for row in g.values:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    sidecar = {
        "t": g.bandwidth_t,
        "n_slices": n_slices,
        "seed": seed,
        "min_eigenvalue": g.min_eigenvalue,
        "psd": ok,
        "mode": which.value,
        "bandwidth_quantile": None if args.t is not None else args.bandwidth_quantile,
        "labels": labels,
    }
    with open(out.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    if not ok:
        print(f"Gram matrix is not PSD: min eigenvalue {g.min_eigenvalue:.3e}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    return 0


def cmd_calibrate(args) -> int:
    p = _params(args)
    t = read_tree_json(args.tree)
    if len(args.measure or []) != 2:
        raise CliError("calibrate needs exactly two --measure files", EXIT_IO)
    mu, nu = (read_measure_csv(m) for m in args.measure)
    cal = calibrate_lambda(t, mu, nu, p, args.target_mass, tol=args.tol)
    value = partial_transport_value(t, mu, nu, p, args.target_mass, tol=args.tol)
    print(f"lambda {_fmt(cal.lam)}")
    print(f"mass_interval {_fmt(cal.mass_interval[0])} {_fmt(cal.mass_interval[1])}")
    print(f"W {_fmt(value)}")
    return 0


def cmd_approx_study(args) -> int:
    if args.seed is None:
        raise CliError("--seed is required for approx-study", EXIT_IO)
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_PARAM) from None
    if not grid:
        raise CliError(f"grid {args.grid!r} is empty", EXIT_PARAM)
    cfg = StudyConfig(
        pairs=args.pairs,
        support_size=args.support_size,
        dim=args.dim,
        seed=args.seed,
        scale=args.scale,
        sampling=SamplingConfig(args.scheme, args.depth, args.branching, args.seed),
        b=args.b,
        lam=args.lam,
        a1=args.a1,
        a0=args.a0,
    )
    rows = run_study(cfg, Sweep(args.sweep), grid, workers=_threads())
    if args.out:
        with open(args.out, "w") as fh:
            write_rows(rows, fh)
    else:
        write_rows(rows, sys.stdout)
    return 0


def cmd_sample_trees(args) -> int:
    universe, _ = _read_clouds(args.points, args.mass_column)
    ens = sample_ensemble(universe, _sampling(args), args.slices, workers=_threads())
    text = json.dumps(ens.to_dict())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeept", description="Entropy partial transport on tree metrics."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="distance between two measures")
    p.add_argument("--tree", help="tree JSON; measures are then node_id,mass CSVs")
    p.add_argument("--measure", action="append", help="measure CSV (twice)")
    p.add_argument("--points", action="append", help="point CSV (twice)")
    p.add_argument("--mass-column", action="store_true", help="last CSV column is a point mass")
    p.add_argument("--mode", choices=["dalpha", "ept", "exact"], default="dalpha")
    _add_sampling(p)
    _add_params(p)
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("gram", help="kernel Gram matrix over a manifest of measures")
    p.add_argument("--manifest", required=True, help="one measure or point file per line")
    p.add_argument("--tree", help="tree JSON; manifest files are then measure CSVs")
    p.add_argument("--mass-column", action="store_true")
    p.add_argument("--mode", choices=["dalpha", "ept"], default="dalpha")
    bw = p.add_mutually_exclusive_group(required=True)
    bw.add_argument("--bandwidth-quantile", type=int, choices=[10, 20, 50])
    bw.add_argument("--t", type=float, help="kernel bandwidth t > 0")
    p.add_argument("--out", required=True, help="Gram CSV path; sidecar JSON goes next to it")
    _add_sampling(p)
    _add_params(p)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("calibrate", help="multiplier for a target transported mass")
    p.add_argument("--tree", required=True)
    p.add_argument("--measure", action="append")
    p.add_argument("--target-mass", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    _add_params(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("approx-study", help="closed form versus exact value on synthetic pairs")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--support-size", type=int, default=10)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--scale", type=float, default=1.0, help="side of the sampling cube")
    p.add_argument("--sweep", choices=[s.value for s in Sweep], required=True)
    p.add_argument("--grid", required=True, help="lo:step:hi, inclusive")
    p.add_argument("--out", help="CSV path (default stdout)")
    _add_sampling(p, slices=False)
    _add_params(p)
    p.set_defaults(func=cmd_approx_study)

    p = sub.add_parser("sample-trees", help="dump a sampled tree ensemble as JSON")
    p.add_argument("--points", action="append", required=True)
    p.add_argument("--mass-column", action="store_true")
    p.add_argument("--out")
    _add_sampling(p)
    p.set_defaults(func=cmd_sample_trees)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, SamplingError, KernelError, TreeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
