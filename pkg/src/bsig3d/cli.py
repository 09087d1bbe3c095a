"""Command-line front end: ``keypoints``, ``describe``, ``match`` and ``bench``.

Data goes to files; diagnostics go to stderr. Exit status is 0 on success,
1 for usage errors and 2 when the input data cannot be processed.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

from .cloud_io import load_cloud
from .errors import BsigError, ParameterError
from .evaluation import DescriptorParams, MatcherParams, SceneRecipe, run_benchmark
from .geometry import estimate_normals
from .keypoints import detect_iss, load_keypoints, save_keypoints
from .matching import as_matrix, brute_force_match, build_forest, search_batch
from .signature import describe, read_descriptors, write_descriptors

log = logging.getLogger("bsig3d")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_descriptor_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-neighbors", type=int, default=32, help="neighbours per signature (default 32)")
    p.add_argument("--theta-degrees", type=float, default=90.0, help="angle constraint (default 90)")
    p.add_argument("--normal-k", type=int, default=10, help="k for normal estimation when the input has none")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)


def _add_forest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int, default=3)
    p.add_argument("--branching", type=int, default=16)
    p.add_argument("--max-leaf", type=int, default=150)
    p.add_argument("--seed", type=int, default=42)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bsig3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("keypoints", help="detect ISS keypoints and write their indices as CSV")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--salient-radius", type=float, help="absolute radius (default 6 mesh resolutions)")
    p.add_argument("--nms-radius", type=float, help="absolute radius (default 4 mesh resolutions)")
    p.add_argument("--gamma21", type=float, default=0.975)
    p.add_argument("--gamma32", type=float, default=0.975)
    p.add_argument("--min-neighbors", type=int, default=5)

    p = sub.add_parser("describe", help="write binary signatures for the given keypoints")
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--keypoints", required=True, type=Path)
    p.add_argument("--output", required=True, type=Path)
    _add_descriptor_flags(p)

    p = sub.add_parser("match", help="match query descriptors against target descriptors")
    p.add_argument("--input", required=True, type=Path, help="query descriptor file")
    p.add_argument("--targets", required=True, type=Path, help="target descriptor file")
    p.add_argument("--output", required=True, type=Path)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--max-checks", type=int)
    p.add_argument("--exact", action="store_true", help="linear scan instead of the forest")
    _add_forest_flags(p)

    p = sub.add_parser("bench", help="run the matching benchmark on synthetic scenes")
    p.add_argument("--input", nargs="+", type=Path, help="model clouds (default: synthetic blobs)")
    p.add_argument("--synthetic", type=int, default=2, help="number of synthetic blobs without --input")
    p.add_argument("--points", type=int, default=3000, help="points per synthetic blob")
    p.add_argument("--output", required=True, type=Path, help="report JSON")
    p.add_argument("--pr-csv", type=Path, help="PR curve CSV (default: next to the JSON)")
    p.add_argument("--rotation", choices=("identity", "random"), default="identity")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="noise std in mesh resolutions")
    p.add_argument("--keep-fraction", type=float, default=1.0)
    p.add_argument("--knobs", type=int, nargs="+", help="max_checks sweep (default: doubling)")
    p.add_argument("--k", type=int, default=1)
    _add_descriptor_flags(p)
    _add_forest_flags(p)
    return parser


def _check_args(args) -> None:
    """Reject bad flag values before anything is read or written."""
    if hasattr(args, "n_neighbors") and args.n_neighbors < 2:
        raise UsageError("--n-neighbors must be >= 2")
    if hasattr(args, "theta_degrees") and not 0 < args.theta_degrees <= 180:
        raise UsageError("--theta-degrees must lie in (0, 180]")
    if hasattr(args, "normal_k") and args.normal_k < 3:
        raise UsageError("--normal-k must be >= 3")
    if hasattr(args, "trees"):
        if args.trees < 1:
            raise UsageError("--trees must be >= 1")
        if args.branching < 2:
            raise UsageError("--branching must be >= 2")
        if args.max_leaf < args.branching:
            raise UsageError("--max-leaf must be >= --branching")
    if hasattr(args, "k") and args.k < 1:
        raise UsageError("--k must be >= 1")
    if args.command == "match":
        if args.exact and args.max_checks is not None:
            raise UsageError("--exact and --max-checks are mutually exclusive")
        if args.max_checks is not None and args.max_checks < args.k:
            raise UsageError("--max-checks must be >= --k")
    if args.command == "keypoints":
        for name in ("salient_radius", "nms_radius"):
            value = getattr(args, name)
            if value is not None and value <= 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if not (0 < args.gamma21 < 1 and 0 < args.gamma32 < 1):
            raise UsageError("--gamma21/--gamma32 must lie in (0, 1)")
        if args.min_neighbors < 5:
            raise UsageError("--min-neighbors must be >= 5")
    if args.command == "bench":
        if args.noise_sigma < 0:
            raise UsageError("--noise-sigma must be >= 0")
        if not 0 < args.keep_fraction <= 1:
            raise UsageError("--keep-fraction must lie in (0, 1]")
        if args.knobs is not None:
            if any(b <= a for a, b in zip(args.knobs, args.knobs[1:])):
                raise UsageError("--knobs must be strictly increasing")
            if args.knobs[0] < args.k:
                raise UsageError("every knob must be >= --k")
        if args.input is None and (args.synthetic < 1 or args.points < 100):
            raise UsageError("--synthetic must be >= 1 and --points >= 100")


def _with_normals(cloud, k: int):
    if cloud.has_normals:
        return cloud
    log.info("estimating normals with k=%d", k)
    return estimate_normals(cloud, k=k)


def cmd_keypoints(args) -> int:
    cloud = load_cloud(args.input)
    kps = detect_iss(
        cloud,
        salient_radius=args.salient_radius,
        nms_radius=args.nms_radius,
        gamma21=args.gamma21,
        gamma32=args.gamma32,
        min_neighbors=args.min_neighbors,
    )
    if kps.warning:
        print(f"warning: {kps.warning}", file=sys.stderr)
    save_keypoints(args.output, kps)
    log.info("%d keypoints written to %s", len(kps), args.output)
    return EXIT_OK


def cmd_describe(args) -> int:
    cloud = _with_normals(load_cloud(args.input), args.normal_k)
    kps = load_keypoints(args.keypoints, cloud)
    sigs, skipped = describe(
        cloud, kps.indices, args.n_neighbors, math.radians(args.theta_degrees), threads=args.threads
    )
    for kp, reason in skipped:
        print(f"skipped keypoint {kp}: {reason}", file=sys.stderr)
    write_descriptors(args.output, sigs, args.n_neighbors)
    log.info("%d signatures written to %s", len(sigs), args.output)
    return EXIT_OK


def cmd_match(args) -> int:
    n_q, queries = read_descriptors(args.input)
    n_t, targets = read_descriptors(args.targets)
    if n_q != n_t:
        raise ParameterError(
            f"descriptor lengths differ: {args.input} has N={n_q}, {args.targets} has N={n_t}"
        )
    rows = []
    if queries and targets:
        if args.exact:
            results = brute_force_match(queries, targets, args.k)
        else:
            forest = build_forest(targets, args.trees, args.branching, args.max_leaf, args.seed)
            results, _ = search_batch(forest, as_matrix(queries), args.k, args.max_checks)
        for sig, matches in zip(queries, results):
            for m in matches:
                rows.append((sig.keypoint_index, targets[m.target_id].keypoint_index, m.distance))
    elif not targets:
        print("warning: no target descriptors; writing an empty match file", file=sys.stderr)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "target_id", "distance"])
        w.writerows(rows)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.input:
        models = [load_cloud(p) for p in args.input]
    else:
        from .synthetic import blob

        models = [blob(args.points, seed=args.seed + i) for i in range(args.synthetic)]
    pr_csv = args.pr_csv or args.output.with_suffix(".pr.csv")
    # fail on unwritable destinations before the (slow) benchmark runs
    for path in (args.output, pr_csv):
        if not path.parent.is_dir():
            raise OSError(f"cannot write {path}: directory does not exist")
    report = run_benchmark(
        models,
        SceneRecipe(args.rotation, None, args.noise_sigma, args.keep_fraction, args.seed),
        DescriptorParams(
            n_neighbors=args.n_neighbors,
            theta=math.radians(args.theta_degrees),
            normal_k=args.normal_k,
            threads=args.threads,
        ),
        MatcherParams(args.trees, args.branching, args.max_leaf, args.seed, args.k),
        args.knobs,
    )
    report.write_json(args.output)
    report.write_pr_csv(pr_csv)
    print(f"auc {report.auc:.6f}  compactness {report.compactness:.6g}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "keypoints": cmd_keypoints,
    "describe": cmd_describe,
    "match": cmd_match,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _check_args(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bsig3d {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BsigError, OSError) as exc:
        print(f"bsig3d {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
