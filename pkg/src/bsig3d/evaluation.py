"""Matching benchmark on synthetic scenes with known ground truth.

A scene is a rigidly moved, optionally noisy and subsampled copy of a model.
Model keypoints are matched against scene keypoints through the clustering
forest. The precision-recall curve is traced by sweeping ``max_checks``, which
sets how exhaustive the approximate search is.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateCurveError, ParameterError
from .geometry import PointCloud, compute_normals, default_viewpoint, mesh_resolution
from .keypoints import detect_iss
from .matching import (
    DEFAULT_BRANCHING,
    DEFAULT_MAX_LEAF,
    DEFAULT_TREES,
    MatchCandidate,
    brute_force_match,
    build_forest,
    hamming_to_rows,
    search,
)
from .signature import describe, float_equivalents, signature_matrix

log = logging.getLogger(__name__)

CORRECT_RADIUS_MR = 2.0


@dataclass
class GroundTruth:
    rotation: np.ndarray
    translation: np.ndarray
    model_id: str = ""
    scene_id: str = ""
    index_map: np.ndarray | None = None  # scene point i came from model point index_map[i]
    correspondences: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ParameterError("ground-truth rotation must be orthonormal with det +1")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


@dataclass
class PRPoint:
    precision: float
    recall: float
    knob: int | None = None
    search_precision: float | None = None
    seconds_per_query: float | None = None


@dataclass
class EvalReport:
    pr_curve: list[PRPoint]
    auc: float
    compactness: float
    timings: dict[str, float]
    params: dict
    skipped: dict[str, list] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pr_curve": [asdict(p) for p in self.pr_curve],
            "auc": self.auc,
            "compactness": self.compactness,
            "timings": self.timings,
            "params": self.params,
            "skipped": self.skipped,
            "counts": self.counts,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_pr_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["knob", "precision", "recall"])
            for p in self.pr_curve:
                w.writerow([p.knob, repr(p.precision), repr(p.recall)])


def synth_scene(
    model: PointCloud,
    rotation=None,
    translation=None,
    noise_sigma: float = 0.0,
    keep_fraction: float = 1.0,
    seed: int = 42,
    mr: float | None = None,
) -> tuple[PointCloud, GroundTruth]:
    """Rigidly transform, jitter (``noise_sigma`` in mesh resolutions) and subsample a model.

    Normals, when present, are rotated along; faces are dropped unless every
    point is kept.
    """
    if len(model) == 0:
        raise ParameterError("model is empty")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    if not 0 < keep_fraction <= 1:
        raise ParameterError("keep_fraction must lie in (0, 1]")
    rotation = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    translation = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
    gt = GroundTruth(rotation, translation, model_id=model.id, scene_id=f"{model.id}-scene{seed}")
    rng = np.random.default_rng(seed)

    n = len(model)
    if keep_fraction < 1.0:
        keep = np.sort(rng.choice(n, size=max(1, int(round(keep_fraction * n))), replace=False))
    else:
        keep = np.arange(n)
    identity = np.array_equal(rotation, np.eye(3)) and not translation.any()
    pts = model.points[keep] if identity else model.points[keep] @ rotation.T + translation
    if noise_sigma > 0:
        if mr is None:
            mr = mesh_resolution(model)
        pts = pts + rng.normal(scale=noise_sigma * mr, size=pts.shape)
    normals = None
    if model.normals is not None:
        normals = model.normals[keep] if identity else model.normals[keep] @ rotation.T
        if not identity:
            normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    faces = model.faces if keep_fraction == 1.0 else None
    gt.index_map = keep
    return PointCloud(pts, normals=normals, faces=faces, id=gt.scene_id), gt


def is_correct_match(
    match: MatchCandidate,
    model_kps: np.ndarray,
    scene_kps: np.ndarray,
    gt: GroundTruth,
    mr: float,
) -> bool:
    """True when the matched scene keypoint lies within 2 mr of the moved model keypoint."""
    moved = gt.apply(np.asarray(model_kps)[match.query_id])
    return bool(np.linalg.norm(moved - np.asarray(scene_kps)[match.target_id]) <= CORRECT_RADIUS_MR * mr)


def precision_recall(flags: Sequence[bool], n_corresponding: int, knob: int | None = None) -> PRPoint:
    """Precision = correct / returned, recall = correct / corresponding.

    With no returned matches precision is taken as 1.0.
    """
    if n_corresponding < 1:
        raise ParameterError("n_corresponding must be >= 1")
    total = len(flags)
    correct = int(np.count_nonzero(flags))
    precision = correct / total if total else 1.0
    return PRPoint(precision, min(correct / n_corresponding, 1.0), knob)


def auc_pr(curve: Sequence[PRPoint]) -> float:
    """Trapezoidal area under precision over recall on [0, max recall].

    Points sharing a recall keep their best precision; below the smallest
    recall the curve is held flat at that point's precision.
    """
    if len(curve) < 2:
        raise DegenerateCurveError("an AUC needs at least two curve points")
    best: dict[float, float] = {}
    for p in curve:
        best[p.recall] = max(best.get(p.recall, -np.inf), p.precision)
    recall = np.array(sorted(best))
    precision = np.array([best[r] for r in recall])
    if recall[0] > 0:
        recall = np.concatenate([[0.0], recall])
        precision = np.concatenate([[precision[0]], precision])
    return float(np.clip(np.trapezoid(precision, recall), 0.0, 1.0))


def compactness(average_auc: float, n_floats: int) -> float:
    if n_floats < 1:
        raise ParameterError("n_floats must be >= 1")
    return average_auc / n_floats


# -- benchmark --------------------------------------------------------------------


@dataclass
class SceneRecipe:
    """How to derive a scene from each model.

    ``rotation`` may be a matrix, ``"identity"`` or ``"random"`` (seeded);
    ``translation`` defaults to zero for identity scenes and to a random offset
    of one bounding diagonal otherwise.
    """

    rotation: object = "identity"
    translation: object = None
    noise_sigma: float = 0.0
    keep_fraction: float = 1.0
    seed: int = 42


@dataclass
class DescriptorParams:
    n_neighbors: int = 32
    theta: float = math.pi / 2
    normal_k: int = 10
    salient_radius_mr: float = 6.0
    nms_radius_mr: float = 4.0
    gamma21: float = 0.975
    gamma32: float = 0.975
    min_neighbors: int = 5
    threads: int = 1


@dataclass
class MatcherParams:
    trees: int = DEFAULT_TREES
    branching: int = DEFAULT_BRANCHING
    max_leaf: int = DEFAULT_MAX_LEAF
    seed: int = 42
    k: int = 1


def _scene_transform(recipe: SceneRecipe, model: PointCloud, rng) -> tuple[np.ndarray, np.ndarray]:
    from .synthetic import random_rotation

    if isinstance(recipe.rotation, str):
        if recipe.rotation == "identity":
            rot = np.eye(3)
        elif recipe.rotation == "random":
            rot = random_rotation(rng)
        else:
            raise ParameterError(f"unknown rotation setting {recipe.rotation!r}")
    else:
        rot = np.asarray(recipe.rotation, dtype=np.float64)
    if recipe.translation is not None:
        trans = np.asarray(recipe.translation, dtype=np.float64)
    elif isinstance(recipe.rotation, str) and recipe.rotation == "identity":
        trans = np.zeros(3)
    else:
        d = rng.normal(size=3)
        trans = model.bounding_diagonal() * d / np.linalg.norm(d)
    return rot, trans


def default_knobs(n_targets: int, k: int = 1) -> list[int]:
    """Doubling ``max_checks`` values from ``k`` up to an exhaustive search."""
    knobs = []
    c = max(k, 1)
    while c < n_targets:
        knobs.append(c)
        c *= 2
    knobs.append(max(n_targets, k))
    return knobs


def run_benchmark(
    models: Sequence[PointCloud],
    recipe: SceneRecipe | None = None,
    descriptor: DescriptorParams | None = None,
    matcher: MatcherParams | None = None,
    knobs: Sequence[int] | None = None,
) -> EvalReport:
    """Detect, describe and match every model against its synthetic scene.

    Counts are pooled over models for each ``max_checks`` knob. Timings are
    wall-clock: description per keypoint, matching per query.
    """
    recipe = recipe or SceneRecipe()
    descriptor = descriptor or DescriptorParams()
    matcher = matcher or MatcherParams()
    if not models:
        raise ParameterError("no models given")
    if knobs is not None:
        knobs = [int(k) for k in knobs]
        if any(b <= a for a, b in zip(knobs, knobs[1:])):
            raise ParameterError("knob values must be strictly increasing")
        if knobs[0] < matcher.k:
            raise ParameterError("every knob must be >= k")

    rng = np.random.default_rng(recipe.seed)
    timings = {k: 0.0 for k in ("normals", "keypoints", "describe", "forest_build")}
    prepared = []
    skipped: dict[str, list] = {}
    n_described = 0
    max_targets = 0

    for mi, model in enumerate(models):
        mr = mesh_resolution(model)
        rot, trans = _scene_transform(recipe, model, rng)
        scene, gt = synth_scene(
            model, rot, trans, recipe.noise_sigma, recipe.keep_fraction, recipe.seed + mi, mr=mr
        )

        t0 = time.perf_counter()
        vp = default_viewpoint(model.points)
        model_n, _ = compute_normals(model, descriptor.normal_k, vp)
        # the scene is observed from the same (moved) viewpoint
        scene_n, _ = compute_normals(scene, descriptor.normal_k, gt.apply(vp))
        model_c, scene_c = model.with_normals(model_n), scene.with_normals(scene_n)
        timings["normals"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        iss = dict(
            salient_radius=descriptor.salient_radius_mr * mr,
            nms_radius=descriptor.nms_radius_mr * mr,
            gamma21=descriptor.gamma21,
            gamma32=descriptor.gamma32,
            min_neighbors=descriptor.min_neighbors,
        )
        model_kp = detect_iss(model_c, **iss)
        scene_kp = detect_iss(scene_c, **iss)
        timings["keypoints"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        model_sig, model_skip = describe(
            model_c, model_kp.indices, descriptor.n_neighbors, descriptor.theta, threads=descriptor.threads
        )
        scene_sig, scene_skip = describe(
            scene_c, scene_kp.indices, descriptor.n_neighbors, descriptor.theta, threads=descriptor.threads
        )
        timings["describe"] += time.perf_counter() - t0
        n_described += len(model_sig) + len(scene_sig)
        skipped[model.id or f"model{mi}"] = [kp for kp, _ in model_skip]
        skipped[scene.id] = [kp for kp, _ in scene_skip]
        if not model_sig or not scene_sig:
            log.warning("model %s: no describable keypoints on one side", model.id)
            continue

        model_pos = model_c.points[[s.keypoint_index for s in model_sig]]
        scene_pos = scene_c.points[[s.keypoint_index for s in scene_sig]]
        moved = gt.apply(model_pos)
        gap = np.linalg.norm(moved[:, None, :] - scene_pos[None, :, :], axis=2).min(axis=1)
        n_corr = int(np.count_nonzero(gap <= CORRECT_RADIUS_MR * mr))

        t0 = time.perf_counter()
        forest = build_forest(
            scene_sig, matcher.trees, matcher.branching, matcher.max_leaf, matcher.seed
        )
        timings["forest_build"] += time.perf_counter() - t0
        max_targets = max(max_targets, len(scene_sig))
        queries = signature_matrix(model_sig)
        exact = brute_force_match(queries, forest.data, matcher.k)
        prepared.append((queries, exact, forest, model_pos, scene_pos, gt, mr, n_corr))

    if knobs is None:
        knobs = default_knobs(max(max_targets, 1), matcher.k)

    curve = []
    n_corresponding = sum(p[-1] for p in prepared)
    for knob in knobs:
        flags: list[bool] = []
        hits = 0
        n_queries = 0
        elapsed = 0.0
        for queries, exact, forest, model_pos, scene_pos, gt, mr, _ in prepared:
            t0 = time.perf_counter()
            found = [
                search(forest, q, matcher.k, max(knob, matcher.k), query_id=qi)[0]
                for qi, q in enumerate(queries)
            ]
            elapsed += time.perf_counter() - t0
            n_queries += len(queries)
            for got, ref in zip(found, exact):
                hits += len({m.target_id for m in got} & {m.target_id for m in ref})
                flags += [is_correct_match(m, model_pos, scene_pos, gt, mr) for m in got]
        point = precision_recall(flags, max(n_corresponding, 1), knob)
        point.search_precision = hits / (matcher.k * n_queries) if n_queries else 1.0
        point.seconds_per_query = elapsed / n_queries if n_queries else 0.0
        curve.append(point)

    auc = auc_pr(curve) if len(curve) >= 2 else (curve[0].precision * curve[0].recall if curve else 0.0)
    n_floats = float_equivalents(descriptor.n_neighbors)
    if n_described:
        timings["describe_per_keypoint"] = timings["describe"] / n_described
    timings["match_per_query"] = curve[-1].seconds_per_query if curve else 0.0
    params = {
        "recipe": {
            "rotation": recipe.rotation if isinstance(recipe.rotation, str) else np.asarray(recipe.rotation).tolist(),
            "translation": None if recipe.translation is None else np.asarray(recipe.translation).tolist(),
            "noise_sigma": recipe.noise_sigma,
            "keep_fraction": recipe.keep_fraction,
            "seed": recipe.seed,
        },
        "descriptor": asdict(descriptor),
        "matcher": asdict(matcher),
        "knobs": list(knobs),
        "float_equivalents": n_floats,
    }
    counts = {
        "models": len(models),
        "queries": sum(len(p[0]) for p in prepared),
        "targets": sum(len(p[2]) for p in prepared),
        "corresponding": n_corresponding,
    }
    return EvalReport(curve, auc, compactness(auc, n_floats), timings, params, skipped, counts)


# -- efficiency ---------------------------------------------------------------------


def float_expansion(descriptors: np.ndarray, n_bits: int) -> np.ndarray:
    """One float32 per payload bit, for the real-valued matching baseline."""
    raw = np.unpackbits(np.ascontiguousarray(descriptors, dtype="<u8").view(np.uint8), axis=1, bitorder="little")
    return raw[:, :n_bits].astype(np.float32)


def time_linear_scans(
    targets: np.ndarray,
    queries: np.ndarray,
    n_bits: int,
    repeats: int = 3,
    l2_queries: int | None = None,
) -> dict[str, float]:
    """Seconds per query of a Hamming scan and of a float L2 scan over the same data.

    Each scan computes the distance to every target and takes the arg-min;
    the best of ``repeats`` runs is reported.
    """
    targets = np.ascontiguousarray(targets, dtype=np.uint64)
    queries = np.ascontiguousarray(queries, dtype=np.uint64)
    ftargets = float_expansion(targets, n_bits)
    fqueries = float_expansion(queries[: l2_queries or len(queries)], n_bits)

    def best(fn, qs):
        runs = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for q in qs:
                fn(q)
            runs.append((time.perf_counter() - t0) / len(qs))
        return min(runs)

    hamming_s = best(lambda q: int(np.argmin(hamming_to_rows(q, targets))), queries)
    l2_s = best(lambda q: int(np.argmin(((ftargets - q) ** 2).sum(axis=1))), fqueries)
    return {"hamming_per_query": hamming_s, "l2_per_query": l2_s, "speedup": l2_s / hamming_s}
