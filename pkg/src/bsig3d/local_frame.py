"""Keypoint neighbourhoods, local reference frames and frame alignment."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, ParameterError, PreconditionError
from .geometry import PointCloud, SpatialIndex

DEFAULT_THETA = math.pi / 2
CANDIDATE_MULTIPLIER = 4
EIGENGAP_TOL = 1e-9
MIN_SUPPORT = 5


@dataclass(frozen=True)
class Plane:
    centroid: np.ndarray
    normal: np.ndarray
    rms_residual: float


@dataclass(frozen=True, eq=False)
class NeighborSet:
    keypoint_index: int
    neighbor_indices: np.ndarray
    distances: np.ndarray
    fallback_used: bool = False

    def __len__(self) -> int:
        return len(self.neighbor_indices)


@dataclass(frozen=True, eq=False)
class LocalReferenceFrame:
    """Rows of ``rotation`` are the frame's x, y, z axes in world coordinates."""

    rotation: np.ndarray
    origin: np.ndarray
    support_radius: float
    degenerate: bool = False

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.origin) @ self.rotation.T


@dataclass(frozen=True, eq=False)
class AlignedSurface:
    points: np.ndarray
    normals: np.ndarray


def _fit_plane(points: np.ndarray) -> tuple[Plane, bool]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered / max(len(pts), 1))
    normal = evecs[:, 0] / np.linalg.norm(evecs[:, 0])
    rms = float(np.sqrt(np.mean((centered @ normal) ** 2))) if len(pts) else 0.0
    degenerate = len(pts) < 3 or evals[1] <= 1e-12 * max(evals[2], np.finfo(float).tiny)
    return Plane(centroid, normal, rms), bool(degenerate)


def best_fit_plane(points) -> Plane:
    """Least-squares plane: through the centroid, normal along least variance."""
    plane, degenerate = _fit_plane(points)
    if degenerate:
        raise DegenerateGeometryError("plane fit needs at least 3 non-collinear points")
    return plane


def _angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unsigned angle between ``a`` and each row of ``b``; zero vectors give 0."""
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = b @ a
    return np.arctan2(cross, dot)


def select_neighbors_angular(
    cloud: PointCloud,
    keypoint: int,
    n_neighbors: int,
    theta: float = DEFAULT_THETA,
    *,
    index: SpatialIndex | None = None,
    candidate_multiplier: int = CANDIDATE_MULTIPLIER,
) -> NeighborSet:
    """Distance-ordered neighbours of ``keypoint`` spread around it by an angle rule.

    The ``candidate_multiplier * n_neighbors`` nearest points are projected on
    their least-squares plane and scanned nearest first. A candidate is taken
    when the angle it forms at the keypoint with the previously taken neighbour
    is at most ``theta``; the first one is always taken. Among candidates at the
    same distance, the one closest in angle to the previously taken neighbour
    (or, before any is taken, to the next farther candidate) goes first. If the
    scan ends short, the nearest rejected candidates fill the set and
    ``fallback_used`` is set.
    """
    if n_neighbors < 2:
        raise ParameterError("n_neighbors must be >= 2")
    if not 0 < theta <= math.pi:
        raise ParameterError("theta must lie in (0, pi]")
    if candidate_multiplier < 1:
        raise ParameterError("candidate_multiplier must be >= 1")
    index = cloud.index if index is None else index
    pts = cloud.points
    p = pts[keypoint]

    pool = candidate_multiplier * n_neighbors
    idx, dist = index.knn(p, pool + 1)
    keep = idx != keypoint
    idx, dist = idx[keep][:pool], dist[keep][:pool]

    plane, _ = _fit_plane(pts[idx]) if len(idx) else (None, True)
    rel = pts[idx] - p
    if plane is not None:
        rel = rel - np.outer(rel @ plane.normal, plane.normal)

    accepted: list[int] = []  # positions into idx, in acceptance order
    prev = None
    pos = 0
    m = len(idx)
    while pos < m and len(accepted) < n_neighbors:
        end = pos + 1
        while end < m and dist[end] == dist[pos]:
            end += 1
        group = list(range(pos, end))
        ref = prev if prev is not None else (rel[end] if end < m else None)
        while group and len(accepted) < n_neighbors:
            if ref is None:
                pick = group[0]
            else:
                ang = _angle(ref, rel[group])
                pick = group[int(np.argmin(ang))]  # ties keep index order
                if prev is not None and ang.min() > theta:
                    break
            accepted.append(pick)
            group.remove(pick)
            prev = ref = rel[pick]
        pos = end

    fallback = len(accepted) < n_neighbors
    chosen = [(dist[a], 0, rank, a) for rank, a in enumerate(accepted)]
    if fallback:
        taken = set(accepted)
        extra = [j for j in range(m) if j not in taken][: n_neighbors - len(accepted)]
        chosen += [(dist[j], 1, j, j) for j in extra]
        chosen.sort()
    order = np.array([c[3] for c in chosen], dtype=np.int64)
    return NeighborSet(
        keypoint_index=int(keypoint),
        neighbor_indices=idx[order] if len(order) else np.empty(0, np.int64),
        distances=dist[order] if len(order) else np.empty(0),
        fallback_used=fallback,
    )


def support_radius(neighbors: NeighborSet) -> float:
    if len(neighbors) == 0:
        raise ParameterError("support radius of an empty neighbour set")
    return float(np.max(neighbors.distances))


def _disambiguate(axis: np.ndarray, vectors: np.ndarray, global_component: int) -> np.ndarray:
    dots = vectors @ axis
    pos = int(np.count_nonzero(dots > 0))
    neg = int(np.count_nonzero(dots < 0))
    if neg > pos or (neg == pos and axis[global_component] < 0):
        return -axis
    return axis


def compute_lrf(
    cloud: PointCloud,
    keypoint: int,
    radius: float,
    *,
    index: SpatialIndex | None = None,
) -> LocalReferenceFrame:
    """Frame from the (radius - d)-weighted covariance of the spherical support.

    x follows the largest eigenvalue and z the smallest, each flipped toward
    the majority of support vectors; y = z cross x.
    """
    if not radius > 0:
        raise ParameterError("support radius must be positive")
    index = cloud.index if index is None else index
    p = cloud.points[keypoint]
    idx, dist = index.radius(p, radius)
    keep = idx != keypoint
    idx, dist = idx[keep], dist[keep]
    if len(idx) < MIN_SUPPORT:
        raise DegenerateGeometryError(
            f"keypoint {keypoint}: {len(idx)} support points within R, need {MIN_SUPPORT}"
        )
    diff = cloud.points[idx] - p
    w = radius - dist
    wsum = w.sum()
    cov = (w[:, None] * diff).T @ diff / wsum if wsum > 0 else np.zeros((3, 3))

    evals, evecs = np.linalg.eigh(cov)  # ascending
    l3, l2, l1 = evals
    scale = max(l1, np.finfo(float).tiny)
    degenerate = bool(l1 <= 0 or (l2 - l3) <= EIGENGAP_TOL * scale or (l1 - l2) <= EIGENGAP_TOL * scale)

    x = _disambiguate(evecs[:, 2], diff, 0)
    z = _disambiguate(evecs[:, 0], diff, 2)
    y = np.cross(z, x)
    rotation = np.vstack([x, y, z])
    return LocalReferenceFrame(rotation, p.copy(), float(radius), degenerate)


def align(cloud: PointCloud, neighbors: NeighborSet, lrf: LocalReferenceFrame) -> AlignedSurface:
    """Express neighbour positions (relative to the keypoint) and normals in the LRF."""
    if cloud.normals is None:
        raise PreconditionError("alignment needs per-point normals")
    idx = neighbors.neighbor_indices
    points = lrf.to_local(cloud.points[idx])
    normals = cloud.normals[idx] @ lrf.rotation.T
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return AlignedSurface(points, normals)
