"""Point clouds, exact-order spatial queries, mesh resolution and normals."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, EmptyInputError, ParameterError

log = logging.getLogger(__name__)

UNIT_TOL = 1e-9
# widening applied to kd-tree radii so that candidates within a few ulps of the
# k-th distance are re-ranked with the exact distance formula
_RADIUS_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable point set with optional unit normals and triangle faces.

    ``points`` is ``(n, 3)`` float64, ``normals`` ``(n, 3)`` or None, ``faces``
    ``(m, 3)`` int64 or None.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    faces: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ParameterError(
                    f"{len(nrm)} normals for {len(pts)} points"
                )
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > UNIT_TOL:
                raise ParameterError("normals must have unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

        if self.faces is not None:
            fcs = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
            if fcs.size and (fcs.min() < 0 or fcs.max() >= len(pts)):
                raise ParameterError("face index out of range")
            fcs.setflags(write=False)
            object.__setattr__(self, "faces", fcs)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @cached_property
    def index(self) -> SpatialIndex:
        return SpatialIndex(self.points)

    def with_normals(self, normals: np.ndarray) -> PointCloud:
        return replace(self, normals=normals)

    def transformed(self, rotation: np.ndarray, translation=(0.0, 0.0, 0.0)) -> PointCloud:
        """Rigidly move the cloud; normals rotate with it."""
        rotation = np.asarray(rotation, dtype=np.float64)
        pts = self.points @ rotation.T + np.asarray(translation, dtype=np.float64)
        nrm = None
        if self.normals is not None:
            nrm = self.normals @ rotation.T
            nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        return replace(self, points=pts, normals=nrm)

    def bounding_diagonal(self) -> float:
        if len(self.points) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))


class SpatialIndex:
    """k-nearest and radius queries whose results equal a linear scan.

    A kd-tree supplies candidates; candidates are then ranked by the exact
    Euclidean distance with ties broken by ascending point index.
    """

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def _ranked(self, query: np.ndarray, cand) -> tuple[np.ndarray, np.ndarray]:
        cand = np.asarray(cand, dtype=np.int64)
        dist = np.linalg.norm(self.points[cand] - query, axis=1)
        order = np.lexsort((cand, dist))
        return cand[order], dist[order]

    def knn(self, query, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the ``k`` nearest points, ascending."""
        if k < 1:
            raise ParameterError("k must be >= 1")
        n = len(self.points)
        if n == 0:
            raise EmptyInputError("knn on an empty cloud")
        query = np.asarray(query, dtype=np.float64).reshape(3)
        k = min(k, n)
        if k == n:
            cand = np.arange(n)
        else:
            dk, _ = self._tree.query(query, k=[k])
            r = float(dk[0]) * (1.0 + _RADIUS_SLACK) + 1e-300
            cand = self._tree.query_ball_point(query, r)
        idx, dist = self._ranked(query, cand)
        return idx[:k], dist[:k]

    def knn_batch(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Row-wise :meth:`knn` for an ``(m, 3)`` array of queries."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if k < 1:
            raise ParameterError("k must be >= 1")
        n = len(self.points)
        if n == 0:
            raise EmptyInputError("knn on an empty cloud")
        k = min(k, n)
        m = len(queries)
        out_idx = np.empty((m, k), dtype=np.int64)
        out_dist = np.empty((m, k), dtype=np.float64)
        if m == 0:
            return out_idx, out_dist
        if k == n:
            cands = [np.arange(n)] * m
        else:
            dk, _ = self._tree.query(queries, k=[k])
            radii = dk[:, 0] * (1.0 + _RADIUS_SLACK) + 1e-300
            cands = self._tree.query_ball_point(queries, radii)
        for row, (q, cand) in enumerate(zip(queries, cands)):
            idx, dist = self._ranked(q, cand)
            out_idx[row] = idx[:k]
            out_dist[row] = dist[:k]
        return out_idx, out_dist

    def radius(self, query, r: float) -> tuple[np.ndarray, np.ndarray]:
        """All points with distance <= ``r``, ascending by (distance, index)."""
        if r < 0:
            raise ParameterError("radius must be non-negative")
        query = np.asarray(query, dtype=np.float64).reshape(3)
        cand = self._tree.query_ball_point(query, r * (1.0 + _RADIUS_SLACK) + 1e-300)
        idx, dist = self._ranked(query, cand)
        keep = dist <= r
        return idx[keep], dist[keep]

    def radius_counts(self, queries, r: float) -> np.ndarray:
        """Number of points within ``r`` of each query (the query point included)."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return np.asarray(self._tree.query_ball_point(queries, r, return_length=True))

    def radius_batch(self, queries, r: float) -> list[np.ndarray]:
        """Unordered neighbour index arrays, one per query (kd-tree inclusion test)."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return [np.asarray(c, dtype=np.int64) for c in self._tree.query_ball_point(queries, r)]


def mesh_resolution(cloud: PointCloud) -> float:
    """Average sampling distance of a cloud.

    With faces this is the mean length over unique triangle edges, otherwise
    the mean distance from each point to its nearest distinct neighbour.
    """
    n = len(cloud)
    if n < 2:
        raise EmptyInputError("mesh resolution needs at least two points")
    pts = cloud.points
    if cloud.faces is not None and len(cloud.faces):
        f = cloud.faces
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges = np.unique(np.sort(edges, axis=1), axis=0)
        edges = edges[edges[:, 0] != edges[:, 1]]
        lengths = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
        mr = float(lengths.mean())
    else:
        tree = cloud.index._tree
        k = min(n, 8)
        dist, _ = tree.query(pts, k=k)
        nearest = np.empty(n)
        for i, row in enumerate(dist):
            pos = row[row > 0]
            if len(pos):
                nearest[i] = pos[0]
            else:
                # every one of the k closest coincides with point i
                d = np.linalg.norm(pts - pts[i], axis=1)
                d = d[d > 0]
                nearest[i] = d.min() if len(d) else 0.0
        mr = float(nearest.mean())
    if not mr > 0:
        raise DegenerateGeometryError("all points coincide; mesh resolution is zero")
    return mr


def default_viewpoint(points: np.ndarray) -> np.ndarray:
    """Cloud centroid lifted by ten bounding-box diagonals along +z."""
    points = np.asarray(points, dtype=np.float64)
    diag = np.linalg.norm(points.max(axis=0) - points.min(axis=0))
    return points.mean(axis=0) + np.array([0.0, 0.0, 10.0 * max(diag, 1.0)])


def compute_normals(cloud: PointCloud, k: int, viewpoint=None) -> tuple[np.ndarray, np.ndarray]:
    """PCA normals over k-nearest neighbourhoods (the point itself included).

    Returns ``(normals, degenerate)`` where ``degenerate`` flags neighbourhoods
    whose points are collinear or coincident.
    """
    n = len(cloud)
    if k < 3:
        raise ParameterError("normal estimation needs k >= 3")
    if k > n:
        raise ParameterError(f"k={k} exceeds cloud size {n}")
    pts = cloud.points
    vp = default_viewpoint(pts) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)

    idx, _ = cloud.index.knn_batch(pts, k)
    nbrs = pts[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    flip = np.einsum("ij,ij->i", normals, vp - pts) < 0
    normals[flip] *= -1.0

    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= 1e-12 * scale
    if degenerate.any():
        log.warning("%d degenerate normal neighbourhoods", int(degenerate.sum()))
    return normals, degenerate


def estimate_normals(cloud: PointCloud, k: int = 10, viewpoint=None) -> PointCloud:
    """Copy of ``cloud`` with PCA normals oriented toward ``viewpoint``."""
    normals, _ = compute_normals(cloud, k, viewpoint)
    return cloud.with_normals(normals)
