"""Intrinsic Shape Signature keypoints and keypoint CSV files."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedInputError, ParameterError, UnmatchedKeypointError
from .geometry import PointCloud, mesh_resolution

log = logging.getLogger(__name__)

SALIENT_RADIUS_MR = 6.0
NMS_RADIUS_MR = 4.0
# smallest eigenvalue below this fraction of the largest counts as exactly flat
FLAT_TOL = 1e-12


@dataclass
class KeypointSet:
    indices: np.ndarray
    saliencies: np.ndarray
    warning: str | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.saliencies = np.asarray(self.saliencies, dtype=np.float64).reshape(-1)
        if len(self.indices) != len(self.saliencies):
            raise ParameterError("indices and saliencies differ in length")
        if len(np.unique(self.indices)) != len(self.indices):
            raise ParameterError("keypoint indices must be unique")

    def __len__(self) -> int:
        return len(self.indices)

    def positions(self, cloud: PointCloud) -> np.ndarray:
        return cloud.points[self.indices]


def _empty(warning: str) -> KeypointSet:
    log.info(warning)
    return KeypointSet(np.empty(0, np.int64), np.empty(0), warning=warning)


def iss_saliency(
    cloud: PointCloud,
    salient_radius: float,
    gamma21: float = 0.975,
    gamma32: float = 0.975,
    min_neighbors: int = 5,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point ``(candidate_mask, saliency)`` of the ISS detector.

    The scatter matrix of point i sums ``w_j (p_j - p_i)(p_j - p_i)^T`` over
    neighbours j within ``salient_radius`` with ``w_j`` the inverse of j's own
    neighbourhood count. Saliency is the smallest eigenvalue.
    """
    pts = cloud.points
    n = len(pts)
    index = cloud.index
    nbrs = index.radius_batch(pts, salient_radius)
    counts = np.array([len(c) for c in nbrs], dtype=np.int64)

    src = np.repeat(np.arange(n), counts)
    dst = np.concatenate(nbrs) if n else np.empty(0, np.int64)
    keep = src != dst
    src, dst = src[keep], dst[keep]
    n_nbrs = np.bincount(src, minlength=n)

    w = 1.0 / counts[dst]
    diff = pts[dst] - pts[src]
    scatter = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(src, weights=w * diff[:, a] * diff[:, b], minlength=n)
            scatter[:, a, b] = s
            scatter[:, b, a] = s
    wsum = np.bincount(src, weights=w, minlength=n)
    valid = n_nbrs >= min_neighbors
    scatter[valid] /= wsum[valid, None, None]
    scatter[~valid] = 0.0

    evals = np.linalg.eigvalsh(scatter)  # ascending
    l3, l2, l1 = evals[:, 0], evals[:, 1], evals[:, 2]
    l3 = np.maximum(l3, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r21 = np.where(l1 > 0, l2 / l1, np.inf)
        r32 = np.where(l2 > 0, l3 / l2, np.inf)
    flat = l3 <= FLAT_TOL * l1
    candidate = valid & ~flat & (r21 < gamma21) & (r32 < gamma32)
    return candidate, np.where(valid, l3, 0.0)


def detect_iss(
    cloud: PointCloud,
    salient_radius: float | None = None,
    nms_radius: float | None = None,
    gamma21: float = 0.975,
    gamma32: float = 0.975,
    min_neighbors: int = 5,
) -> KeypointSet:
    """Detect ISS keypoints.

    Radii default to 6 and 4 mesh resolutions. A candidate survives
    non-maximum suppression when no other candidate within ``nms_radius`` has a
    larger saliency (equal saliency: the lower index wins).
    """
    if min_neighbors < 5:
        raise ParameterError("min_neighbors must be >= 5")
    if not (0 < gamma21 < 1 and 0 < gamma32 < 1):
        raise ParameterError("gamma ratios must lie in (0, 1)")
    if len(cloud) < min_neighbors:
        return _empty(f"cloud has {len(cloud)} points, fewer than min_neighbors={min_neighbors}")
    if salient_radius is None or nms_radius is None:
        mr = mesh_resolution(cloud)
        salient_radius = SALIENT_RADIUS_MR * mr if salient_radius is None else salient_radius
        nms_radius = NMS_RADIUS_MR * mr if nms_radius is None else nms_radius
    if salient_radius <= 0 or nms_radius <= 0:
        raise ParameterError("radii must be positive")

    candidate, saliency = iss_saliency(cloud, salient_radius, gamma21, gamma32, min_neighbors)
    cand = np.flatnonzero(candidate)
    if len(cand) == 0:
        return _empty("no ISS candidates passed the eigenvalue-ratio test")

    cand_pts = cloud.points[cand]
    sub = PointCloud(cand_pts)
    groups = sub.index.radius_batch(cand_pts, nms_radius)
    kept = []
    for local, group in enumerate(groups):
        s_i, i = saliency[cand[local]], cand[local]
        others = cand[group]
        s_o = saliency[others]
        beaten = (s_o > s_i) | ((s_o == s_i) & (others < i))
        if not beaten.any():
            kept.append(i)
    kept = np.asarray(kept, dtype=np.int64)
    return KeypointSet(kept, saliency[kept])


def load_keypoints(path, cloud: PointCloud) -> KeypointSet:
    """Read a keypoint CSV of point indices or xyz rows (snapped to the cloud)."""
    n = len(cloud)
    indices: list[int] = []
    seen: set[int] = set()
    mr = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row if c.strip()]
            if not row or row[0].startswith("#"):
                continue
            if len(row) == 1:
                try:
                    idx = int(row[0])
                except ValueError:
                    raise MalformedInputError(f"line {lineno}: not an integer index: {row[0]!r}") from None
                if not 0 <= idx < n:
                    raise ParameterError(f"line {lineno}: index {idx} out of range for {n} points")
            elif len(row) == 3:
                try:
                    xyz = np.array([float(c) for c in row])
                except ValueError:
                    raise MalformedInputError(f"line {lineno}: bad xyz row") from None
                nn, dist = cloud.index.knn(xyz, 1)
                if mr is None:
                    mr = mesh_resolution(cloud)
                if dist[0] > 2.0 * mr:
                    raise UnmatchedKeypointError(
                        f"line {lineno}: {tuple(xyz)} is {dist[0]:.4g} from the cloud (> 2 mr)"
                    )
                idx = int(nn[0])
            else:
                raise MalformedInputError(f"line {lineno}: expected 1 or 3 columns")
            if idx not in seen:
                seen.add(idx)
                indices.append(idx)
    return KeypointSet(np.asarray(indices, dtype=np.int64), np.zeros(len(indices)))


def save_keypoints(path, keypoints: KeypointSet) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in keypoints.indices))
