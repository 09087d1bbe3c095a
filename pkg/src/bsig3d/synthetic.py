"""Synthetic clouds with known geometry, used for tests and desk-scale benchmarks."""
from __future__ import annotations

import numpy as np

from .geometry import PointCloud


def plane_grid(n: int = 30, spacing: float = 1.0) -> PointCloud:
    """Regular ``n x n`` grid on the plane z = 0."""
    g = np.arange(n, dtype=np.float64) * spacing
    x, y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([x.ravel(), y.ravel(), np.zeros(x.size)])
    return PointCloud(pts, normals=np.tile([0.0, 0.0, 1.0], (len(pts), 1)), id="plane")


def cube_surface(n: int = 20, size: float = 1.0) -> PointCloud:
    """Lattice points on the surface of an axis-aligned cube with ``n`` steps per edge."""
    g = np.arange(n + 1)
    i, j, k = np.meshgrid(g, g, g, indexing="ij")
    lat = np.column_stack([i.ravel(), j.ravel(), k.ravel()])
    on_surface = np.any((lat == 0) | (lat == n), axis=1)
    pts = lat[on_surface].astype(np.float64) * (size / n)
    return PointCloud(pts, id="cube")


def cube_corners(size: float = 1.0) -> np.ndarray:
    g = np.array([0.0, size])
    return np.array([[x, y, z] for x in g for y in g for z in g])


def unit_cube_mesh() -> PointCloud:
    """The 8-vertex, 12-triangle unit cube."""
    pts = cube_corners(1.0)
    # vertex id = 4x + 2y + z
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x = 0, x = 1
        (0, 4, 5, 1), (2, 3, 7, 6),  # y = 0, y = 1
        (0, 2, 6, 4), (1, 5, 7, 3),  # z = 0, z = 1
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return PointCloud(pts, faces=np.array(faces), id="unit_cube")


def fibonacci_sphere(n: int = 2000, radius: float = 1.0) -> np.ndarray:
    """Near-uniform unit directions (scaled by ``radius``)."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0 ** 0.5) * i
    dirs = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    return radius * dirs


def sphere(n: int = 2000, radius: float = 1.0) -> PointCloud:
    dirs = fibonacci_sphere(n)
    return PointCloud(radius * dirs, normals=dirs, id="sphere")


def blob(n: int = 3000, seed: int = 0, bumps: int = 12, amplitude: float = 0.25) -> PointCloud:
    """Star-shaped closed surface with random Gaussian bumps; has no symmetries.

    Normals are analytic (gradient of the implicit radius function), oriented
    outward.
    """
    rng = np.random.default_rng(seed)
    dirs = fibonacci_sphere(n)
    centers = rng.normal(size=(bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amps = amplitude * rng.uniform(-1.0, 1.0, bumps)
    widths = rng.uniform(0.25, 0.6, bumps)
    stretch = np.array([1.0, 0.8, 0.65])

    def radius(u):
        d2 = ((u[:, None, :] - centers[None]) ** 2).sum(-1)
        return 1.0 + (amps * np.exp(-d2 / widths**2)).sum(-1)

    pts = dirs * radius(dirs)[:, None] * stretch
    normals = _numeric_normals(pts, dirs, radius, stretch)
    return PointCloud(pts, normals=normals, id=f"blob{seed}")


def _numeric_normals(pts, dirs, radius, stretch, h: float = 1e-5) -> np.ndarray:
    # tangents by central differences along two directions orthogonal to ``dirs``
    helper = np.where(np.abs(dirs[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(dirs, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(dirs, t1)

    def surf(u):
        u = u / np.linalg.norm(u, axis=1, keepdims=True)
        return u * radius(u)[:, None] * stretch

    d1 = surf(dirs + h * t1) - surf(dirs - h * t1)
    d2 = surf(dirs + h * t2) - surf(dirs - h * t2)
    nrm = np.cross(d1, d2)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    outward = np.einsum("ij,ij->i", nrm, pts) < 0
    nrm[outward] *= -1.0
    return nrm


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q
