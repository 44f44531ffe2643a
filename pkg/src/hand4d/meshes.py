"""Point-in-mesh queries and small mesh helpers.

The inside test casts a fixed-direction ray per query point and counts
triangle crossings (odd = inside), with per-triangle bounding-slab
rejection before the exact intersection test.  Non-watertight meshes fall
back to the sign of the offset against the nearest face normal, which is
approximate and documented as such.
"""

from __future__ import annotations

import numpy as np

# fixed, irrational-leaning direction so axis-aligned geometry cannot graze
_RAY = np.array([0.2971357809, 0.6235103461, 0.7233628201])
_RAY = _RAY / np.linalg.norm(_RAY)
_EPS = 1e-12


def is_watertight(faces: np.ndarray) -> bool:
    """True when every undirected edge is shared by exactly two faces with
    opposite orientation."""
    faces = np.asarray(faces, dtype=np.int64)
    counts: dict = {}
    for tri in faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            direction = 1 if a < b else -1
            cnt, bal = counts.get(key, (0, 0))
            counts[key] = (cnt + 1, bal + direction)
    return all(cnt == 2 and bal == 0 for cnt, bal in counts.values())


def mesh_aabb_gap(verts_a: np.ndarray, verts_b: np.ndarray) -> float:
    """Largest per-axis separation between the two AABBs (<= 0 if they
    overlap on every axis)."""
    lo_a, hi_a = verts_a.min(axis=0), verts_a.max(axis=0)
    lo_b, hi_b = verts_b.min(axis=0), verts_b.max(axis=0)
    gaps = np.maximum(lo_a - hi_b, lo_b - hi_a)
    return float(gaps.max())


def _ray_crossings(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Count ray/triangle crossings for each point along the fixed
    direction (Moller-Trumbore, vectorized over points x triangles)."""
    n_pts = len(points)
    if len(tri) == 0:
        return np.zeros(n_pts, dtype=np.int64)
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    e1 = v1 - v0  # (F, 3)
    e2 = v2 - v0
    h = np.cross(_RAY[None, :], e2)  # (F, 3)
    a = (e1 * h).sum(axis=1)  # (F,)
    ok = np.abs(a) > _EPS
    inv_a = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
    s = points[:, None, :] - v0[None, :, :]  # (N, F, 3)
    u = (s * h[None, :, :]).sum(axis=2) * inv_a[None, :]
    q = np.cross(s, e1[None, :, :])
    v = (q * _RAY[None, None, :]).sum(axis=2) * inv_a[None, :]
    t = (q * e2[None, :, :]).sum(axis=2) * inv_a[None, :]
    hit = ok[None, :] & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > _EPS)
    return hit.sum(axis=1)


def points_in_mesh(points: np.ndarray, verts: np.ndarray, faces: np.ndarray, watertight: bool | None = None) -> np.ndarray:
    """Boolean mask of points strictly inside the closed mesh."""
    points = np.asarray(points, dtype=np.float64)
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    out = np.zeros(len(points), dtype=bool)
    if len(faces) == 0 or len(points) == 0:
        return out
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    in_box = ((points >= lo) & (points <= hi)).all(axis=1)
    if not in_box.any():
        return out
    candidates = points[in_box]
    tri = verts[faces]  # (F, 3, 3)
    if watertight is None:
        watertight = is_watertight(faces)
    if watertight:
        crossings = _ray_crossings(candidates, tri)
        out[in_box] = crossings % 2 == 1
        return out
    # fallback: nearest face centroid normal vs offset (approximate)
    centroids = tri.mean(axis=1)  # (F, 3)
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(norms, _EPS)
    d2 = ((candidates[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    offset = candidates - centroids[nearest]
    out[in_box] = (offset * normals[nearest]).sum(axis=1) < 0.0
    return out
