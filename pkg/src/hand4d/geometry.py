"""Rotation algebra, interpolation, alignment and projection primitives.

Functions accept numpy arrays or torch tensors and return the same kind.
The torch paths are differentiable and are the ones the objective terms
build on; numpy callers get plain arrays back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from hand4d.errors import ValidationError

_ACOS_EDGE = 1.0 - 1e-12


class _AcosGuarded(torch.autograd.Function):
    """arccos with the input clamped to [-1, 1] and the gradient zeroed at
    the endpoints, where the true derivative is unbounded.  Zero is a valid
    subgradient at x=1 (the distance functions built on this attain their
    minimum there)."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.acos(torch.clamp(x, -1.0, 1.0))

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        inside = x.abs() < _ACOS_EDGE
        denom = torch.sqrt(torch.clamp(1.0 - x * x, min=1e-24))
        return torch.where(inside, -grad_out / denom, torch.zeros_like(x))


def acos_guarded(x: torch.Tensor) -> torch.Tensor:
    return _AcosGuarded.apply(x)


def _as_tensor(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=torch.float64)


def _like_input(result: torch.Tensor, *inputs):
    if any(torch.is_tensor(x) for x in inputs):
        return result
    return result.detach().numpy()


def skew(v: torch.Tensor) -> torch.Tensor:
    """(..., 3) -> (..., 3, 3) cross-product matrix."""
    zero = torch.zeros_like(v[..., 0])
    rows = [
        torch.stack([zero, -v[..., 2], v[..., 1]], dim=-1),
        torch.stack([v[..., 2], zero, -v[..., 0]], dim=-1),
        torch.stack([-v[..., 1], v[..., 0], zero], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def axis_angle_to_matrix(v):
    """Rodrigues map, (..., 3) -> (..., 3, 3).

    Below ``|v| < 1e-8`` the sin/cos factors switch to their series
    expansions so the map (and its gradient) stays smooth through zero.
    """
    t = _as_tensor(v)
    theta2 = (t * t).sum(dim=-1)
    small = theta2 < 1e-16
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(theta2_safe)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2_safe)
    k = skew(t)
    eye = torch.eye(3, dtype=t.dtype, device=t.device).expand(k.shape)
    out = eye + a[..., None, None] * k + b[..., None, None] * (k @ k)
    return _like_input(out, v)


def matrix_to_axis_angle(m):
    """Log map, (..., 3, 3) -> (..., 3).

    Torch inputs take a differentiable path valid away from angle pi;
    numpy inputs take a robust path that handles the pi case by picking
    the axis with the largest diagonal mass (deterministic).
    """
    if torch.is_tensor(m):
        return _matrix_to_axis_angle_t(m)
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    mats = m.reshape(-1, 3, 3)
    out = np.stack([_matrix_to_axis_angle_np(r) for r in mats])
    return out[0] if single else out.reshape(m.shape[:-2] + (3,))


def _matrix_to_axis_angle_t(m: torch.Tensor) -> torch.Tensor:
    c = (m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2] - 1.0) / 2.0
    theta = acos_guarded(c)
    s_vec = torch.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        dim=-1,
    )
    # factor theta / (2 sin theta); series in (1 - c) near zero angle
    near_zero = c > 1.0 - 1e-6
    u = torch.clamp(1.0 - c, min=0.0)
    theta2_series = 2.0 * u + u * u / 3.0
    f_series = 0.5 * (1.0 + theta2_series / 6.0 + 7.0 * theta2_series * theta2_series / 360.0)
    sin_theta = torch.sin(theta)
    sin_safe = torch.where(near_zero, torch.ones_like(sin_theta), torch.clamp(sin_theta, min=1e-7))
    f_exact = theta / (2.0 * sin_safe)
    f = torch.where(near_zero, f_series, f_exact)
    return f[..., None] * s_vec


def _matrix_to_axis_angle_np(m: np.ndarray) -> np.ndarray:
    c = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(c))
    if theta < 1e-8:
        return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        # near a half turn: axis from the dominant diagonal of (m + I) / 2
        b = (m + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(b)))
        axis = b[:, i] / max(np.sqrt(b[i, i]), 1e-12)
        axis /= np.linalg.norm(axis)
        # fix the sign using an off-diagonal skew component when available
        s_vec = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0
        if np.dot(s_vec, axis) < 0:
            axis = -axis
        return theta * axis
    s_vec = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) / 2.0
    return theta / np.sin(theta) * s_vec


def geodesic_distance(a, b):
    """Relative rotation angle between two rotations, in [0, pi].

    ``arccos((trace(a^T b) - 1) / 2)`` with the argument clamped to
    [-1, 1]; the gradient is zeroed at the clamp edges (subgradient at
    coincident rotations, deterministic cutoff at antipodal ones).
    """
    ta, tb = _as_tensor(a), _as_tensor(b)
    rel = ta.transpose(-1, -2) @ tb
    c = (rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2] - 1.0) / 2.0
    return _like_input(acos_guarded(c), a, b)


def matrix_to_quaternion(m) -> np.ndarray:
    """(..., 3, 3) -> unit quaternion wxyz (numpy)."""
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    mats = m.reshape(-1, 3, 3)
    out = np.empty((len(mats), 4))
    for i, r in enumerate(mats):
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2.0
            q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s])
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s])
        out[i] = q / np.linalg.norm(q)
    return out[0] if single else out.reshape(m.shape[:-2] + (4,))


def quaternion_to_matrix(q) -> np.ndarray:
    """Unit quaternion wxyz -> (..., 3, 3) (numpy). Input is normalized."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def slerp(a, b, t):
    """Constant-speed shortest-arc interpolation between two rotations.

    ``a``/``b`` are 3x3 matrices, ``t`` a scalar or 1D array in [0, 1];
    returns matrices matching the shape of ``t``.
    """
    qa = matrix_to_quaternion(np.asarray(a, dtype=np.float64))
    qb = matrix_to_quaternion(np.asarray(b, dtype=np.float64))
    if np.dot(qa, qb) < 0:
        qb = -qb
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    dot = np.clip(np.dot(qa, qb), -1.0, 1.0)
    omega = np.arccos(dot)
    if omega < 1e-9:
        q = qa[None, :] * (1.0 - t_arr)[:, None] + qb[None, :] * t_arr[:, None]
    else:
        q = (
            np.sin((1.0 - t_arr) * omega)[:, None] * qa[None, :]
            + np.sin(t_arr * omega)[:, None] * qb[None, :]
        ) / np.sin(omega)
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    out = quaternion_to_matrix(q)
    return out[0] if np.isscalar(t) or np.ndim(t) == 0 else out


def polar_project(m: np.ndarray) -> np.ndarray:
    """Closest rotation matrix (Frobenius) to ``m`` via SVD."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def orthonormality_error(m: np.ndarray) -> float:
    m = np.asarray(m, dtype=np.float64)
    err = np.abs(m.T @ m - np.eye(3)).max()
    return float(max(err, abs(np.linalg.det(m) - 1.0)))


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * p @ self.rotation.T + self.translation


def umeyama_align(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity (or rigid, ``with_scale=False``) mapping
    ``src`` onto ``dst``; reflections excluded via the determinant sign
    correction."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValidationError("umeyama_align: point sets differ in shape")
    n = src.shape[0]
    if n < 3:
        raise ValidationError(f"umeyama_align: need at least 3 points, got {n}")
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst
    var_src = (src_c**2).sum() / n
    if var_src < 1e-18:
        raise ValidationError("umeyama_align: source cloud has zero variance")
    cov = dst_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    rotation = u @ s_fix @ vt
    scale = float(np.trace(np.diag(d) @ s_fix) / var_src) if with_scale else 1.0
    translation = mu_dst - scale * rotation @ mu_src
    return SimilarityTransform(scale=scale, rotation=rotation, translation=translation)


def project_perspective(p, K):
    """Pinhole projection of camera-frame points (..., 3) -> (..., 2).

    Callers are responsible for masking nonpositive depths; the depth is
    floored at 1e-9 only to keep the arithmetic finite.
    """
    tp, tk = _as_tensor(p), _as_tensor(K)
    z = torch.clamp(tp[..., 2], min=1e-9)
    px = tk[0, 0] * tp[..., 0] / z + tk[0, 2]
    py = tk[1, 1] * tp[..., 1] / z + tk[1, 2]
    return _like_input(torch.stack([px, py], dim=-1), p)


def project_weak(p, s, t):
    """Weak-perspective map (s*x + tx, s*y + ty) for points (..., 3) or (..., 2)."""
    tp = _as_tensor(p)
    ts = _as_tensor(s)
    tt = _as_tensor(t)
    out = torch.stack([ts * tp[..., 0] + tt[..., 0], ts * tp[..., 1] + tt[..., 1]], dim=-1)
    return _like_input(out, p)


class Rotation:
    """Representation-agnostic rotation backed by a 3x3 matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValidationError(f"Rotation: expected 3x3 matrix, got {m.shape}")
        if orthonormality_error(m) > 1e-6:
            raise ValidationError("Rotation: matrix is not orthonormal with det +1")
        self.matrix = m

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, v) -> "Rotation":
        return cls(axis_angle_to_matrix(np.asarray(v, dtype=np.float64)))

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        return cls(quaternion_to_matrix(q))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        return cls(m)

    def as_axis_angle(self) -> np.ndarray:
        return matrix_to_axis_angle(self.matrix)

    def as_quaternion(self) -> np.ndarray:
        return matrix_to_quaternion(self.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix.T

    def geodesic_to(self, other: "Rotation") -> float:
        return float(geodesic_distance(self.matrix, other.matrix))
