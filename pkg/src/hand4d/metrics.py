"""Evaluation metrics over predicted vs ground-truth world trajectories.

Joint positions are meters internally; position metrics report mm.
Global metrics operate per 128-frame segment with one similarity
alignment each, per the G / GA protocol.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from hand4d.errors import ValidationError
from hand4d.geometry import umeyama_align
from hand4d.meshes import points_in_mesh

SEGMENT = 128
VOXEL = 0.001  # meters; 1 mm grid for penetration volume
_MAX_VOXELS = 40_000_000


@dataclass
class EvalReport:
    mpjpe: float  # mm
    pa_mpjpe: float  # mm
    g_mpjpe: float  # mm
    ga_mpjpe: float  # mm
    acc_err_raw: float  # mm, no time division
    acc_err_div: float  # m/s^2
    jerk: float  # units of 10 m/s^3
    rte: float  # percent
    pen_volume: float  # cm^3

    def to_dict(self) -> dict:
        return asdict(self)


def _check_pair(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 3:
        raise ValidationError(f"expected matching (T, J, 3) arrays, got {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred, gt, align: str = "none") -> float:
    """Mean per-joint position error in mm; ``align`` is none, root
    (per-frame wrist subtraction) or procrustes (per-frame similarity)."""
    pred, gt = _check_pair(pred, gt)
    if align == "root":
        pred = pred - pred[:, :1]
        gt = gt - gt[:, :1]
    elif align == "procrustes":
        pred = np.stack([umeyama_align(pred[t], gt[t]).apply(pred[t]) for t in range(pred.shape[0])])
    elif align != "none":
        raise ValidationError(f"unknown alignment {align!r}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * 1000.0)


def _segments(total: int, segment: int) -> list:
    bounds = [(s, min(s + segment, total)) for s in range(0, total, segment)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        last = bounds.pop()
        bounds[-1] = (bounds[-1][0], last[1])
    return bounds


def global_mpjpe(pred, gt, mode: str = "first_two", segment: int = SEGMENT, return_segments: bool = False):
    """Global joint error (mm) after per-segment similarity alignment using
    the joints of the first two frames (``first_two``) or of the whole
    segment (``whole``)."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[0] < 2:
        raise ValidationError("global mpjpe needs at least 2 frames")
    if mode not in ("first_two", "whole"):
        raise ValidationError(f"unknown mode {mode!r}")
    values = []
    for start, stop in _segments(pred.shape[0], segment):
        p = pred[start:stop]
        g = gt[start:stop]
        src = p[:2] if mode == "first_two" else p
        dst = g[:2] if mode == "first_two" else g
        sim = umeyama_align(src.reshape(-1, 3), dst.reshape(-1, 3))
        aligned = sim.apply(p.reshape(-1, 3)).reshape(p.shape)
        values.append(float(np.linalg.norm(aligned - g, axis=-1).mean() * 1000.0))
    mean = float(np.mean(values))
    return (mean, values) if return_segments else mean


def _second_difference(x: np.ndarray) -> np.ndarray:
    return x[2:] - 2.0 * x[1:-1] + x[:-2]


def acc_err(pred, gt, divide: bool = False, fps: float = 30.0) -> float:
    """Mean acceleration error over interior frames: second difference of
    joint positions; ``divide`` applies the 1/dt^2 factor (m/s^2), else
    the raw value in mm."""
    pred, gt = _check_pair(pred, gt)
    if pred.shape[0] < 3:
        raise ValidationError("acceleration error needs at least 3 frames")
    diff = np.linalg.norm(_second_difference(pred) - _second_difference(gt), axis=-1).mean()
    if divide:
        dt = 1.0 / fps
        return float(diff / (dt * dt))
    return float(diff * 1000.0)


def jerk(pred, fps: float = 30.0) -> float:
    """Mean third-difference magnitude of the joints divided by dt^3,
    reported in units of 10 m/s^3."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 3 or pred.shape[0] < 4:
        raise ValidationError("jerk needs a (T>=4, J, 3) trajectory")
    third = pred[3:] - 3.0 * pred[2:-1] + 3.0 * pred[1:-2] - pred[:-3]
    dt = 1.0 / fps
    return float(np.linalg.norm(third, axis=-1).mean() / dt**3 / 10.0)


def rte(pred_roots, gt_roots) -> float:
    """Root trajectory error: mean residual after rigid (no scale)
    alignment, normalized by the ground-truth path length, in percent."""
    pred = np.asarray(pred_roots, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_roots, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ValidationError("root trajectories differ in shape")
    delta = float(np.linalg.norm(gt[1:] - gt[:-1], axis=-1).sum())
    if delta <= 1e-12:
        raise ValidationError("ground-truth path length is zero; RTE is undefined")
    rigid = umeyama_align(pred, gt, with_scale=False)
    residual = float(np.linalg.norm(rigid.apply(pred) - gt, axis=-1).mean())
    return residual / delta * 100.0


def penetration_volume(verts_left, verts_right, faces_left, faces_right, voxel: float = VOXEL) -> float:
    """Mean inter-penetration volume in cm^3: voxelize the AABB overlap on
    a ``voxel`` grid and count centers inside both closed meshes."""
    vl = np.asarray(verts_left, dtype=np.float64)
    vr = np.asarray(verts_right, dtype=np.float64)
    if vl.ndim == 2:
        vl = vl[None]
        vr = vr[None]
    if vl.shape[0] != vr.shape[0]:
        raise ValidationError("penetration volume needs matching frame counts")
    volumes = []
    for t in range(vl.shape[0]):
        volumes.append(_frame_volume(vl[t], vr[t], faces_left, faces_right, voxel))
    return float(np.mean(volumes)) if volumes else 0.0


def _frame_volume(vl, vr, faces_l, faces_r, voxel) -> float:
    lo = np.maximum(vl.min(axis=0), vr.min(axis=0))
    hi = np.minimum(vl.max(axis=0), vr.max(axis=0))
    if (hi <= lo).any():
        return 0.0
    counts = np.maximum(np.ceil((hi - lo) / voxel).astype(int), 1)
    if int(np.prod(counts)) > _MAX_VOXELS:
        raise ValidationError(
            f"overlap region needs {int(np.prod(counts))} voxels at {voxel*1000:.1f} mm; refusing"
        )
    axes = [lo[d] + (np.arange(counts[d]) + 0.5) * voxel for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([gx.reshape(-1), gy.reshape(-1), gz.reshape(-1)], axis=1)
    inside_l = points_in_mesh(centers, vl, faces_l)
    if not inside_l.any():
        return 0.0
    inside_both = points_in_mesh(centers[inside_l], vr, faces_r)
    count = int(inside_both.sum())
    return count * (voxel**3) * 1e6  # m^3 -> cm^3


def evaluate_pair(pred_joints, gt_joints, fps: float = 30.0, segment: int = SEGMENT) -> dict:
    """All joint-trajectory metrics for one hand (no meshes)."""
    return {
        "mpjpe": mpjpe(pred_joints, gt_joints, align="root"),
        "pa_mpjpe": mpjpe(pred_joints, gt_joints, align="procrustes"),
        "g_mpjpe": global_mpjpe(pred_joints, gt_joints, mode="first_two", segment=segment),
        "ga_mpjpe": global_mpjpe(pred_joints, gt_joints, mode="whole", segment=segment),
        "acc_err_raw": acc_err(pred_joints, gt_joints, divide=False, fps=fps),
        "acc_err_div": acc_err(pred_joints, gt_joints, divide=True, fps=fps),
        "jerk": jerk(pred_joints, fps=fps),
        "rte": rte(pred_joints[:, 0], gt_joints[:, 0]),
    }
