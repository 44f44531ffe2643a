"""Differentiable loss terms for the staged optimization.

Every term is individually evaluable with torch gradients; the stage
totals are plain weighted sums with every component retrievable for
logging.  Reduction order is fixed (ascending frame index) so repeated
evaluations are bitwise identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

import numpy as np
import torch

from hand4d.camera import CameraTrajectory
from hand4d.errors import ValidationError
from hand4d.geometry import acos_guarded, axis_angle_to_matrix, geodesic_distance
from hand4d.hand_model import NUM_ARTICULATED, NUM_KIN_JOINTS, HandModel, lbs_extended
from hand4d.meshes import mesh_aabb_gap, points_in_mesh
from hand4d.prior import MotionPrior, nll as prior_nll
from hand4d.tracks import HANDS, CleanTrack

_DEG = np.pi / 180.0


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ObjectiveConfig:
    """Loss weights, robustifier scale, thresholds and stage schedule knobs."""

    lambda_2d: float = 0.001
    lambda_smooth: float = 10.0
    lambda_smooth_root_phase: float = 1.0  # per-hand root phase runs with the lower weight
    lambda_cam: float = 100.0
    lambda_theta: float = 0.04
    lambda_beta: float = 0.05
    lambda_z: float = 200.0
    lambda_phi: float = 2.0
    lambda_tau: float = 10.0
    lambda_pen: float = 10.0
    lambda_ja: float = 1.0
    lambda_bl: float = 1.0
    lambda_palm: float = 1.0
    sigma_gm: float = 100.0  # Geman-McClure scale, pixels
    focal: float = 1000.0
    chunk_size: int = 128
    stage2_root_iters: int = 20
    stage2_full_iters: int = 60
    stage3_root_iters: int = 200
    stage3_full_iters: int = 200
    lbfgs_history: int = 10
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    infill_max_gap: int = 50
    bounds_path: str | None = None

    def validate(self) -> "ObjectiveConfig":
        for f in fields(self):
            if f.name.startswith("lambda_") and getattr(self, f.name) < 0:
                raise ValidationError(f"{f.name} must be nonnegative")
        if self.sigma_gm <= 0:
            raise ValidationError("sigma_gm must be positive")
        for name in ("chunk_size", "stage2_root_iters", "stage2_full_iters", "stage3_root_iters", "stage3_full_iters"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ObjectiveConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc).validate()

    @classmethod
    def from_file(cls, path) -> "ObjectiveConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def with_overrides(self, overrides: dict) -> "ObjectiveConfig":
        cfg = replace(self, **overrides)
        return cfg.validate()


# ---------------------------------------------------------------------------
# biomechanical bounds


def _convex_ccw(vertices: np.ndarray) -> np.ndarray:
    """Validate convexity, return the polygon in CCW order."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise ValidationError("hull polygons need at least 3 2D vertices")
    area = 0.0
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        area += a[0] * b[1] - b[0] * a[1]
    if abs(area) < 1e-12:
        raise ValidationError("hull polygon is degenerate")
    if area < 0:
        v = v[::-1].copy()
    for i in range(n):
        a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if cross < -1e-12:
            raise ValidationError("hull polygon is not convex")
    return v


def _box(lo_f, hi_f, lo_a, hi_a) -> np.ndarray:
    return np.array([[lo_f, lo_a], [hi_f, lo_a], [hi_f, hi_a], [lo_f, hi_a]], dtype=np.float64)


@dataclass
class BiomechBounds:
    """Per-bone joint-angle hulls, bone-length intervals and palm intervals.

    Angles are radians internally; the JSON file format uses degrees.
    """

    hulls: list  # 15 convex CCW polygons, (V_i, 2) radians (flexion, abduction)
    bone_len: np.ndarray  # (15, 2) meters
    palm_bones: list  # 4 kinematic joint indices (wrist children, thumb excluded)
    palm_curv: np.ndarray  # (3, 2) radians, adjacent-pair angle intervals
    palm_ang: np.ndarray  # (4, 2) radians, deviation-from-rest intervals

    def validate(self) -> "BiomechBounds":
        if len(self.hulls) != NUM_ARTICULATED:
            raise ValidationError(f"need {NUM_ARTICULATED} hulls, got {len(self.hulls)}")
        self.hulls = [_convex_ccw(h) for h in self.hulls]
        self.bone_len = np.asarray(self.bone_len, dtype=np.float64).reshape(NUM_ARTICULATED, 2)
        self.palm_curv = np.asarray(self.palm_curv, dtype=np.float64).reshape(-1, 2)
        self.palm_ang = np.asarray(self.palm_ang, dtype=np.float64).reshape(-1, 2)
        if len(self.palm_bones) != 4 or len(self.palm_ang) != 4 or len(self.palm_curv) != 3:
            raise ValidationError("palm bounds need 4 bones, 4 angular intervals, 3 curvature intervals")
        for name in ("bone_len", "palm_curv", "palm_ang"):
            iv = getattr(self, name)
            if not (iv[:, 0] < iv[:, 1]).all():
                raise ValidationError(f"{name}: every interval needs min < max")
        return self

    @classmethod
    def default(cls, model: HandModel) -> "BiomechBounds":
        """Box hulls, rest-length +-15% bone intervals and palm windows
        derived from the model's rest pose.  Defaults are configuration,
        not ground truth."""
        children = model.child_joints()
        rest = model.rest_joints()
        thumb_chain = _thumb_chain(model)
        hulls = []
        for j in range(1, NUM_KIN_JOINTS):
            if j in thumb_chain:
                hulls.append(_box(-90 * _DEG, 110 * _DEG, -45 * _DEG, 45 * _DEG))
            else:
                hulls.append(_box(-30 * _DEG, 110 * _DEG, -20 * _DEG, 20 * _DEG))
        lengths = np.array([np.linalg.norm(rest[children[j]] - rest[j]) for j in range(1, NUM_KIN_JOINTS)])
        bone_len = np.stack([lengths * 0.85, lengths * 1.15], axis=1)
        palm = _palm_bones(model)
        dirs = []
        for j in palm:
            d = rest[j] - rest[0]
            dirs.append(d / max(np.linalg.norm(d), 1e-12))
        curv = []
        for a, b in zip(dirs[:-1], dirs[1:]):
            ang = float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))
            curv.append([max(ang - 15 * _DEG, 0.0) - 1e-9, ang + 15 * _DEG])
        palm_ang = np.array([[-1e-9, 15 * _DEG]] * 4)
        return cls(
            hulls=hulls,
            bone_len=bone_len,
            palm_bones=palm,
            palm_curv=np.array(curv),
            palm_ang=palm_ang,
        ).validate()

    def to_json_dict(self) -> dict:
        return {
            "hulls_deg": [np.asarray(h).tolist() for h in np.asarray(self.hulls, dtype=object) / _DEG]
            if False
            else [(np.asarray(h) / _DEG).tolist() for h in self.hulls],
            "bone_len_m": self.bone_len.tolist(),
            "palm_bones": [int(j) for j in self.palm_bones],
            "palm_curv_deg": (self.palm_curv / _DEG).tolist(),
            "palm_ang_deg": (self.palm_ang / _DEG).tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "BiomechBounds":
        try:
            return cls(
                hulls=[np.asarray(h, dtype=np.float64) * _DEG for h in doc["hulls_deg"]],
                bone_len=np.asarray(doc["bone_len_m"], dtype=np.float64),
                palm_bones=[int(j) for j in doc["palm_bones"]],
                palm_curv=np.asarray(doc["palm_curv_deg"], dtype=np.float64) * _DEG,
                palm_ang=np.asarray(doc["palm_ang_deg"], dtype=np.float64) * _DEG,
            ).validate()
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed bounds file: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "BiomechBounds":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def _chains(model: HandModel) -> list:
    children: list[list[int]] = [[] for _ in range(NUM_KIN_JOINTS)]
    for j in range(1, NUM_KIN_JOINTS):
        children[int(model.kinematic_parents[j])].append(j)
    chains = []
    for root in children[0]:
        chain = [root]
        k = root
        while children[k]:
            k = children[k][0]
            chain.append(k)
        chains.append(chain)
    return chains


def _thumb_chain(model: HandModel) -> set:
    chains = _chains(model)
    return set(max(chains, key=lambda c: c[-1]))


def _palm_bones(model: HandModel) -> list:
    thumb = _thumb_chain(model)
    roots = sorted(j for j in range(1, NUM_KIN_JOINTS) if int(model.kinematic_parents[j]) == 0 and j not in thumb)
    if len(roots) != 4:
        raise ValidationError(f"expected 4 non-thumb palm root bones, found {len(roots)}")
    return roots


# ---------------------------------------------------------------------------
# elementary pieces


def geman_mcclure_sq(r_sq: torch.Tensor, sigma: float) -> torch.Tensor:
    """Robustifier on a squared residual: r^2 / (r^2 + sigma^2)."""
    return r_sq / (r_sq + sigma * sigma)


def interval_loss(x, lo, hi):
    """max(0, lo - x)^2 + max(0, x - hi)^2, elementwise."""
    tx = x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x, dtype=np.float64))
    tlo = lo if torch.is_tensor(lo) else torch.as_tensor(np.asarray(lo, dtype=np.float64))
    thi = hi if torch.is_tensor(hi) else torch.as_tensor(np.asarray(hi, dtype=np.float64))
    val = torch.clamp(tlo - tx, min=0.0) ** 2 + torch.clamp(tx - thi, min=0.0) ** 2
    return val if torch.is_tensor(x) else (float(val) if val.ndim == 0 else val.numpy())


def point_hull_dist_sq(p: torch.Tensor, hull: torch.Tensor) -> torch.Tensor:
    """Squared distance of points (..., 2) to a convex CCW polygon (V, 2);
    exactly zero inside (edge/vertex cases handled by the segment
    projection)."""
    a = hull
    b = torch.roll(hull, -1, dims=0)
    ab = b - a  # (V, 2)
    rel = p.unsqueeze(-2) - a  # (..., V, 2)
    cross = ab[:, 0] * rel[..., 1] - ab[:, 1] * rel[..., 0]
    inside = (cross >= 0).all(dim=-1)
    denom = (ab * ab).sum(dim=-1).clamp(min=1e-18)
    t = ((rel * ab).sum(dim=-1) / denom).clamp(0.0, 1.0)
    proj = a + t.unsqueeze(-1) * ab
    d_sq = ((p.unsqueeze(-2) - proj) ** 2).sum(dim=-1).min(dim=-1).values
    return torch.where(inside, torch.zeros_like(d_sq), d_sq)


def _pairwise_geodesic(rot_a: torch.Tensor, rot_b: torch.Tensor) -> torch.Tensor:
    rel = rot_a.transpose(-1, -2) @ rot_b
    c = (rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2] - 1.0) / 2.0
    return acos_guarded(c)


# ---------------------------------------------------------------------------
# scene bundle and forward pass


@dataclass
class Scene:
    """Fixed observation data for one optimization window."""

    kp: torch.Tensor  # (T, 2, 21, 2)
    vis: torch.Tensor  # (T, 2, 21) float64 0/1
    present: np.ndarray  # (T, 2) bool
    rot_slam: torch.Tensor  # (T, 3, 3)
    tau_slam: torch.Tensor  # (T, 3)
    intrinsics: torch.Tensor  # (3, 3)
    models: tuple  # (left HandModel, right HandModel), HANDS order
    bounds: BiomechBounds
    fps: float = 30.0
    frames: dict = field(default_factory=dict, repr=False)  # cached per-hand bone frames

    @property
    def num_frames(self) -> int:
        return int(self.kp.shape[0])

    def bone_frames(self, hand_idx: int) -> dict:
        if hand_idx not in self.frames:
            self.frames[hand_idx] = _build_bone_frames(self.models[hand_idx])
        return self.frames[hand_idx]

    def sliced(self, start: int, stop: int) -> "Scene":
        return Scene(
            kp=self.kp[start:stop].clone(),
            vis=self.vis[start:stop].clone(),
            present=self.present[start:stop].copy(),
            rot_slam=self.rot_slam[start:stop].clone(),
            tau_slam=self.tau_slam[start:stop].clone(),
            intrinsics=self.intrinsics,
            models=self.models,
            bounds=self.bounds,
            fps=self.fps,
        )


def build_scene(
    clean: CleanTrack,
    camera: CameraTrajectory,
    models: dict,
    bounds: BiomechBounds | None = None,
) -> Scene:
    t = camera.num_frames
    if clean.num_frames > t:
        raise ValidationError(
            f"track has {clean.num_frames} frames but camera only {t}; the camera file defines the timeline"
        )
    kp = np.zeros((t, 2, 21, 2))
    vis = np.zeros((t, 2, 21))
    present = np.zeros((t, 2), dtype=bool)
    for h, hand in enumerate(HANDS):
        ht = clean.hands.get(hand)
        if ht is None:
            continue
        n = len(ht.valid)
        kp[:n, h] = ht.keypoints
        vis[:n, h] = ht.visibility.astype(np.float64)
        present[:n, h] = ht.valid
    model_pair = (models["left"], models["right"])
    if bounds is None:
        bounds = BiomechBounds.default(model_pair[1])
    return Scene(
        kp=torch.as_tensor(kp, dtype=torch.float64),
        vis=torch.as_tensor(vis, dtype=torch.float64),
        present=present,
        rot_slam=torch.as_tensor(camera.rotations, dtype=torch.float64),
        tau_slam=torch.as_tensor(camera.translations, dtype=torch.float64),
        intrinsics=torch.as_tensor(camera.intrinsics, dtype=torch.float64),
        models=model_pair,
        bounds=bounds,
        fps=camera.fps,
    )


def scene_forward(scene: Scene, theta: torch.Tensor, beta: torch.Tensor, phi: torch.Tensor, tau: torch.Tensor):
    """LBS both hands: returns world vertices (T, 2, 778, 3), world joints
    (T, 2, 21, 3) and root-frame joints (T, 2, 21, 3) with the root motion
    removed (used by the biomechanical terms)."""
    t = theta.shape[0]
    verts, joints, local_joints = [], [], []
    for h in range(2):
        v, j, j_rest = lbs_extended(
            scene.models[h].tensors(), theta[:, h], beta[h].expand(t, -1), phi[:, h], tau[:, h]
        )
        rot_root = axis_angle_to_matrix(phi[:, h])  # (T, 3, 3)
        wrist_rest = j_rest[:, 0].unsqueeze(1)  # (T, 1, 3)
        j_local = (j - tau[:, h].unsqueeze(1) - wrist_rest) @ rot_root + wrist_rest
        verts.append(v)
        joints.append(j)
        local_joints.append(j_local)
    return torch.stack(verts, dim=1), torch.stack(joints, dim=1), torch.stack(local_joints, dim=1)


def effective_camera(scene: Scene, cam_rot_delta: torch.Tensor, cam_tau_delta: torch.Tensor):
    rot = axis_angle_to_matrix(cam_rot_delta) @ scene.rot_slam
    tau = scene.tau_slam + cam_tau_delta
    return rot, tau


# ---------------------------------------------------------------------------
# loss terms


def loss_2d(
    joints_world: torch.Tensor,
    rot_cam: torch.Tensor,
    tau_cam: torch.Tensor,
    omega: torch.Tensor,
    intrinsics: torch.Tensor,
    kp: torch.Tensor,
    vis: torch.Tensor,
    sigma_gm: float,
) -> torch.Tensor:
    """Robustified masked reprojection error.

    World joints go through the world->camera map with the scale factor,
    then pinhole projection; each visible joint contributes the
    Geman-McClure value of its residual norm.  Joints behind the camera
    are masked out for that frame (no exception)."""
    j_cam = torch.einsum("tij,thkj->thki", rot_cam, joints_world) + (omega * tau_cam)[:, None, None, :]
    depth_ok = (j_cam[..., 2] > 1e-6).detach()
    mask = vis * depth_ok
    z = torch.clamp(j_cam[..., 2], min=1e-9)
    px = intrinsics[0, 0] * j_cam[..., 0] / z + intrinsics[0, 2]
    py = intrinsics[1, 1] * j_cam[..., 1] / z + intrinsics[1, 2]
    proj = torch.stack([px, py], dim=-1)
    kp_safe = torch.where(mask.unsqueeze(-1) > 0, kp, torch.zeros_like(kp))
    proj_safe = torch.where(mask.unsqueeze(-1) > 0, proj, torch.zeros_like(proj))
    r_sq = ((proj_safe - kp_safe) ** 2).sum(dim=-1)
    return (mask * geman_mcclure_sq(r_sq, sigma_gm)).sum()


def loss_smooth(joints_world: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Temporal smoothness: squared joint displacement plus the squared
    summed per-joint geodesic pose step, per frame pair and hand."""
    if joints_world.shape[0] < 2:
        return joints_world.sum() * 0.0
    dj = joints_world[1:] - joints_world[:-1]
    joint_term = (dj**2).sum()
    rot = axis_angle_to_matrix(theta)  # (T, H, 15, 3, 3)
    d = _pairwise_geodesic(rot[:-1], rot[1:])  # (T-1, H, 15)
    pose_term = (d.sum(dim=-1) ** 2).sum()
    return joint_term + pose_term


def loss_cam(rot_cam: torch.Tensor, tau_cam: torch.Tensor) -> torch.Tensor:
    """Camera smoothness: squared geodesic rotation steps plus squared
    translation steps (SLAM units)."""
    if rot_cam.shape[0] < 2:
        return tau_cam.sum() * 0.0
    d_rot = _pairwise_geodesic(rot_cam[:-1], rot_cam[1:])
    d_tau = tau_cam[1:] - tau_cam[:-1]
    return (d_rot**2).sum() + (d_tau**2).sum()


def loss_pose(theta: torch.Tensor) -> torch.Tensor:
    return (theta**2).sum()


def loss_shape(beta: torch.Tensor) -> torch.Tensor:
    return (beta**2).sum()


def loss_pose_shape(theta: torch.Tensor, beta: torch.Tensor, config: ObjectiveConfig) -> torch.Tensor:
    return config.lambda_theta * loss_pose(theta) + config.lambda_beta * loss_shape(beta)


def loss_prior(
    z: torch.Tensor,
    mu: torch.Tensor,
    sigma: torch.Tensor,
    phi: torch.Tensor,
    tau: torch.Tensor,
    anchor_phi: torch.Tensor,
    anchor_tau: torch.Tensor,
    config: ObjectiveConfig,
) -> torch.Tensor:
    """lambda_z * NLL(z) + lambda_phi * geodesic consistency to the frozen
    orientation anchors + lambda_tau * squared translation consistency."""
    term_z = prior_nll(z, mu, sigma)
    d_phi = _pairwise_geodesic(axis_angle_to_matrix(phi), axis_angle_to_matrix(anchor_phi))
    term_phi = d_phi.sum()
    term_tau = ((tau - anchor_tau) ** 2).sum()
    return config.lambda_z * term_z + config.lambda_phi * term_phi + config.lambda_tau * term_tau


def _bone_angles(frames: dict, theta_h: torch.Tensor):
    """Flexion/abduction angles per articulated joint from the joint's
    local rotation applied to the rest-pose bone axis."""
    rot = axis_angle_to_matrix(theta_h)  # (T, 15, 3, 3)
    d = (rot @ frames["b0"].unsqueeze(-1)).squeeze(-1)  # (T, 15, 3)
    proj_x = (d * frames["x"]).sum(dim=-1)
    proj_y = (d * frames["y"]).sum(dim=-1)
    proj_z = (d * frames["z"]).sum(dim=-1)
    flexion = torch.atan2(proj_z, proj_x)
    abduction = torch.pi / 2.0 - acos_guarded(proj_y.clamp(-1.0, 1.0))
    return flexion, abduction


def _build_bone_frames(model: HandModel) -> dict:
    children = model.child_joints()
    rest = model.rest_joints()
    b0 = np.zeros((NUM_ARTICULATED, 3))
    valid = np.zeros(NUM_ARTICULATED, dtype=bool)
    x = np.zeros((NUM_ARTICULATED, 3))
    y = np.zeros((NUM_ARTICULATED, 3))
    z = np.zeros((NUM_ARTICULATED, 3))
    for j in range(1, NUM_KIN_JOINTS):
        d = rest[children[j]] - rest[j]
        n = np.linalg.norm(d)
        if n < 1e-9:
            continue  # degenerate rest bone: angle terms skipped, length still penalized
        b = d / n
        ref = np.array([0.0, 0.0, 1.0]) if abs(b[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
        yv = np.cross(b, ref)
        yv /= np.linalg.norm(yv)
        zv = np.cross(b, yv)
        b0[j - 1], x[j - 1], y[j - 1], z[j - 1] = b, b, yv, zv
        valid[j - 1] = True
    palm = _palm_bones(model)
    palm_rest = []
    for j in palm:
        d = rest[j] - rest[0]
        palm_rest.append(d / max(np.linalg.norm(d), 1e-12))
    return {
        "b0": torch.as_tensor(b0, dtype=torch.float64),
        "x": torch.as_tensor(x, dtype=torch.float64),
        "y": torch.as_tensor(y, dtype=torch.float64),
        "z": torch.as_tensor(z, dtype=torch.float64),
        "valid": torch.as_tensor(valid.astype(np.float64), dtype=torch.float64),
        "children": torch.as_tensor(children, dtype=torch.int64),
        "palm_bones": palm,
        "palm_rest": torch.as_tensor(np.stack(palm_rest), dtype=torch.float64),
    }


def _unit(v: torch.Tensor) -> torch.Tensor:
    return v / torch.sqrt((v * v).sum(dim=-1, keepdim=True) + 1e-24)


def loss_bio(
    scene: Scene,
    theta: torch.Tensor,
    joints_local: torch.Tensor,
) -> tuple:
    """Joint-angle hull, bone-length interval and palm terms; returns the
    three components separately (ja, bl, palm)."""
    bounds = scene.bounds
    ja = torch.zeros((), dtype=torch.float64)
    bl = torch.zeros((), dtype=torch.float64)
    palm = torch.zeros((), dtype=torch.float64)
    for h in range(2):
        frames = scene.bone_frames(h)
        flexion, abduction = _bone_angles(frames, theta[:, h])  # (T, 15)
        if h == 0:
            abduction = -abduction  # mirror geometry flips the splay sign
        for j in range(NUM_ARTICULATED):
            if float(frames["valid"][j]) == 0.0:
                continue
            hull = torch.as_tensor(bounds.hulls[j], dtype=torch.float64)
            pts = torch.stack([flexion[:, j], abduction[:, j]], dim=-1)
            ja = ja + point_hull_dist_sq(pts, hull).sum()
        children = frames["children"]
        j_par = joints_local[:, h, 1:NUM_KIN_JOINTS]  # (T, 15, 3)
        j_child = joints_local[:, h][:, children[1:]]  # (T, 15, 3)
        seg = j_child - j_par
        lengths = torch.sqrt((seg**2).sum(dim=-1) + 1e-24)
        lo = torch.as_tensor(bounds.bone_len[:, 0], dtype=torch.float64)
        hi = torch.as_tensor(bounds.bone_len[:, 1], dtype=torch.float64)
        bl = bl + interval_loss(lengths, lo, hi).sum()

        pb = frames["palm_bones"]
        pdir = _unit(joints_local[:, h][:, pb] - joints_local[:, h][:, :1])  # (T, 4, 3)
        pair_cos = (pdir[:, :-1] * pdir[:, 1:]).sum(dim=-1).clamp(-1.0, 1.0)
        pair_ang = acos_guarded(pair_cos)
        c_lo = torch.as_tensor(bounds.palm_curv[:, 0], dtype=torch.float64)
        c_hi = torch.as_tensor(bounds.palm_curv[:, 1], dtype=torch.float64)
        palm = palm + interval_loss(pair_ang, c_lo, c_hi).sum()
        dev_cos = (pdir * frames["palm_rest"]).sum(dim=-1).clamp(-1.0, 1.0)
        dev_ang = acos_guarded(dev_cos)
        a_lo = torch.as_tensor(bounds.palm_ang[:, 0], dtype=torch.float64)
        a_hi = torch.as_tensor(bounds.palm_ang[:, 1], dtype=torch.float64)
        palm = palm + interval_loss(dev_ang, a_lo, a_hi).sum()
    return ja, bl, palm


def loss_pen(
    verts_left: torch.Tensor,
    verts_right: torch.Tensor,
    faces_left: np.ndarray,
    faces_right: np.ndarray,
    present: np.ndarray | None = None,
) -> torch.Tensor:
    """Interpenetration: for each frame where both hands are present,
    vertices of one hand strictly inside the other closed mesh contribute
    their squared distance to the nearest vertex of that mesh (both
    directions).  The inside sets are detached; distances carry gradient."""
    t = verts_left.shape[0]
    total = torch.zeros((), dtype=torch.float64)
    vl_np = verts_left.detach().numpy()
    vr_np = verts_right.detach().numpy()
    for f in range(t):
        if present is not None and not (bool(present[f, 0]) and bool(present[f, 1])):
            continue
        if mesh_aabb_gap(vl_np[f], vr_np[f]) > 0.0:
            continue
        inside_r = points_in_mesh(vr_np[f], vl_np[f], faces_left)
        inside_l = points_in_mesh(vl_np[f], vr_np[f], faces_right)
        if inside_r.any():
            d = torch.cdist(verts_right[f][inside_r], verts_left[f])
            total = total + (d.min(dim=1).values ** 2).sum()
        if inside_l.any():
            d = torch.cdist(verts_left[f][inside_l], verts_right[f])
            total = total + (d.min(dim=1).values ** 2).sum()
    return total


# ---------------------------------------------------------------------------
# stage totals


def stage2_terms(scene: Scene, varset: dict, config: ObjectiveConfig, hand: int | None = None) -> dict:
    """Raw (unweighted) Stage II terms.  ``hand`` restricts the
    hand-dependent sums to one hand for the independent root phase."""
    theta, beta = varset["theta"], varset["beta"]
    phi, tau = varset["phi"], varset["tau"]
    rot_cam, tau_cam = effective_camera(scene, varset["cam_rot"], varset["cam_tau"])
    _, joints, _ = scene_forward(scene, theta, beta, phi, tau)
    vis = scene.vis
    if hand is not None:
        sel = torch.zeros_like(vis)
        sel[:, hand] = vis[:, hand]
        vis = sel
        joints_s = joints[:, hand : hand + 1]
        theta_s = theta[:, hand : hand + 1]
        beta_s = beta[hand : hand + 1]
    else:
        joints_s, theta_s, beta_s = joints, theta, beta
    return {
        "l2d": loss_2d(joints, rot_cam, tau_cam, varset["omega"], scene.intrinsics, scene.kp, vis, config.sigma_gm),
        "smooth": loss_smooth(joints_s, theta_s),
        "cam": loss_cam(rot_cam, tau_cam),
        "pose": loss_pose(theta_s),
        "shape": loss_shape(beta_s),
    }


def total_stage2(
    scene: Scene,
    varset: dict,
    config: ObjectiveConfig,
    hand: int | None = None,
    lambda_smooth: float | None = None,
) -> tuple:
    terms = stage2_terms(scene, varset, config, hand=hand)
    ls = config.lambda_smooth if lambda_smooth is None else lambda_smooth
    total = (
        config.lambda_2d * terms["l2d"]
        + ls * terms["smooth"]
        + config.lambda_cam * terms["cam"]
        + config.lambda_theta * terms["pose"]
        + config.lambda_beta * terms["shape"]
    )
    return total, terms


def stage3_terms(
    scene: Scene,
    varset: dict,
    config: ObjectiveConfig,
    prior: MotionPrior,
    anchors: dict,
) -> dict:
    """Raw Stage III terms. ``theta = decode(z) + theta_corr`` per hand;
    the pose-magnitude prior penalizes the correction."""
    t = scene.num_frames
    decoded = torch.stack([prior.decode_t(varset["z"][h], t) for h in range(2)], dim=1)
    theta = decoded + varset["theta_corr"]
    beta = varset["beta"]
    phi, tau = varset["phi"], varset["tau"]
    rot_cam, tau_cam = effective_camera(scene, varset["cam_rot"], varset["cam_tau"])
    verts, joints, joints_local = scene_forward(scene, theta, beta, phi, tau)
    d_phi = _pairwise_geodesic(axis_angle_to_matrix(phi), axis_angle_to_matrix(anchors["phi"]))
    ja, bl, palm = loss_bio(scene, theta, joints_local)
    return {
        "l2d": loss_2d(
            joints, rot_cam, tau_cam, varset["omega"], scene.intrinsics, scene.kp, scene.vis, config.sigma_gm
        ),
        "smooth": loss_smooth(joints, theta),
        "cam": loss_cam(rot_cam, tau_cam),
        "pose": loss_pose(varset["theta_corr"]),
        "shape": loss_shape(beta),
        "z": prior_nll(varset["z"], anchors["mu"], anchors["sigma"]),
        "phi_cons": d_phi.sum(),
        "tau_cons": ((tau - anchors["tau"]) ** 2).sum(),
        "pen": loss_pen(
            verts[:, 0], verts[:, 1], scene.models[0].faces, scene.models[1].faces, present=scene.present
        ),
        "ja": ja,
        "bl": bl,
        "palm": palm,
        "_theta": theta,
    }


def total_stage3(
    scene: Scene,
    varset: dict,
    config: ObjectiveConfig,
    prior: MotionPrior,
    anchors: dict,
) -> tuple:
    terms = stage3_terms(scene, varset, config, prior, anchors)
    total = (
        config.lambda_z * terms["z"]
        + config.lambda_phi * terms["phi_cons"]
        + config.lambda_tau * terms["tau_cons"]
        + config.lambda_pen * terms["pen"]
        + config.lambda_ja * terms["ja"]
        + config.lambda_bl * terms["bl"]
        + config.lambda_palm * terms["palm"]
        + config.lambda_2d * terms["l2d"]
        + config.lambda_smooth * terms["smooth"]
        + config.lambda_cam * terms["cam"]
        + config.lambda_theta * terms["pose"]
        + config.lambda_beta * terms["shape"]
    )
    return total, terms
