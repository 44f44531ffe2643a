"""Parametric hand model: loading, validation and forward kinematics.

The model maps pose/shape parameters to a 778-vertex mesh via shape
blending plus linear blend skinning, and to 21 joints through a linear
regressor applied to the posed vertices.  Pose-corrective blendshapes are
deliberately not applied; converters may store them, flagged inactive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from hand4d.container import read_container, write_container
from hand4d.errors import FormatError, ValidationError
from hand4d.geometry import axis_angle_to_matrix

NUM_VERTICES = 778
NUM_KIN_JOINTS = 16
NUM_JOINTS = 21
NUM_ARTICULATED = 15
NUM_SHAPE = 10

_ROW_SUM_TOL = 1e-6


def canonicalize_axis_angle(v: np.ndarray) -> np.ndarray:
    """Wrap an axis-angle vector to magnitude <= pi (same rotation)."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v)
    if theta <= np.pi:
        return v.copy()
    wrapped = np.fmod(theta, 2.0 * np.pi)
    if wrapped > np.pi:
        wrapped -= 2.0 * np.pi
    return v * (wrapped / theta)


@dataclass
class HandState:
    """Per-frame parameter block: local pose, shape, root orientation and
    translation, plus which hand it belongs to."""

    theta: np.ndarray  # (15, 3) axis-angle, radians
    beta: np.ndarray  # (10,)
    phi: np.ndarray  # (3,) axis-angle, radians
    tau: np.ndarray  # (3,) meters
    handedness: str = "right"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(NUM_ARTICULATED, 3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(NUM_SHAPE)
        self.phi = np.asarray(self.phi, dtype=np.float64).reshape(3)
        self.tau = np.asarray(self.tau, dtype=np.float64).reshape(3)
        if self.handedness not in ("left", "right"):
            raise ValidationError(f"handedness must be left or right, got {self.handedness!r}")

    def validate(self) -> "HandState":
        for name in ("theta", "beta", "phi", "tau"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValidationError(f"HandState.{name} contains non-finite values")
        return self

    def canonicalized(self) -> "HandState":
        theta = np.stack([canonicalize_axis_angle(row) for row in self.theta])
        return replace(self, theta=theta, phi=canonicalize_axis_angle(self.phi))


@dataclass
class HandTrajectory:
    """Stacked per-frame states for one hand; shape is shared across frames."""

    theta: np.ndarray  # (T, 15, 3)
    phi: np.ndarray  # (T, 3)
    tau: np.ndarray  # (T, 3)
    beta: np.ndarray  # (10,) shared
    frame_rate: float = 30.0
    handedness: str = "right"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.tau = np.asarray(self.tau, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(NUM_SHAPE)
        t = self.theta.shape[0]
        if self.theta.shape != (t, NUM_ARTICULATED, 3) or self.phi.shape != (t, 3) or self.tau.shape != (t, 3):
            raise ValidationError("HandTrajectory arrays have inconsistent shapes")

    @property
    def num_frames(self) -> int:
        return self.theta.shape[0]

    @property
    def states(self) -> list[HandState]:
        return [self.state(t) for t in range(self.num_frames)]

    def state(self, t: int) -> HandState:
        return HandState(
            theta=self.theta[t], beta=self.beta, phi=self.phi[t], tau=self.tau[t], handedness=self.handedness
        )

    @classmethod
    def from_states(cls, states: list[HandState], frame_rate: float = 30.0) -> "HandTrajectory":
        if not states:
            raise ValidationError("HandTrajectory.from_states: empty state list")
        beta = states[0].beta
        for s in states[1:]:
            if not np.allclose(s.beta, beta, atol=1e-12):
                raise ValidationError("HandTrajectory: shape coefficients must be identical across frames")
            if s.handedness != states[0].handedness:
                raise ValidationError("HandTrajectory: mixed handedness")
        return cls(
            theta=np.stack([s.theta for s in states]),
            phi=np.stack([s.phi for s in states]),
            tau=np.stack([s.tau for s in states]),
            beta=beta.copy(),
            frame_rate=frame_rate,
            handedness=states[0].handedness,
        )

    def sliced(self, start: int, stop: int) -> "HandTrajectory":
        return HandTrajectory(
            theta=self.theta[start:stop].copy(),
            phi=self.phi[start:stop].copy(),
            tau=self.tau[start:stop].copy(),
            beta=self.beta.copy(),
            frame_rate=self.frame_rate,
            handedness=self.handedness,
        )

    def copy(self) -> "HandTrajectory":
        return self.sliced(0, self.num_frames)


@dataclass
class HandModel:
    """Frozen model assets behind the forward map."""

    template_vertices: np.ndarray  # (778, 3) meters, rest pose
    faces: np.ndarray  # (F, 3) uint32
    shape_basis: np.ndarray  # (778, 3, 10)
    skinning_weights: np.ndarray  # (778, 16)
    joint_regressor: np.ndarray  # (21, 778) row-stochastic
    kinematic_parents: np.ndarray  # (16,) int32, parents[0] == -1
    handedness: str = "right"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def validate(self) -> "HandModel":
        if self.template_vertices.shape != (NUM_VERTICES, 3):
            raise ValidationError(f"template has shape {self.template_vertices.shape}, expected (778, 3)")
        if self.shape_basis.shape != (NUM_VERTICES, 3, NUM_SHAPE):
            raise ValidationError(f"shape basis has shape {self.shape_basis.shape}")
        if self.skinning_weights.shape != (NUM_VERTICES, NUM_KIN_JOINTS):
            raise ValidationError(f"skinning weights have shape {self.skinning_weights.shape}")
        if self.joint_regressor.shape != (NUM_JOINTS, NUM_VERTICES):
            raise ValidationError(f"joint regressor has shape {self.joint_regressor.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError("faces must be (F, 3)")
        if self.faces.size and int(self.faces.max()) >= NUM_VERTICES:
            raise ValidationError("faces index past the last vertex")
        if self.handedness not in ("left", "right"):
            raise ValidationError(f"handedness must be left or right, got {self.handedness!r}")
        if (self.skinning_weights < -1e-9).any():
            raise ValidationError("skinning weights must be nonnegative")
        if (self.joint_regressor < -1e-9).any():
            raise ValidationError("joint regressor must be nonnegative")
        skin_sums = self.skinning_weights.sum(axis=1)
        if np.abs(skin_sums - 1.0).max() > _ROW_SUM_TOL:
            raise ValidationError("skinning weight rows must sum to 1 within 1e-6")
        reg_sums = self.joint_regressor.sum(axis=1)
        if np.abs(reg_sums - 1.0).max() > _ROW_SUM_TOL:
            raise ValidationError("joint regressor rows must sum to 1 within 1e-6")
        self._validate_tree()
        for name in ("template_vertices", "shape_basis", "skinning_weights", "joint_regressor"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValidationError(f"{name} contains non-finite values")
        return self

    def _validate_tree(self):
        parents = self.kinematic_parents
        if parents.shape != (NUM_KIN_JOINTS,):
            raise ValidationError(f"kinematic parents have shape {parents.shape}")
        if parents[0] != -1:
            raise ValidationError("joint 0 (wrist) must have parent -1")
        for j in range(1, NUM_KIN_JOINTS):
            p = int(parents[j])
            if not 0 <= p < NUM_KIN_JOINTS:
                raise ValidationError(f"joint {j} has out-of-range parent {p}")
        # walk to the root from every joint; a cycle never reaches -1
        for j in range(NUM_KIN_JOINTS):
            seen = set()
            k = j
            while k != -1:
                if k in seen:
                    raise ValidationError("kinematic parents contain a cycle")
                seen.add(k)
                k = int(parents[k]) if k != 0 else -1

    def child_joints(self) -> np.ndarray:
        """Output-joint index of each kinematic joint's single child.

        Leaf kinematic joints map to fingertip rows 16..20 in ascending
        leaf order; the wrist (multiple children) maps to -1.
        """
        if "children" in self._cache:
            return self._cache["children"]
        kin_children: list[list[int]] = [[] for _ in range(NUM_KIN_JOINTS)]
        for j in range(1, NUM_KIN_JOINTS):
            kin_children[int(self.kinematic_parents[j])].append(j)
        leaves = [j for j in range(1, NUM_KIN_JOINTS) if not kin_children[j]]
        if len(leaves) != 5:
            raise ValidationError(f"expected 5 leaf joints (fingertips), found {len(leaves)}")
        tip_row = {leaf: NUM_KIN_JOINTS + i for i, leaf in enumerate(sorted(leaves))}
        out = np.full(NUM_KIN_JOINTS, -1, dtype=np.int64)
        for j in range(1, NUM_KIN_JOINTS):
            if len(kin_children[j]) > 1:
                raise ValidationError(f"joint {j} has multiple children; chains expected past the wrist")
            out[j] = kin_children[j][0] if kin_children[j] else tip_row[j]
        self._cache["children"] = out
        return out

    def rest_joints(self, beta: np.ndarray | None = None) -> np.ndarray:
        """All 21 rest-pose joint positions, optionally shaped by beta."""
        v = self.template_vertices
        if beta is not None:
            v = v + self.shape_basis @ np.asarray(beta, dtype=np.float64)
        return self.joint_regressor @ v

    def mirrored(self) -> "HandModel":
        """The opposite-handedness model: template and shape basis mirrored
        across the x plane, faces rewound to keep normals outward."""
        template = self.template_vertices.copy()
        template[:, 0] *= -1.0
        basis = self.shape_basis.copy()
        basis[:, 0, :] *= -1.0
        faces = self.faces[:, [0, 2, 1]].copy()
        return HandModel(
            template_vertices=template,
            faces=faces,
            shape_basis=basis,
            skinning_weights=self.skinning_weights.copy(),
            joint_regressor=self.joint_regressor.copy(),
            kinematic_parents=self.kinematic_parents.copy(),
            handedness="left" if self.handedness == "right" else "right",
        )

    def tensors(self) -> dict:
        """Cached float64 torch copies of the arrays the forward pass needs."""
        if "tensors" not in self._cache:
            self._cache["tensors"] = {
                "template": torch.as_tensor(self.template_vertices, dtype=torch.float64),
                "shape_basis": torch.as_tensor(self.shape_basis, dtype=torch.float64),
                "skinning": torch.as_tensor(self.skinning_weights, dtype=torch.float64),
                "regressor": torch.as_tensor(self.joint_regressor, dtype=torch.float64),
                "parents": [int(p) for p in self.kinematic_parents],
            }
        return self._cache["tensors"]


def save_model(path, model: HandModel) -> None:
    arrays = {
        "template": model.template_vertices.astype(np.float64),
        "faces": model.faces.astype(np.uint32),
        "shape_basis": model.shape_basis.astype(np.float64),
        "skinning": model.skinning_weights.astype(np.float64),
        "regressor": model.joint_regressor.astype(np.float64),
        "parents": model.kinematic_parents.astype(np.int32),
        "handedness": np.frombuffer(model.handedness.encode("utf-8"), dtype=np.uint8),
    }
    write_container(path, arrays, meta={"kind": "hand_model", "handedness": model.handedness})


def load_model(path) -> HandModel:
    """Load and validate a neutral model file."""
    arrays, meta = read_container(path)
    required = ["template", "faces", "shape_basis", "skinning", "regressor", "parents"]
    missing = [name for name in required if name not in arrays]
    if missing:
        raise FormatError(f"{path}: missing arrays {missing}")
    if "handedness" in arrays:
        handedness = bytes(arrays["handedness"].astype(np.uint8)).decode("utf-8")
    else:
        handedness = meta.get("handedness", "right")
    model = HandModel(
        template_vertices=arrays["template"].astype(np.float64),
        faces=arrays["faces"].astype(np.uint32),
        shape_basis=arrays["shape_basis"].astype(np.float64),
        skinning_weights=arrays["skinning"].astype(np.float64),
        joint_regressor=arrays["regressor"].astype(np.float64),
        kinematic_parents=arrays["parents"].astype(np.int32),
        handedness=handedness,
    )
    return model.validate()


def lbs_extended(tensors: dict, theta: torch.Tensor, beta: torch.Tensor, phi: torch.Tensor, tau: torch.Tensor):
    """Batched differentiable forward pass, also returning the shaped rest
    joints (B, 16, 3) needed to factor the root motion back out.

    theta (B, 15, 3), beta (B, 10), phi (B, 3), tau (B, 3) ->
    vertices (B, 778, 3), joints (B, 21, 3), rest joints (B, 16, 3).
    """
    template = tensors["template"]
    parents = tensors["parents"]
    v_shaped = template.unsqueeze(0) + torch.einsum("vcs,bs->bvc", tensors["shape_basis"], beta)
    j_rest = torch.einsum("jv,bvc->bjc", tensors["regressor"][:NUM_KIN_JOINTS], v_shaped)

    rots = axis_angle_to_matrix(torch.cat([phi.unsqueeze(1), theta], dim=1))  # (B, 16, 3, 3)
    g_rot = [rots[:, 0]]
    g_pos = [j_rest[:, 0]]
    for j in range(1, NUM_KIN_JOINTS):
        p = parents[j]
        offset = j_rest[:, j] - j_rest[:, p]
        g_rot.append(g_rot[p] @ rots[:, j])
        g_pos.append((g_rot[p] @ offset.unsqueeze(-1)).squeeze(-1) + g_pos[p])
    rot_world = torch.stack(g_rot, dim=1)  # (B, 16, 3, 3)
    pos_world = torch.stack(g_pos, dim=1)  # (B, 16, 3)
    # skinning transform: x -> R_j (x - j_rest_j) + pos_j
    t_world = pos_world - (rot_world @ j_rest.unsqueeze(-1)).squeeze(-1)

    w = tensors["skinning"]
    rot_blend = torch.einsum("vk,bkij->bvij", w, rot_world)
    t_blend = torch.einsum("vk,bkc->bvc", w, t_world)
    verts = (rot_blend @ v_shaped.unsqueeze(-1)).squeeze(-1) + t_blend
    joints = torch.einsum("jv,bvc->bjc", tensors["regressor"], verts)
    return verts + tau.unsqueeze(1), joints + tau.unsqueeze(1), j_rest


def lbs(tensors: dict, theta: torch.Tensor, beta: torch.Tensor, phi: torch.Tensor, tau: torch.Tensor):
    """Batched forward pass -> vertices (B, 778, 3), joints (B, 21, 3)."""
    verts, joints, _ = lbs_extended(tensors, theta, beta, phi, tau)
    return verts, joints


def forward(model: HandModel, state: HandState):
    """Vertices and joints for a single validated state (numpy in/out)."""
    state.validate()
    verts, joints = lbs(
        model.tensors(),
        torch.as_tensor(state.theta, dtype=torch.float64).unsqueeze(0),
        torch.as_tensor(state.beta, dtype=torch.float64).unsqueeze(0),
        torch.as_tensor(state.phi, dtype=torch.float64).unsqueeze(0),
        torch.as_tensor(state.tau, dtype=torch.float64).unsqueeze(0),
    )
    return verts[0].numpy(), joints[0].numpy()


def forward_batch(model: HandModel, traj: HandTrajectory):
    """Frame-wise forward over a trajectory -> (T, 778, 3), (T, 21, 3)."""
    t = traj.num_frames
    verts, joints = lbs(
        model.tensors(),
        torch.as_tensor(traj.theta, dtype=torch.float64),
        torch.as_tensor(np.broadcast_to(traj.beta, (t, NUM_SHAPE)).copy(), dtype=torch.float64),
        torch.as_tensor(traj.phi, dtype=torch.float64),
        torch.as_tensor(traj.tau, dtype=torch.float64),
    )
    return verts.numpy(), joints.numpy()
