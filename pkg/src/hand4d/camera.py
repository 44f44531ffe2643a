"""Camera trajectory, world scale and the camera<->world state lifts.

Convention (stated in the file format too): each stored pose maps world
points into the camera frame, ``p_cam = R_t @ p_world + omega * tau_c_t``,
where ``tau_c_t`` is in SLAM translation units and the scalar ``omega``
converts those units to metric hand space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from hand4d.errors import FormatError, ValidationError
from hand4d.geometry import (
    axis_angle_to_matrix,
    matrix_to_axis_angle,
    orthonormality_error,
    polar_project,
    quaternion_to_matrix,
)
from hand4d.hand_model import HandState

DEFAULT_FOCAL = 1000.0

_ORTHO_ACCEPT = 1e-6
_ORTHO_PROJECT = 1e-3


def default_intrinsics(image_size=(1000.0, 1000.0)) -> np.ndarray:
    w, h = float(image_size[0]), float(image_size[1])
    return np.array(
        [[DEFAULT_FOCAL, 0.0, w / 2.0], [0.0, DEFAULT_FOCAL, h / 2.0], [0.0, 0.0, 1.0]], dtype=np.float64
    )


@dataclass
class CameraTrajectory:
    rotations: np.ndarray  # (T, 3, 3) world -> camera
    translations: np.ndarray  # (T, 3) SLAM units
    intrinsics: np.ndarray  # (3, 3)
    fps: float = 30.0

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.translations = np.asarray(self.translations, dtype=np.float64)
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)

    @property
    def num_frames(self) -> int:
        return self.rotations.shape[0]

    def validate(self) -> "CameraTrajectory":
        t = self.num_frames
        if t < 1:
            raise ValidationError("camera trajectory must have at least one frame")
        if self.rotations.shape != (t, 3, 3) or self.translations.shape != (t, 3):
            raise ValidationError("camera trajectory arrays have inconsistent shapes")
        if self.intrinsics.shape != (3, 3):
            raise ValidationError("intrinsics must be 3x3")
        for i in range(t):
            if orthonormality_error(self.rotations[i]) > _ORTHO_ACCEPT:
                raise ValidationError(f"camera rotation {i} is not orthonormal")
        return self

    def sliced(self, start: int, stop: int) -> "CameraTrajectory":
        return CameraTrajectory(
            rotations=self.rotations[start:stop].copy(),
            translations=self.translations[start:stop].copy(),
            intrinsics=self.intrinsics.copy(),
            fps=self.fps,
        )

    @classmethod
    def static(cls, num_frames: int, intrinsics=None, fps: float = 30.0) -> "CameraTrajectory":
        return cls(
            rotations=np.broadcast_to(np.eye(3), (num_frames, 3, 3)).copy(),
            translations=np.zeros((num_frames, 3)),
            intrinsics=default_intrinsics() if intrinsics is None else intrinsics,
            fps=fps,
        )


@dataclass(frozen=True)
class WorldScale:
    """Scalar ratio between SLAM translation units and metric hand units."""

    omega: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.omega) or self.omega <= 0:
            raise ValidationError(f"world scale must be positive, got {self.omega}")


def cam_to_world(state_cam: HandState, rotation, translation, omega: float) -> HandState:
    """Lift a camera-frame state to the world frame.

    phi_w = R^-1 composed with phi_c; tau_w = R^-1 tau_c - omega R^-1 tau^c.
    Local pose and shape are untouched.
    """
    r = np.asarray(rotation, dtype=np.float64)
    tc = np.asarray(translation, dtype=np.float64)
    r_inv = r.T
    phi_w = matrix_to_axis_angle(r_inv @ axis_angle_to_matrix(state_cam.phi))
    tau_w = r_inv @ state_cam.tau - omega * (r_inv @ tc)
    return replace(state_cam, phi=phi_w, tau=tau_w)


def world_to_cam(state_world: HandState, rotation, translation, omega: float) -> HandState:
    """Exact algebraic inverse of :func:`cam_to_world`."""
    r = np.asarray(rotation, dtype=np.float64)
    tc = np.asarray(translation, dtype=np.float64)
    phi_c = matrix_to_axis_angle(r @ axis_angle_to_matrix(state_world.phi))
    tau_c = r @ state_world.tau + omega * tc
    return replace(state_world, phi=phi_c, tau=tau_c)


def load_camera(path) -> CameraTrajectory:
    """Load a camera file (JSON, see the format note in the repo README).

    Rotations given as quaternions are normalized; rotations given as
    matrices are accepted as-is up to orthogonality error 1e-6,
    re-orthonormalized by polar projection up to 1e-3, and rejected beyond.
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    fps = float(doc.get("fps", 30.0))
    if "intrinsics" in doc:
        k = doc["intrinsics"]
        try:
            intrinsics = np.array(
                [[float(k["fx"]), 0.0, float(k["cx"])], [0.0, float(k["fy"]), float(k["cy"])], [0.0, 0.0, 1.0]]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed intrinsics") from exc
    else:
        intrinsics = default_intrinsics()

    if doc.get("static"):
        frames = int(doc.get("frames", 0))
        if frames < 1:
            raise FormatError(f"{path}: static camera file must declare a positive 'frames' count")
        return CameraTrajectory.static(frames, intrinsics=intrinsics, fps=fps).validate()

    poses = doc.get("poses")
    if not isinstance(poses, list) or not poses:
        raise FormatError(f"{path}: missing 'poses' array")
    records = []
    seen = set()
    for entry in poses:
        try:
            frame = int(entry["frame"])
            translation = np.array([float(v) for v in entry["translation"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed pose entry {entry!r}") from exc
        if translation.shape != (3,):
            raise FormatError(f"{path}: pose {frame}: translation must have 3 components")
        if frame in seen:
            raise FormatError(f"{path}: duplicate pose for frame {frame}")
        seen.add(frame)
        if "quaternion" in entry:
            q = np.array([float(v) for v in entry["quaternion"]], dtype=np.float64)
            if q.shape != (4,) or np.linalg.norm(q) < 1e-12:
                raise FormatError(f"{path}: pose {frame}: bad quaternion")
            rot = quaternion_to_matrix(q)
        elif "rotation" in entry:
            rot = np.array(entry["rotation"], dtype=np.float64).reshape(3, 3)
            err = orthonormality_error(rot)
            if err > _ORTHO_PROJECT:
                raise ValidationError(f"{path}: pose {frame}: rotation error {err:.2e} exceeds 1e-3")
            if err > _ORTHO_ACCEPT:
                rot = polar_project(rot)
        else:
            raise FormatError(f"{path}: pose {frame}: needs 'quaternion' or 'rotation'")
        records.append((frame, rot, translation))
    records.sort(key=lambda r: r[0])
    return CameraTrajectory(
        rotations=np.stack([r[1] for r in records]),
        translations=np.stack([r[2] for r in records]),
        intrinsics=intrinsics,
        fps=fps,
    ).validate()


def save_camera(path, camera: CameraTrajectory, static: bool = False) -> None:
    from hand4d.geometry import matrix_to_quaternion

    doc: dict = {
        "fps": camera.fps,
        "convention": "world_to_camera; p_cam = R @ p_world + omega * translation",
        "intrinsics": {
            "fx": camera.intrinsics[0, 0],
            "fy": camera.intrinsics[1, 1],
            "cx": camera.intrinsics[0, 2],
            "cy": camera.intrinsics[1, 2],
        },
    }
    if static:
        doc["static"] = True
        doc["frames"] = camera.num_frames
    else:
        doc["poses"] = [
            {
                "frame": t,
                "quaternion": matrix_to_quaternion(camera.rotations[t]).tolist(),
                "translation": camera.translations[t].tolist(),
            }
            for t in range(camera.num_frames)
        ]
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=1)
        f.write("\n")
