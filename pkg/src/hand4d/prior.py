"""Motion prior: slerp-based infilling and a latent sequence prior.

The latent prior ships as a linear-Gaussian surrogate: a PCA basis over
flattened per-frame 6D joint-rotation features with a diagonal Gaussian
over the coefficients.  It exposes the same encode/decode contract a
pretrained neural prior would, with a 128-wide latent and a fixed 128
frame window, so swapping real weights in is a file-level substitution.
The decoder never produces root orientation or translation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from hand4d.container import read_container, write_container
from hand4d.errors import FormatError, ValidationError
from hand4d.geometry import axis_angle_to_matrix, matrix_to_axis_angle, slerp
from hand4d.hand_model import NUM_ARTICULATED, HandTrajectory

LATENT_DIM = 128
WINDOW = 128
MAX_INFILL_GAP = 50
_FEATURE_SPEC = f"rot6d[{NUM_ARTICULATED} joints] x {WINDOW} frames"
_FEATURE_DIM = WINDOW * NUM_ARTICULATED * 6
_SIGMA_FLOOR = 1e-3


def infill_slerp(traj: HandTrajectory, gaps: list, max_gap: int = MAX_INFILL_GAP):
    """Fill missing intervals by per-joint slerp and linear translation.

    Interior gaps shorter than ``max_gap`` frames are interpolated between
    their boundary states; longer interior gaps are left untouched (they
    stay masked).  Gaps touching a sequence boundary are held constant
    from the single available side.  Returns ``(trajectory, filled_mask)``.
    """
    t = traj.num_frames
    out = traj.copy()
    filled = np.zeros(t, dtype=bool)
    for start, stop in gaps:
        if start == stop:
            continue
        left = start - 1
        right = stop
        if left < 0 and right >= t:
            continue  # nothing observed at all
        if left < 0 or right >= t:
            src = right if left < 0 else left
            out.theta[start:stop] = traj.theta[src]
            out.phi[start:stop] = traj.phi[src]
            out.tau[start:stop] = traj.tau[src]
            filled[start:stop] = True
            continue
        if stop - start >= max_gap:
            continue
        alphas = (np.arange(start, stop) - left) / float(right - left)
        rot_l = axis_angle_to_matrix(traj.theta[left])  # (15, 3, 3)
        rot_r = axis_angle_to_matrix(traj.theta[right])
        phi_l = axis_angle_to_matrix(traj.phi[left])
        phi_r = axis_angle_to_matrix(traj.phi[right])
        for k, a in zip(range(start, stop), alphas):
            out.theta[k] = np.stack(
                [matrix_to_axis_angle(slerp(rot_l[j], rot_r[j], a)) for j in range(NUM_ARTICULATED)]
            )
            out.phi[k] = matrix_to_axis_angle(slerp(phi_l, phi_r, a))
            out.tau[k] = (1.0 - a) * traj.tau[left] + a * traj.tau[right]
        filled[start:stop] = True
    return out, filled


def pose_to_rot6d(theta: torch.Tensor) -> torch.Tensor:
    """(..., J, 3) axis-angle -> (..., J, 6): first two matrix columns."""
    m = axis_angle_to_matrix(theta)
    return torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1)


def rot6d_to_matrix(feat: torch.Tensor) -> torch.Tensor:
    """Gram-Schmidt recovery of rotation matrices from 6D features."""
    a1 = feat[..., :3]
    a2 = feat[..., 3:]
    b1 = a1 / torch.clamp(a1.norm(dim=-1, keepdim=True), min=1e-12)
    a2p = a2 - (b1 * a2).sum(dim=-1, keepdim=True) * b1
    b2 = a2p / torch.clamp(a2p.norm(dim=-1, keepdim=True), min=1e-12)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def nll(z, mu, sigma):
    """Diagonal-Gaussian negative log-likelihood up to an additive constant:
    sum_d [log sigma_d + (z_d - mu_d)^2 / (2 sigma_d^2)]."""
    tz = z if torch.is_tensor(z) else torch.as_tensor(np.asarray(z, dtype=np.float64))
    tm = mu if torch.is_tensor(mu) else torch.as_tensor(np.asarray(mu, dtype=np.float64))
    ts = sigma if torch.is_tensor(sigma) else torch.as_tensor(np.asarray(sigma, dtype=np.float64))
    if (ts <= 0).any():
        raise ValidationError("nll: sigma must be positive elementwise")
    val = (torch.log(ts) + (tz - tm) ** 2 / (2.0 * ts * ts)).sum()
    if torch.is_tensor(z):
        return val
    return float(val)


@dataclass
class MotionPrior:
    """Linear-Gaussian latent prior over fixed-length local pose windows."""

    basis: np.ndarray  # (128, D) rows orthonormal where nonzero
    mean: np.ndarray  # (D,)
    sigma: np.ndarray  # (128,) positive
    feature_spec: str = _FEATURE_SPEC

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.basis.shape != (LATENT_DIM, _FEATURE_DIM) or self.mean.shape != (_FEATURE_DIM,):
            raise ValidationError("prior arrays have unexpected shapes")
        if self.sigma.shape != (LATENT_DIM,) or (self.sigma <= 0).any():
            raise ValidationError("prior sigma must be positive with width 128")
        self._basis_t = torch.as_tensor(self.basis, dtype=torch.float64)
        self._mean_t = torch.as_tensor(self.mean, dtype=torch.float64)

    def encode(self, theta_seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project a (T, 15, 3) pose window -> (mu 128, sigma 128).

        Windows shorter than 128 frames are padded by repeating the last
        frame; longer windows are rejected.
        """
        theta_seq = np.asarray(theta_seq, dtype=np.float64)
        t = theta_seq.shape[0]
        if t > WINDOW:
            raise ValidationError(f"encode: window of {t} frames exceeds {WINDOW}")
        if t < 1:
            raise ValidationError("encode: empty window")
        if t < WINDOW:
            pad = np.repeat(theta_seq[-1:], WINDOW - t, axis=0)
            theta_seq = np.concatenate([theta_seq, pad], axis=0)
        feats = pose_to_rot6d(torch.as_tensor(theta_seq, dtype=torch.float64)).numpy().reshape(-1)
        mu = self.basis @ (feats - self.mean)
        return mu, self.sigma.copy()

    def decode_t(self, z: torch.Tensor, num_frames: int = WINDOW) -> torch.Tensor:
        """Differentiable decode: latent -> (num_frames, 15, 3) axis-angle."""
        if num_frames > WINDOW:
            raise ValidationError(f"decode: {num_frames} frames exceeds the {WINDOW}-frame window")
        feats = self._mean_t + self._basis_t.transpose(0, 1) @ z
        feats = feats.reshape(WINDOW, NUM_ARTICULATED, 6)[:num_frames]
        return matrix_to_axis_angle(rot6d_to_matrix(feats))

    def decode(self, z: np.ndarray, num_frames: int = WINDOW) -> np.ndarray:
        return self.decode_t(torch.as_tensor(np.asarray(z, dtype=np.float64)), num_frames).numpy()

    def nll(self, z, mu):
        return nll(z, mu, torch.as_tensor(self.sigma) if torch.is_tensor(z) else self.sigma)


def surrogate_fit(sequences: list) -> MotionPrior:
    """Fit the linear-Gaussian surrogate on (T=128, 15, 3) pose sequences."""
    if len(sequences) < 2:
        raise ValidationError(f"surrogate_fit: need at least 2 sequences, got {len(sequences)}")
    rows = []
    for i, seq in enumerate(sequences):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.shape != (WINDOW, NUM_ARTICULATED, 3):
            raise ValidationError(f"surrogate_fit: sequence {i} has shape {seq.shape}, expected (128, 15, 3)")
        rows.append(pose_to_rot6d(torch.as_tensor(seq, dtype=torch.float64)).numpy().reshape(-1))
    data = np.stack(rows)
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = min(len(s), LATENT_DIM)
    basis = np.zeros((LATENT_DIM, _FEATURE_DIM))
    basis[:rank] = vt[:rank]
    sigma = np.full(LATENT_DIM, _SIGMA_FLOOR)
    sigma[:rank] = np.maximum(s[:rank] / np.sqrt(len(rows)), _SIGMA_FLOOR)
    return MotionPrior(basis=basis, mean=mean, sigma=sigma)


def save_prior(path, prior: MotionPrior) -> None:
    write_container(
        path,
        {"basis": prior.basis, "mean": prior.mean, "sigma": prior.sigma},
        meta={"kind": "motion_prior", "feature_spec": prior.feature_spec, "window": WINDOW, "latent": LATENT_DIM},
    )


def load_prior(path) -> MotionPrior:
    arrays, meta = read_container(path)
    for name in ("basis", "mean", "sigma"):
        if name not in arrays:
            raise FormatError(f"{path}: prior file missing array {name!r}")
    return MotionPrior(
        basis=arrays["basis"],
        mean=arrays["mean"],
        sigma=arrays["sigma"],
        feature_spec=str(meta.get("feature_spec", _FEATURE_SPEC)),
    )
