"""Quasi-Newton minimizer plus the staged variable-freezing schedules and
chunked optimization with state handoff.

The optimizer is deterministic: identical inputs and config produce
bit-identical outputs.  Inactive variable groups are never touched by a
phase (frozen groups stay byte-identical).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from hand4d.camera import CameraTrajectory
from hand4d.errors import SolverError, ValidationError
from hand4d.geometry import axis_angle_to_matrix, matrix_to_axis_angle
from hand4d.hand_model import NUM_ARTICULATED, NUM_SHAPE, HandTrajectory
from hand4d.objectives import ObjectiveConfig, Scene, build_scene, total_stage2, total_stage3
from hand4d.prior import LATENT_DIM, MotionPrior, infill_slerp
from hand4d.tracks import HANDS, CleanTrack, camera_frame_trajectory

_WOLFE_C1 = 1e-4
_WOLFE_C2 = 0.9
_MAX_LS_EVALS = 25


# ---------------------------------------------------------------------------
# L-BFGS


def lbfgs_minimize(
    objective,
    x0: np.ndarray,
    history: int = 10,
    max_iter: int = 100,
    grad_tol: float = 1e-8,
    step_tol: float = 1e-10,
    initial_step: float = 1.0,
    callback=None,
) -> tuple:
    """Minimize a differentiable scalar function over a flat vector.

    ``objective(x) -> (f, grad)``.  Uses the two-loop recursion with a
    strong Wolfe line search whose first trial step is ``initial_step``.
    Accepted objective values are monotone non-increasing.  Non-finite
    values during the line search shrink the trial step; if the search
    cannot find an acceptable point the best evaluated point is returned
    with a diagnostic flag.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = objective(x)
    if not np.isfinite(f) or not np.isfinite(g).all():
        raise SolverError("objective is not finite at the start point")
    evals = 1
    s_hist: list = []
    y_hist: list = []
    rho_hist: list = []
    status = "max_iter"
    n_iter = 0
    ls_failures = 0
    for n_iter in range(max_iter):
        g_norm = float(np.abs(g).max()) if g.size else 0.0
        if g_norm <= grad_tol:
            status = "grad_tol"
            break
        d = _two_loop(g, s_hist, y_hist, rho_hist)
        dphi0 = float(d @ g)
        if dphi0 >= 0:
            d = -g
            dphi0 = float(d @ g)
            s_hist, y_hist, rho_hist = [], [], []
        result = _strong_wolfe(objective, x, d, f, dphi0, initial_step)
        evals += result["evals"]
        if result["alpha"] is None:
            status = "line_search_failed"
            ls_failures += 1
            break
        alpha, f_new, g_new = result["alpha"], result["f"], result["g"]
        if not result["wolfe"]:
            ls_failures += 1
        step = alpha * d
        s = step
        y = g_new - g
        x = x + step
        if callback is not None:
            callback(n_iter, f_new, float(np.abs(g_new).max()), float(alpha))
        sy = float(s @ y)
        if sy > 1e-12 * max(float(np.linalg.norm(s)) * float(np.linalg.norm(y)), 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)
            if len(s_hist) > history:
                s_hist.pop(0)
                y_hist.pop(0)
                rho_hist.pop(0)
        f, g = f_new, g_new
        if float(np.abs(step).max()) <= step_tol:
            status = "step_tol"
            n_iter += 1
            break
    else:
        n_iter = max_iter
    diagnostics = {
        "iterations": n_iter,
        "evaluations": evals,
        "f": float(f),
        "grad_norm": float(np.abs(g).max()) if g.size else 0.0,
        "status": status,
        "line_search_failures": ls_failures,
    }
    return x, diagnostics


def _two_loop(g: np.ndarray, s_hist: list, y_hist: list, rho_hist: list) -> np.ndarray:
    q = -g.copy()
    if not s_hist:
        return q
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    gamma = float(s_hist[-1] @ y_hist[-1]) / max(float(y_hist[-1] @ y_hist[-1]), 1e-300)
    q *= gamma
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _strong_wolfe(objective, x, d, f0, dphi0, alpha0):
    """Bracketing strong Wolfe search (bisection zoom, deterministic)."""
    evals = 0

    def phi(alpha):
        nonlocal evals
        f, g = objective(x + alpha * d)
        evals += 1
        return f, g, (float(g @ d) if np.isfinite(f) else np.nan)

    best = {"alpha": None, "f": f0, "g": None, "wolfe": False}
    alpha_prev, f_prev, d_prev = 0.0, f0, dphi0
    g_prev = None
    alpha = float(alpha0)
    bracket = None
    for _ in range(_MAX_LS_EVALS):
        f_a, g_a, d_a = phi(alpha)
        if not np.isfinite(f_a):
            alpha = 0.5 * (alpha_prev + alpha)
            continue
        if f_a < best["f"]:
            best = {"alpha": alpha, "f": f_a, "g": g_a, "wolfe": False}
        if f_a > f0 + _WOLFE_C1 * alpha * dphi0 or (alpha_prev > 0.0 and f_a >= f_prev):
            bracket = (alpha_prev, f_prev, d_prev, g_prev, alpha, f_a, d_a, g_a)
            break
        if abs(d_a) <= -_WOLFE_C2 * dphi0:
            return {"alpha": alpha, "f": f_a, "g": g_a, "wolfe": True, "evals": evals}
        if d_a >= 0:
            bracket = (alpha, f_a, d_a, g_a, alpha_prev, f_prev, d_prev, g_prev)
            break
        alpha_prev, f_prev, d_prev, g_prev = alpha, f_a, d_a, g_a
        alpha = min(2.0 * alpha, 1e8)
    if bracket is not None:
        lo, f_lo, d_lo, g_lo, hi, f_hi, _d_hi, _g_hi = bracket
        while evals < _MAX_LS_EVALS:
            mid = 0.5 * (lo + hi)
            f_m, g_m, d_m = phi(mid)
            if not np.isfinite(f_m):
                hi = mid
                continue
            if f_m < best["f"]:
                best = {"alpha": mid, "f": f_m, "g": g_m, "wolfe": False}
            if f_m > f0 + _WOLFE_C1 * mid * dphi0 or f_m >= f_lo:
                hi = mid
            else:
                if abs(d_m) <= -_WOLFE_C2 * dphi0:
                    return {"alpha": mid, "f": f_m, "g": g_m, "wolfe": True, "evals": evals}
                if d_m * (hi - lo) >= 0:
                    hi = lo
                lo, f_lo, d_lo, g_lo = mid, f_m, d_m, g_m
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
    if best["alpha"] is not None and best["f"] < f0:
        return {**best, "evals": evals}
    return {"alpha": None, "f": f0, "g": None, "wolfe": False, "evals": evals}


# ---------------------------------------------------------------------------
# optimization state and variable packing


@dataclass
class OptimizationState:
    """All optimization variables for one window, numpy-backed."""

    theta: np.ndarray  # (T, 2, 15, 3)
    beta: np.ndarray  # (2, 10)
    phi: np.ndarray  # (T, 2, 3)
    tau: np.ndarray  # (T, 2, 3)
    omega: np.ndarray  # () scalar array
    cam_rot: np.ndarray  # (T, 3) rotation deltas on the SLAM trajectory
    cam_tau: np.ndarray  # (T, 3) translation deltas, SLAM units
    z: np.ndarray  # (2, 128)
    theta_corr: np.ndarray  # (T, 2, 15, 3)

    @classmethod
    def zeros(cls, t: int) -> "OptimizationState":
        return cls(
            theta=np.zeros((t, 2, NUM_ARTICULATED, 3)),
            beta=np.zeros((2, NUM_SHAPE)),
            phi=np.zeros((t, 2, 3)),
            tau=np.zeros((t, 2, 3)),
            omega=np.array(1.0),
            cam_rot=np.zeros((t, 3)),
            cam_tau=np.zeros((t, 3)),
            z=np.zeros((2, LATENT_DIM)),
            theta_corr=np.zeros((t, 2, NUM_ARTICULATED, 3)),
        )

    def copy(self) -> "OptimizationState":
        return OptimizationState(**{k: getattr(self, k).copy() for k in _STATE_ATTRS})

    @property
    def num_frames(self) -> int:
        return self.theta.shape[0]


_STATE_ATTRS = ("theta", "beta", "phi", "tau", "omega", "cam_rot", "cam_tau", "z", "theta_corr")
_HAND_AXIS = {"theta": 1, "theta_corr": 1, "phi": 1, "tau": 1, "beta": 0, "z": 0}


@dataclass
class _Entry:
    attr: str
    hand: int | None

    def get(self, state: OptimizationState) -> np.ndarray:
        arr = getattr(state, self.attr)
        if self.hand is None:
            return arr
        return np.take(arr, self.hand, axis=_HAND_AXIS[self.attr])

    def put(self, state: OptimizationState, value: np.ndarray) -> None:
        arr = getattr(state, self.attr)
        if self.hand is None:
            arr[...] = value.reshape(arr.shape)
        else:
            idx = [slice(None)] * arr.ndim
            idx[_HAND_AXIS[self.attr]] = self.hand
            arr[tuple(idx)] = value.reshape(arr[tuple(idx)].shape)


class _Packer:
    def __init__(self, entries: list):
        self.entries = entries

    def pack(self, state: OptimizationState) -> np.ndarray:
        return np.concatenate([self.entries[i].get(state).reshape(-1) for i in range(len(self.entries))]) if self.entries else np.zeros(0)

    def unpack(self, state: OptimizationState, x: np.ndarray) -> None:
        pos = 0
        for e in self.entries:
            size = e.get(state).size
            e.put(state, x[pos : pos + size])
            pos += size

    def torch_views(self, state: OptimizationState, x: np.ndarray) -> tuple:
        """Build the full varset: frozen attrs as constant tensors, active
        attrs (or hand slices) carrying x with requires_grad."""
        varset = {k: torch.as_tensor(getattr(state, k), dtype=torch.float64) for k in _STATE_ATTRS}
        leaves = []
        pos = 0
        for e in self.entries:
            shape = e.get(state).shape
            size = int(np.prod(shape)) if shape else 1
            leaf = torch.as_tensor(x[pos : pos + size].copy(), dtype=torch.float64).reshape(shape)
            leaf.requires_grad_(True)
            leaves.append(leaf)
            pos += size
            if e.hand is None:
                varset[e.attr] = leaf
            else:
                base = varset[e.attr].clone()
                idx = [slice(None)] * base.ndim
                idx[_HAND_AXIS[e.attr]] = e.hand
                base[tuple(idx)] = leaf
                varset[e.attr] = base
        varset["omega"] = varset["omega"].reshape(())
        return varset, leaves

    @staticmethod
    def grad(leaves: list) -> np.ndarray:
        parts = []
        for leaf in leaves:
            g = leaf.grad
            parts.append(np.zeros(leaf.numel()) if g is None else g.detach().numpy().reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)


def _make_objective(scene, config, state, packer, stage, prior=None, anchors=None, hand=None, lambda_smooth=None):
    sink: dict = {}

    def objective(x: np.ndarray):
        varset, leaves = packer.torch_views(state, x)
        if stage == 2:
            total, terms = total_stage2(scene, varset, config, hand=hand, lambda_smooth=lambda_smooth)
        else:
            total, terms = total_stage3(scene, varset, config, prior, anchors)
        if total.requires_grad:
            total.backward()
        sink["terms"] = {k: float(v) for k, v in terms.items() if not k.startswith("_")}
        return float(total), _Packer.grad(leaves)

    return objective, sink


# ---------------------------------------------------------------------------
# initialization


def _gaps_of(mask: np.ndarray) -> list:
    gaps, i, t = [], 0, len(mask)
    while i < t:
        if not mask[i]:
            j = i
            while j < t and not mask[j]:
                j += 1
            gaps.append((i, j))
            i = j
        else:
            i += 1
    return gaps


def _hold_remaining(traj: HandTrajectory, known: np.ndarray) -> None:
    """Fill any still-unknown frames by holding the nearest earlier known
    state (or the first known one for a leading run)."""
    t = traj.num_frames
    if known.all() or not known.any():
        return
    last = None
    for i in range(t):
        if known[i]:
            last = i
        elif last is not None:
            traj.theta[i] = traj.theta[last]
            traj.phi[i] = traj.phi[last]
            traj.tau[i] = traj.tau[last]
    first = int(np.argmax(known))
    for i in range(first):
        traj.theta[i] = traj.theta[first]
        traj.phi[i] = traj.phi[first]
        traj.tau[i] = traj.tau[first]


def initialize_state(clean: CleanTrack, camera: CameraTrajectory, config: ObjectiveConfig) -> OptimizationState:
    """Seed the world-frame state: camera-frame seeds, slerp infilling,
    then the camera-to-world lift at the initial scale omega = 1."""
    t = camera.num_frames
    state = OptimizationState.zeros(t)
    rot_inv = camera.rotations.transpose(0, 2, 1)
    for h, hand in enumerate(HANDS):
        if hand not in clean.hands:
            continue
        traj_cam, seeded = camera_frame_trajectory(clean, hand)
        if traj_cam.num_frames < t:
            pad = t - traj_cam.num_frames
            traj_cam = HandTrajectory(
                theta=np.concatenate([traj_cam.theta, np.zeros((pad, NUM_ARTICULATED, 3))]),
                phi=np.concatenate([traj_cam.phi, np.zeros((pad, 3))]),
                tau=np.concatenate([traj_cam.tau, np.zeros((pad, 3))]),
                beta=traj_cam.beta,
                frame_rate=traj_cam.frame_rate,
                handedness=hand,
            )
            seeded = np.concatenate([seeded, np.zeros(pad, dtype=bool)])
        if not seeded.any():
            continue
        traj_cam, filled = infill_slerp(traj_cam, _gaps_of(seeded), config.infill_max_gap)
        _hold_remaining(traj_cam, seeded | filled)
        phi_c_rot = axis_angle_to_matrix(traj_cam.phi)  # (T, 3, 3)
        phi_w = matrix_to_axis_angle(rot_inv @ phi_c_rot)
        tau_w = np.einsum("tij,tj->ti", rot_inv, traj_cam.tau) - 1.0 * np.einsum(
            "tij,tj->ti", rot_inv, camera.translations
        )
        state.theta[:, h] = traj_cam.theta
        state.phi[:, h] = phi_w
        state.tau[:, h] = tau_w
        state.beta[h] = traj_cam.beta
    return state


# ---------------------------------------------------------------------------
# stage runners


def _log_phase(diag_rows, sink, chunk, stage, phase):
    def cb(iteration, f, g_norm, step):
        row = {
            "chunk": chunk,
            "stage": stage,
            "phase": phase,
            "iter": iteration,
            "total": f,
            "grad_norm": g_norm,
            "step": step,
        }
        row.update(sink.get("terms", {}))
        diag_rows.append(row)

    return cb


def run_stage2(
    state: OptimizationState,
    scene: Scene,
    config: ObjectiveConfig,
    diag_rows: list | None = None,
    chunk: int = 0,
    optimize_scale: bool = True,
) -> OptimizationState:
    """Stage II: per-hand root phase (lower smoothness weight), then the
    joint full phase adding pose, shape, scale and camera deltas."""
    state = state.copy()
    diag_rows = diag_rows if diag_rows is not None else []
    for h in range(2):
        if float(scene.vis[:, h].sum()) == 0.0:
            continue
        packer = _Packer([_Entry("phi", h), _Entry("tau", h)])
        objective, sink = _make_objective(
            scene, config, state, packer, stage=2, hand=h, lambda_smooth=config.lambda_smooth_root_phase
        )
        x0 = packer.pack(state)
        x, _ = lbfgs_minimize(
            objective,
            x0,
            history=config.lbfgs_history,
            max_iter=config.stage2_root_iters,
            grad_tol=config.grad_tol,
            step_tol=config.step_tol,
            callback=_log_phase(diag_rows, sink, chunk, 2, f"root_{HANDS[h]}"),
        )
        packer.unpack(state, x)
    entries = [_Entry("phi", None), _Entry("tau", None), _Entry("theta", None), _Entry("beta", None)]
    if optimize_scale:
        entries.append(_Entry("omega", None))
    entries += [_Entry("cam_rot", None), _Entry("cam_tau", None)]
    packer = _Packer(entries)
    objective, sink = _make_objective(scene, config, state, packer, stage=2)
    x, _ = lbfgs_minimize(
        objective,
        packer.pack(state),
        history=config.lbfgs_history,
        max_iter=config.stage2_full_iters,
        grad_tol=config.grad_tol,
        step_tol=config.step_tol,
        callback=_log_phase(diag_rows, sink, chunk, 2, "full"),
    )
    packer.unpack(state, x)
    return state


def make_anchors(state: OptimizationState, prior: MotionPrior) -> dict:
    """Freeze the Stage III anchors from the Stage II output: orientation
    and translation targets plus the encoder posterior of the local pose."""
    mus, sigmas = [], []
    for h in range(2):
        mu, sigma = prior.encode(state.theta[:, h])
        mus.append(mu)
        sigmas.append(sigma)
    return {
        "phi": torch.as_tensor(state.phi.copy(), dtype=torch.float64),
        "tau": torch.as_tensor(state.tau.copy(), dtype=torch.float64),
        "mu": torch.as_tensor(np.stack(mus), dtype=torch.float64),
        "sigma": torch.as_tensor(np.stack(sigmas), dtype=torch.float64),
    }


def run_stage3(
    state: OptimizationState,
    scene: Scene,
    config: ObjectiveConfig,
    prior: MotionPrior,
    diag_rows: list | None = None,
    chunk: int = 0,
    optimize_scale: bool = True,
) -> tuple:
    """Stage III: root-only phase against the frozen anchors, then the full
    phase adding the latent codes, pose corrections, camera deltas and the
    scale factor.  Local pose is decode(z) plus a free correction."""
    state = state.copy()
    diag_rows = diag_rows if diag_rows is not None else []
    t = state.num_frames
    anchors = make_anchors(state, prior)
    state.z = anchors["mu"].numpy().copy()
    decoded = np.stack([prior.decode(state.z[h], t) for h in range(2)], axis=1)
    state.theta_corr = state.theta - decoded

    packer = _Packer([_Entry("phi", None), _Entry("tau", None)])
    objective, sink = _make_objective(scene, config, state, packer, stage=3, prior=prior, anchors=anchors)
    x, _ = lbfgs_minimize(
        objective,
        packer.pack(state),
        history=config.lbfgs_history,
        max_iter=config.stage3_root_iters,
        grad_tol=config.grad_tol,
        step_tol=config.step_tol,
        callback=_log_phase(diag_rows, sink, chunk, 3, "root"),
    )
    packer.unpack(state, x)

    entries = [
        _Entry("phi", None),
        _Entry("tau", None),
        _Entry("z", None),
        _Entry("theta_corr", None),
        _Entry("cam_rot", None),
        _Entry("cam_tau", None),
    ]
    if optimize_scale:
        entries.append(_Entry("omega", None))
    packer = _Packer(entries)
    objective, sink = _make_objective(scene, config, state, packer, stage=3, prior=prior, anchors=anchors)
    x, _ = lbfgs_minimize(
        objective,
        packer.pack(state),
        history=config.lbfgs_history,
        max_iter=config.stage3_full_iters,
        grad_tol=config.grad_tol,
        step_tol=config.step_tol,
        callback=_log_phase(diag_rows, sink, chunk, 3, "full"),
    )
    packer.unpack(state, x)
    decoded = np.stack([prior.decode(state.z[h], t) for h in range(2)], axis=1)
    state.theta = decoded + state.theta_corr
    return state, anchors


# ---------------------------------------------------------------------------
# chunked pipeline


@dataclass
class PipelineResult:
    trajectories: dict  # hand -> HandTrajectory (world frame)
    omega: float
    chunk_omegas: list
    diagnostics: list = field(default_factory=list)
    states: list = field(default_factory=list)
    stages_run: tuple = (2,)


def chunk_bounds(total: int, chunk: int) -> list:
    return [(start, min(start + chunk, total)) for start in range(0, total, chunk)]


def run_chunked(
    clean: CleanTrack,
    camera: CameraTrajectory,
    models: dict,
    config: ObjectiveConfig,
    prior: MotionPrior | None = None,
    skip_stage3: bool = False,
    bounds=None,
) -> PipelineResult:
    """Full pipeline over the whole sequence in 128-frame chunks.

    Chunk k+1 starts from chunk k's optimized boundary state; the world
    scale is optimized in the first chunk only and inherited afterwards
    (one scale per sequence).  After optimization, each later chunk's
    translations are shifted so its first-frame root continues the previous
    chunk at its exit velocity, which zeroes the boundary discontinuity by
    construction.
    """
    if not skip_stage3 and prior is None:
        raise ValidationError("stage III requested but no motion prior provided")
    scene_full = build_scene(clean, camera, models, bounds=bounds)
    total_frames = camera.num_frames
    full_state = initialize_state(clean, camera, config)
    diag: list = []
    states: list = []
    chunk_omegas: list = []
    pieces: list = []
    prev_tail = None
    omega_carry = None
    for k, (start, stop) in enumerate(chunk_bounds(total_frames, config.chunk_size)):
        scene = scene_full.sliced(start, stop)
        state = OptimizationState.zeros(stop - start)
        state.theta = full_state.theta[start:stop].copy()
        state.beta = full_state.beta.copy()
        state.phi = full_state.phi[start:stop].copy()
        state.tau = full_state.tau[start:stop].copy()
        if prev_tail is not None:
            state.theta[0] = prev_tail["theta"]
            state.phi[0] = prev_tail["phi"]
            state.tau[0] = prev_tail["tau"]
            state.cam_rot[0] = prev_tail["cam_rot"]
            state.cam_tau[0] = prev_tail["cam_tau"]
            state.beta = prev_tail["beta"]
        if omega_carry is not None:
            state.omega = np.array(omega_carry)
        first_chunk = k == 0
        state = run_stage2(state, scene, config, diag_rows=diag, chunk=k, optimize_scale=first_chunk)
        if not skip_stage3:
            state, _ = run_stage3(
                state, scene, config, prior, diag_rows=diag, chunk=k, optimize_scale=first_chunk
            )
        omega_carry = float(state.omega)
        chunk_omegas.append(omega_carry)
        prev_tail = {
            "theta": state.theta[-1].copy(),
            "phi": state.phi[-1].copy(),
            "tau": state.tau[-1].copy(),
            "cam_rot": state.cam_rot[-1].copy(),
            "cam_tau": state.cam_tau[-1].copy(),
            "beta": state.beta.copy(),
        }
        states.append(state)
        pieces.append((start, stop, state))

    # stitch: shift each later chunk so its first-frame root translation
    # continues the previous chunk at its exit velocity (per hand)
    stitched = OptimizationState.zeros(total_frames)
    stitched.beta = pieces[-1][2].beta.copy()
    stitched.omega = np.array(omega_carry)
    offset = np.zeros((2, 3))
    prev_state = None
    for idx, (start, stop, state) in enumerate(pieces):
        tau = state.tau.copy()
        if idx > 0:
            for h in range(2):
                prev_tau = prev_state.tau[:, h]
                velocity = prev_tau[-1] - prev_tau[-2] if prev_tau.shape[0] > 1 else np.zeros(3)
                target = stitched.tau[start - 1, h] + velocity
                offset[h] = target - tau[0, h]
                tau[:, h] += offset[h]
        stitched.theta[start:stop] = state.theta
        stitched.phi[start:stop] = state.phi
        stitched.tau[start:stop] = tau
        stitched.cam_rot[start:stop] = state.cam_rot
        stitched.cam_tau[start:stop] = state.cam_tau
        prev_state = state

    trajectories = {}
    for h, hand in enumerate(HANDS):
        trajectories[hand] = HandTrajectory(
            theta=stitched.theta[:, h].copy(),
            phi=stitched.phi[:, h].copy(),
            tau=stitched.tau[:, h].copy(),
            beta=stitched.beta[h].copy(),
            frame_rate=camera.fps,
            handedness=hand,
        )
    return PipelineResult(
        trajectories=trajectories,
        omega=float(stitched.omega),
        chunk_omegas=chunk_omegas,
        diagnostics=diag,
        states=states,
        stages_run=(2,) if skip_stage3 else (2, 3),
    )
