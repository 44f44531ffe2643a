"""Detector-track ingestion, cleaning and the motion file format.

Track files are JSON Lines with one record per detection:

    {"frame": 0, "hand": "left", "bbox": [x, y, w, h],
     "kp2d": [[x, y, conf] * 21], "image_size": [w, h],
     "mano": {"theta": [45], "beta": [10], "phi": [3]},    # optional seed
     "weak_cam": {"s": 1.0, "tx": 0.0, "ty": 0.0}}          # optional

Multiple records for one (frame, hand) are treated as candidate
detections and resolved by the cleaning pass; byte-identical duplicates
are a malformed export.  Motion files reuse the same line-based layout
with a leading meta record and world-frame parameters per (frame, hand).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from hand4d.errors import FormatError, ValidationError
from hand4d.hand_model import NUM_ARTICULATED, NUM_JOINTS, NUM_SHAPE, HandTrajectory

HANDS = ("left", "right")

CONF_THRESHOLD = 0.5  # epsilon_j: keypoint confidence floor for fusion/visibility
BBOX_CONF_THRESHOLD = 0.5  # epsilon_b: recorded provenance of the upstream bbox filter
BBOX_EXTENSION = 2.0  # recorded provenance of the upstream crop extension
DEDUP_IOU = 0.9
FLIP_IOU = 0.1
MIN_TRACK_FRAMES = 10


@dataclass
class Detection:
    frame: int
    hand: str
    bbox: np.ndarray  # (4,) x, y, w, h
    keypoints: np.ndarray  # (21, 2)
    confidence: np.ndarray  # (21,)
    theta: np.ndarray | None = None  # (15, 3)
    beta: np.ndarray | None = None  # (10,)
    phi: np.ndarray | None = None  # (3,)
    weak_cam: tuple | None = None  # (s, tx, ty)
    order: int = 0

    @property
    def score(self) -> float:
        return float(self.confidence.mean())

    @property
    def has_seed(self) -> bool:
        return self.theta is not None and self.weak_cam is not None


@dataclass
class ObservationTrack:
    """Raw per-frame, per-hand candidate detections."""

    num_frames: int
    image_size: tuple
    candidates: dict = field(default_factory=dict)  # hand -> frame -> [Detection]
    fps: float = 30.0

    def hand_candidates(self, hand: str) -> dict:
        return self.candidates.get(hand, {})

    def with_num_frames(self, num_frames: int) -> "ObservationTrack":
        if num_frames < self.num_frames:
            raise ValidationError(
                f"cannot shrink track from {self.num_frames} to {num_frames} frames"
            )
        return ObservationTrack(
            num_frames=num_frames, image_size=self.image_size, candidates=self.candidates, fps=self.fps
        )


@dataclass
class HandTrack:
    """One hand's cleaned observations over the full frame range."""

    valid: np.ndarray  # (T,) bool
    keypoints: np.ndarray  # (T, 21, 2)
    confidence: np.ndarray  # (T, 21); zero where invalid
    visibility: np.ndarray  # (T, 21) bool
    bbox: np.ndarray  # (T, 4)
    theta: np.ndarray  # (T, 15, 3) seeds (zeros where absent)
    beta: np.ndarray  # (T, 10)
    phi: np.ndarray  # (T, 3)
    tau_cam: np.ndarray  # (T, 3) lifted camera-frame translation
    seed_valid: np.ndarray  # (T,) bool
    gaps: list  # maximal [start, stop) intervals of invalid frames


@dataclass
class CleanTrack:
    num_frames: int
    image_size: tuple
    hands: dict  # hand -> HandTrack
    fps: float = 30.0


def bbox_iou(a, b) -> float:
    ax0, ay0, aw, ah = (float(v) for v in a)
    bx0, by0, bw, bh = (float(v) for v in b)
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax0 + aw, bx0 + bw), min(ay0 + ah, by0 + bh)
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def lift_translation(s: float, tx: float, ty: float, image_size: float, focal: float = 1000.0) -> np.ndarray:
    """Closed-form metric camera translation from weak-perspective params:
    (tx, ty, 2 f / (s * image_size))."""
    if s <= 0:
        raise ValidationError(f"weak-perspective scale must be positive, got {s}")
    if image_size <= 0:
        raise ValidationError(f"image size must be positive, got {image_size}")
    return np.array([tx, ty, 2.0 * focal / (s * image_size)], dtype=np.float64)


def _parse_record(line_no: int, raw: str, order: int) -> tuple[Detection, tuple]:
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"track line {line_no}: not valid JSON ({exc})") from exc
    try:
        frame = int(doc["frame"])
        hand = str(doc["hand"])
        bbox = np.array([float(v) for v in doc["bbox"]], dtype=np.float64)
        kp = np.array(doc["kp2d"], dtype=np.float64)
        image_size = tuple(float(v) for v in doc["image_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"track line {line_no}: missing or malformed field ({exc})") from exc
    if hand not in HANDS:
        raise FormatError(f"track line {line_no}: unknown hand {hand!r}")
    if frame < 0:
        raise FormatError(f"track line {line_no}: negative frame index")
    if bbox.shape != (4,) or bbox[2] <= 0 or bbox[3] <= 0:
        raise FormatError(f"track line {line_no}: bbox must be [x, y, w>0, h>0]")
    if kp.shape != (NUM_JOINTS, 3):
        raise FormatError(f"track line {line_no}: kp2d must be 21 x [x, y, conf]")
    conf = kp[:, 2]
    if (conf < 0).any() or (conf > 1).any():
        raise FormatError(f"track line {line_no}: confidences must lie in [0, 1]")
    det = Detection(frame=frame, hand=hand, bbox=bbox, keypoints=kp[:, :2].copy(), confidence=conf.copy(), order=order)
    if "mano" in doc:
        mano = doc["mano"]
        try:
            det.theta = np.array(mano["theta"], dtype=np.float64).reshape(NUM_ARTICULATED, 3)
            det.beta = np.array(mano["beta"], dtype=np.float64).reshape(NUM_SHAPE)
            det.phi = np.array(mano["phi"], dtype=np.float64).reshape(3)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"track line {line_no}: malformed mano seed ({exc})") from exc
    if "weak_cam" in doc:
        wc = doc["weak_cam"]
        try:
            det.weak_cam = (float(wc["s"]), float(wc["tx"]), float(wc["ty"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"track line {line_no}: malformed weak_cam ({exc})") from exc
        if det.weak_cam[0] <= 0:
            raise FormatError(f"track line {line_no}: weak_cam scale must be positive")
    return det, image_size


def load_tracks(path) -> ObservationTrack:
    """Load a track file; detections are sorted by frame, hands keyed
    independently.  Byte-identical repeated detections raise."""
    candidates: dict = {h: {} for h in HANDS}
    image_size = None
    fps = 30.0
    max_frame = -1
    order = 0
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            head = json.loads(raw) if raw.startswith('{"meta"') else None
            if head is not None and "meta" in head:
                fps = float(head["meta"].get("fps", fps))
                continue
            det, rec_size = _parse_record(line_no, raw, order)
            order += 1
            if image_size is None:
                image_size = rec_size
            elif rec_size != image_size:
                raise FormatError(f"track line {line_no}: image_size changed mid-sequence")
            bucket = candidates[det.hand].setdefault(det.frame, [])
            for prev in bucket:
                if np.array_equal(prev.bbox, det.bbox) and np.array_equal(prev.keypoints, det.keypoints):
                    raise FormatError(
                        f"track line {line_no}: duplicate detection for frame {det.frame} ({det.hand})"
                    )
            bucket.append(det)
            max_frame = max(max_frame, det.frame)
    if image_size is None:
        image_size = (1000.0, 1000.0)
    return ObservationTrack(
        num_frames=max_frame + 1 if max_frame >= 0 else 0,
        image_size=image_size,
        candidates=candidates,
        fps=fps,
    )


def _invalid_gaps(valid: np.ndarray) -> list:
    gaps = []
    t = len(valid)
    i = 0
    while i < t:
        if not valid[i]:
            j = i
            while j < t and not valid[j]:
                j += 1
            gaps.append((i, j))
            i = j
        else:
            i += 1
    return gaps


def suppress_hallucinations(track: ObservationTrack, focal: float = 1000.0) -> CleanTrack:
    """Apply the cleaning rules, in order: candidate dedup by confidence,
    handedness-flip invalidation (bbox IoU < 0.1 against the previous kept
    frame of the same contiguous run), and removal of contiguous runs
    shorter than 10 frames.  The pass is idempotent."""
    t = track.num_frames
    s_img = max(track.image_size) if track.image_size else 1000.0
    hands = {}
    for hand in HANDS:
        chosen: dict[int, Detection] = {}
        for frame, dets in track.hand_candidates(hand).items():
            best = min(dets, key=lambda d: (-d.score, d.order))
            chosen[frame] = best
        valid = np.zeros(t, dtype=bool)
        for frame in chosen:
            valid[frame] = True

        # handedness-flip detection within contiguous runs
        for start, stop in _present_runs(valid):
            last_kept = None
            for frame in range(start, stop):
                if last_kept is None:
                    last_kept = frame
                    continue
                if bbox_iou(chosen[last_kept].bbox, chosen[frame].bbox) < FLIP_IOU:
                    valid[frame] = False
                else:
                    last_kept = frame

        # short-lived tracks
        for start, stop in _present_runs(valid):
            if stop - start < MIN_TRACK_FRAMES:
                valid[start:stop] = False

        kp = np.zeros((t, NUM_JOINTS, 2))
        conf = np.zeros((t, NUM_JOINTS))
        bbox = np.zeros((t, 4))
        theta = np.zeros((t, NUM_ARTICULATED, 3))
        beta = np.zeros((t, NUM_SHAPE))
        phi = np.zeros((t, 3))
        tau_cam = np.zeros((t, 3))
        seed_valid = np.zeros(t, dtype=bool)
        for frame, det in chosen.items():
            if not valid[frame]:
                continue
            kp[frame] = det.keypoints
            conf[frame] = det.confidence
            bbox[frame] = det.bbox
            if det.has_seed:
                theta[frame] = det.theta
                beta[frame] = det.beta if det.beta is not None else 0.0
                phi[frame] = det.phi if det.phi is not None else 0.0
                s, tx, ty = det.weak_cam
                tau_cam[frame] = lift_translation(s, tx, ty, s_img, focal)
                seed_valid[frame] = True
        hands[hand] = HandTrack(
            valid=valid,
            keypoints=kp,
            confidence=conf,
            visibility=valid[:, None] & (conf >= CONF_THRESHOLD),
            bbox=bbox,
            theta=theta,
            beta=beta,
            phi=phi,
            tau_cam=tau_cam,
            seed_valid=seed_valid,
            gaps=_invalid_gaps(valid),
        )
    return CleanTrack(num_frames=t, image_size=track.image_size, hands=hands, fps=track.fps)


def _present_runs(valid: np.ndarray) -> list:
    runs = []
    t = len(valid)
    i = 0
    while i < t:
        if valid[i]:
            j = i
            while j < t and valid[j]:
                j += 1
            runs.append((i, j))
            i = j
        else:
            i += 1
    return runs


def fuse_keypoints(clean: CleanTrack, reprojected: dict) -> CleanTrack:
    """Replace low-confidence joints with seed reprojections.

    ``reprojected[hand]`` is (T, 21, 2); replacement applies where the
    frame is valid, a seed exists, and confidence < 0.5.  Replaced joints
    are floored at confidence 0.5; visibility is recomputed as
    (confidence >= 0.5) on valid frames, so fusion never loses a joint.
    """
    hands = {}
    for hand, ht in clean.hands.items():
        kp = ht.keypoints.copy()
        conf = ht.confidence.copy()
        reproj = reprojected.get(hand)
        if reproj is not None:
            reproj = np.asarray(reproj, dtype=np.float64)
            low = (conf < CONF_THRESHOLD) & ht.valid[:, None] & ht.seed_valid[:, None]
            kp[low] = reproj[low]
            conf[low] = CONF_THRESHOLD
        hands[hand] = HandTrack(
            valid=ht.valid.copy(),
            keypoints=kp,
            confidence=conf,
            visibility=ht.valid[:, None] & (conf >= CONF_THRESHOLD),
            bbox=ht.bbox.copy(),
            theta=ht.theta.copy(),
            beta=ht.beta.copy(),
            phi=ht.phi.copy(),
            tau_cam=ht.tau_cam.copy(),
            seed_valid=ht.seed_valid.copy(),
            gaps=list(ht.gaps),
        )
    return CleanTrack(num_frames=clean.num_frames, image_size=clean.image_size, hands=hands, fps=clean.fps)


def camera_frame_trajectory(clean: CleanTrack, hand: str) -> tuple[HandTrajectory, np.ndarray]:
    """Assemble the camera-frame seed trajectory for one hand.

    Shape coefficients are averaged over seeded frames (the sequence-level
    shared beta); frames without seeds keep zeros and are reported through
    the returned validity mask for the infill step.
    """
    ht = clean.hands[hand]
    seeded = ht.seed_valid
    beta = ht.beta[seeded].mean(axis=0) if seeded.any() else np.zeros(NUM_SHAPE)
    traj = HandTrajectory(
        theta=ht.theta.copy(),
        phi=ht.phi.copy(),
        tau=ht.tau_cam.copy(),
        beta=beta,
        frame_rate=clean.fps,
        handedness=hand,
    )
    return traj, seeded.copy()


# ---------------------------------------------------------------------------
# motion files


def save_motion(path, trajectories: dict, fps: float = 30.0, meta: dict | None = None) -> None:
    """Write world- or camera-frame trajectories as a JSON Lines motion file."""
    frames = max((traj.num_frames for traj in trajectories.values() if traj is not None), default=0)
    head = {"meta": {"kind": "hand_motion", "fps": fps, "frames": frames}}
    if meta:
        head["meta"].update(meta)
    lines = [json.dumps(head, sort_keys=True)]
    for t in range(frames):
        for hand in HANDS:
            traj = trajectories.get(hand)
            if traj is None or t >= traj.num_frames:
                continue
            rec = {
                "frame": t,
                "hand": hand,
                "mano": {
                    "theta": np.asarray(traj.theta[t]).reshape(-1).tolist(),
                    "beta": np.asarray(traj.beta).tolist(),
                    "phi": np.asarray(traj.phi[t]).tolist(),
                    "tau": np.asarray(traj.tau[t]).tolist(),
                },
            }
            lines.append(json.dumps(rec, sort_keys=True))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_motion(path) -> tuple[dict, dict]:
    """Read a motion file -> ({hand: HandTrajectory}, meta)."""
    meta: dict = {}
    per_hand: dict = {h: {} for h in HANDS}
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"motion line {line_no}: not valid JSON ({exc})") from exc
            if "meta" in doc:
                meta = doc["meta"]
                continue
            try:
                frame = int(doc["frame"])
                hand = str(doc["hand"])
                mano = doc["mano"]
                theta = np.array(mano["theta"], dtype=np.float64).reshape(NUM_ARTICULATED, 3)
                beta = np.array(mano["beta"], dtype=np.float64).reshape(NUM_SHAPE)
                phi = np.array(mano["phi"], dtype=np.float64).reshape(3)
                tau = np.array(mano["tau"], dtype=np.float64).reshape(3)
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"motion line {line_no}: malformed record ({exc})") from exc
            if hand not in HANDS:
                raise FormatError(f"motion line {line_no}: unknown hand {hand!r}")
            if frame in per_hand[hand]:
                raise FormatError(f"motion line {line_no}: duplicate frame {frame} for {hand}")
            per_hand[hand][frame] = (theta, beta, phi, tau)
    fps = float(meta.get("fps", 30.0))
    out = {}
    for hand, frames in per_hand.items():
        if not frames:
            continue
        indices = sorted(frames)
        if indices != list(range(len(indices))):
            raise FormatError(f"motion file: frames for {hand} are not contiguous from 0")
        theta = np.stack([frames[i][0] for i in indices])
        beta = frames[indices[0]][1]
        phi = np.stack([frames[i][2] for i in indices])
        tau = np.stack([frames[i][3] for i in indices])
        out[hand] = HandTrajectory(theta=theta, phi=phi, tau=tau, beta=beta, frame_rate=fps, handedness=hand)
    return out, meta
