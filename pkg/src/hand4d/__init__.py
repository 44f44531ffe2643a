"""Recovery of world-frame 4D motion for two articulated hands.

The package takes per-frame camera-frame hand states, 2D keypoint tracks and
a relative (up-to-scale) camera trajectory, and solves a staged multi-objective
optimization with a learnable world scale factor to disentangle hand motion
from camera motion.  A synthetic scenario generator and a full metric suite
make the pipeline verifiable end to end without external data.
"""

from hand4d.errors import FormatError, GenerationError, Hand4DError, ValidationError
from hand4d.hand_model import HandModel, HandState, HandTrajectory, forward, forward_batch, load_model, save_model
from hand4d.camera import CameraTrajectory, cam_to_world, load_camera, world_to_cam
from hand4d.objectives import BiomechBounds, ObjectiveConfig
from hand4d.solver import lbfgs_minimize, run_chunked, run_stage2, run_stage3

__version__ = "0.1.0"

__all__ = [
    "BiomechBounds",
    "CameraTrajectory",
    "FormatError",
    "GenerationError",
    "Hand4DError",
    "HandModel",
    "HandState",
    "HandTrajectory",
    "ObjectiveConfig",
    "ValidationError",
    "cam_to_world",
    "forward",
    "forward_batch",
    "lbfgs_minimize",
    "load_camera",
    "load_model",
    "run_chunked",
    "run_stage2",
    "run_stage3",
    "save_model",
    "world_to_cam",
]
