"""Static-pose reconstruction from moving-camera video, and 3D pose benchmarking.

Subject-frozen footage turns one camera into many: instances are tracked,
the SfM cloud is pruned to human points, one articulated body per track is
fitted to all frames at once, fits are filtered automatically and curated by
hand, and predictions are scored against the surviving ground truth.
"""

from .bodymodel import (
    BodyModel,
    PoseParams,
    PosedBody,
    ShapeParams,
    joints_zero_translation,
    load_model,
    pose_body,
    save_model,
)
from .scene import Camera, Sequence, load_sequence

__all__ = [
    "BodyModel",
    "Camera",
    "PoseParams",
    "PosedBody",
    "Sequence",
    "ShapeParams",
    "joints_zero_translation",
    "load_model",
    "load_sequence",
    "pose_body",
    "save_model",
]

__version__ = "0.1.0"
