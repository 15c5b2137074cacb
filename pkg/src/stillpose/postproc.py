"""Automatic acceptance filters for fitted instances: reprojection residuals,
per-frame and sequence-wise joint visibility, and the torso-plus-one-limb
rule. Survivors are exported with their visibility annotations for human
verification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, pose_body
from .fitting import FitConfig, FitProblem, FitResult, _lambdas
from .joints import LIMBS, STANDARD_JOINT_PART_SETS, TORSO_JOINTS
from .scene import Sequence, safe_round_pixels
from .tracking import Track

#: forward-only lifecycle of an instance
STATUS_ORDER = (
    "auto-rejected",
    "auto-accepted",
    "pending-human",
    "human-accepted",
    "human-rejected",
)

_FORWARD = {
    "auto-accepted": set(),
    "auto-rejected": set(),
    "pending-human": {"human-accepted", "human-rejected"},
    "human-accepted": set(),
    "human-rejected": set(),
}


@dataclass
class JointVisibility:
    """Per-frame visibility grid and its >=80% sequence-wise reduction."""

    per_frame: np.ndarray  # (n_frames, J) bool
    sequence_wise: np.ndarray = field(init=False)  # (J,) bool

    def __post_init__(self):
        self.per_frame = np.asarray(self.per_frame, dtype=bool)
        counts = self.per_frame.sum(axis=0)
        n = self.per_frame.shape[0]
        # visible iff seen in at least 80% of track frames (integer arithmetic)
        self.sequence_wise = 5 * counts >= 4 * n

    @property
    def occluded_count(self) -> int:
        return int((~self.sequence_wise).sum())


@dataclass
class ReprojectionCheck:
    passed: bool
    mean_residual_px: float
    threshold_px: float


def default_reprojection_threshold(image_width: int, base_px: float = 15.0) -> float:
    """The published threshold is unknown; 15 px at 640-width, scaled linearly."""
    return base_px * image_width / 640.0


def reprojection_check(
    fit: FitResult, problem: FitProblem, threshold_px: float
) -> ReprojectionCheck:
    """Weighted mean of the unrobustified 2D residuals (px) against a threshold.

    Vertices projecting behind their camera count as an infinite residual.
    """
    corr = problem.corr2d
    if not len(corr):
        return ReprojectionCheck(False, float("inf"), threshold_px)
    posed = pose_body(problem.model, fit.pose, fit.shape)
    xs = posed.vertices[corr.vertex_indices]
    total_w = 0.0
    total = 0.0
    for frame in np.unique(corr.frame_indices):
        sel = corr.frame_indices == frame
        cam = problem.cameras[int(frame)]
        pix, valid = cam.project_many(xs[sel])
        res = np.linalg.norm(corr.pixels[sel] - pix, axis=1)
        res[~valid] = np.inf
        w = corr.weights[sel]
        total += float((w * res).sum())
        total_w += float(w.sum())
    mean = total / total_w if total_w > 0 else float("inf")
    return ReprojectionCheck(mean <= threshold_px, mean, threshold_px)


def joint_visibility(
    fit: FitResult,
    seq: Sequence,
    track: Track,
    model: BodyModel,
    joint_part_sets: dict | None = None,
) -> JointVisibility:
    """A joint is visible in a frame when its projection lands on a mask pixel
    of the track's instance whose part index belongs to the joint's part set."""
    if joint_part_sets is None:
        joint_part_sets = STANDARD_JOINT_PART_SETS
    joints = pose_body(model, fit.pose, fit.shape).joints
    grid = np.zeros((len(track.nodes), model.joint_count), dtype=bool)
    for row, (frame, instance_id) in enumerate(track.nodes):
        cam = seq.cameras[frame]
        mask = seq.masks_by_id(frame).get(instance_id)
        dp = seq.correspondences[frame]
        if mask is None:
            continue
        pix, valid = cam.project_many(joints)
        inside = valid & cam.in_image(pix)
        if not inside.any():
            continue
        ipix = safe_round_pixels(pix, inside)
        in_mask = inside & mask.contains(ipix)
        rows = dp.rows_at(ipix)
        for j in range(model.joint_count):
            if not in_mask[j] or rows[j] < 0:
                continue
            part = int(dp.parts[rows[j]])
            grid[row, j] = part in joint_part_sets.get(j, set())
    return JointVisibility(per_frame=grid)


def acceptance_rule(
    visibility: JointVisibility,
    torso_joints=TORSO_JOINTS,
    limbs: dict = LIMBS,
    min_torso: int = 5,
) -> bool:
    """Pass iff at least half the torso and one full limb are sequence-visible."""
    seq = visibility.sequence_wise
    torso_ok = int(seq[list(torso_joints)].sum()) >= min_torso
    limb_ok = any(bool(seq[list(chain)].all()) for chain in limbs.values())
    return torso_ok and limb_ok


@dataclass
class AcceptedInstance:
    """A fit with its visibility annotations and review status."""

    instance_id: str
    fit: FitResult
    visibility: JointVisibility
    status: str
    reason: str = ""
    reprojection: ReprojectionCheck | None = None
    track_nodes: list = field(default_factory=list)

    def transition(self, new_status: str) -> None:
        if new_status not in _FORWARD.get(self.status, set()):
            raise ValueError(f"illegal status transition {self.status} -> {new_status}")
        self.status = new_status


def run_checks(
    instance_id: str,
    fit: FitResult,
    problem: FitProblem,
    seq: Sequence,
    track: Track,
    threshold_px: float | None = None,
    joint_part_sets: dict | None = None,
    torso_joints=None,
    limbs: dict | None = None,
    min_torso: int = 5,
    require_convergence: bool = True,
    auto_accept: bool = False,
) -> AcceptedInstance:
    """All three automatic filters; failures are auto-rejected with a reason
    and never reach the human queue."""
    model = problem.model
    if threshold_px is None:
        threshold_px = default_reprojection_threshold(seq.cameras[0].width)
    if torso_joints is None:
        torso_joints = TORSO_JOINTS if model.joint_count == 24 else tuple(range(model.joint_count))
    if limbs is None:
        limbs = LIMBS if model.joint_count == 24 else {}

    visibility = joint_visibility(fit, seq, track, model, joint_part_sets)
    reproj = reprojection_check(fit, problem, threshold_px)

    status = "pending-human"
    reason = ""
    if require_convergence and not fit.converged:
        status, reason = "auto-rejected", "fit did not converge"
    elif not reproj.passed:
        status, reason = (
            "auto-rejected",
            f"mean reprojection {reproj.mean_residual_px:.2f}px > {threshold_px:.2f}px",
        )
    elif not acceptance_rule(visibility, torso_joints, limbs, min_torso):
        status, reason = "auto-rejected", "insufficient torso/limb visibility"
    elif auto_accept:
        status = "auto-accepted"
    return AcceptedInstance(
        instance_id=instance_id,
        fit=fit,
        visibility=visibility,
        status=status,
        reason=reason,
        reprojection=reproj,
        track_nodes=[[int(f), int(i)] for f, i in track.nodes],
    )


def save_instance(path: str | Path, inst: AcceptedInstance,
                  config: FitConfig | None = None, provenance: dict | None = None) -> None:
    doc = {
        "instance_id": inst.instance_id,
        "status": inst.status,
        "reason": inst.reason,
        "pose_axis_angle": inst.fit.pose.axis_angle.tolist(),
        "translation": inst.fit.pose.translation.tolist(),
        "beta": inst.fit.shape.beta.tolist(),
        "objective_value": inst.fit.objective_value,
        "breakdown": inst.fit.breakdown,
        "converged": inst.fit.converged,
        "n_iterations": inst.fit.n_iterations,
        "visibility_per_frame": inst.visibility.per_frame.astype(int).tolist(),
        "visibility_sequence": inst.visibility.sequence_wise.astype(int).tolist(),
        "track_nodes": inst.track_nodes,
        "reprojection": (
            {
                "passed": inst.reprojection.passed,
                "mean_residual_px": inst.reprojection.mean_residual_px,
                "threshold_px": inst.reprojection.threshold_px,
            }
            if inst.reprojection
            else None
        ),
        "lambdas": _lambdas(config) if config else None,
        "provenance": provenance or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_instance(path: str | Path) -> AcceptedInstance:
    from .bodymodel import PoseParams, ShapeParams  # local import to avoid cycle noise

    doc = json.loads(Path(path).read_text())
    fit = FitResult(
        pose=PoseParams(np.asarray(doc["pose_axis_angle"]), np.asarray(doc["translation"])),
        shape=ShapeParams(np.asarray(doc["beta"])),
        objective_value=doc["objective_value"],
        breakdown=doc["breakdown"],
        n_iterations=doc["n_iterations"],
        converged=doc["converged"],
    )
    vis = JointVisibility(np.asarray(doc["visibility_per_frame"], dtype=bool))
    reproj = None
    if doc.get("reprojection"):
        r = doc["reprojection"]
        reproj = ReprojectionCheck(r["passed"], r["mean_residual_px"], r["threshold_px"])
    return AcceptedInstance(
        instance_id=doc["instance_id"],
        fit=fit,
        visibility=vis,
        status=doc["status"],
        reason=doc.get("reason", ""),
        reprojection=reproj,
        track_nodes=doc.get("track_nodes", []),
    )
