"""Benchmarking: 3D/2D pose errors, PCK curves, rigid alignment, error
analyses against occlusion / pose difficulty / body tilt, and depth-map
validation of reconstructed bodies.

All 3D errors are reported in millimeters with the global translation zeroed
on both sides; 2D errors are percentages of a distance-invariant pixel scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, PoseParams, ShapeParams, joints_zero_translation, pose_body
from .joints import NECK_JOINT, STANDARD_GROUPS, validate_groups
from .rasterize import render_depth as _render_mesh_depth
from .scene import Camera

PCK3D_THRESHOLDS_MM = np.arange(1, 501, dtype=float)  # 1..500 mm step 1
PCK2D_THRESHOLDS = np.arange(1, 41, dtype=float) * 0.05  # 0.05..2.00 step 0.05


# ---------------------------------------------------------------------------
# 3D joint errors
# ---------------------------------------------------------------------------


def joint_errors_mm(
    gt_params: list[tuple[PoseParams, ShapeParams]],
    pred_params: list[tuple[PoseParams, ShapeParams]],
    model: BodyModel,
) -> np.ndarray:
    """Per-instance, per-joint distance (n, J) in mm, translations zeroed."""
    if len(gt_params) != len(pred_params):
        raise ValueError("ground truth and predictions differ in length")
    errors = np.empty((len(gt_params), model.joint_count))
    for i, ((gp, gs), (pp, ps)) in enumerate(zip(gt_params, pred_params)):
        gt_j = joints_zero_translation(model, gp, gs)
        pr_j = joints_zero_translation(model, pp, ps)
        errors[i] = np.linalg.norm(gt_j - pr_j, axis=1) * 1000.0
    return errors


def aggregate_joint_errors(
    errors_mm: np.ndarray, visibility: np.ndarray, groups: dict | None = None
) -> dict:
    """Average per joint over instances where the joint is visible, then per
    group and over all joints. Joints never visible are reported absent."""
    errors_mm = np.asarray(errors_mm, dtype=float)
    visibility = np.asarray(visibility, dtype=bool)
    if errors_mm.shape != visibility.shape:
        raise ValueError("errors and visibility shapes differ")
    njoint = errors_mm.shape[1]
    if groups is None:
        groups = STANDARD_GROUPS if njoint == 24 else {"all": tuple(range(njoint))}
    validate_groups(groups, njoint)

    per_joint = np.full(njoint, np.nan)
    counts = visibility.sum(axis=0)
    for j in range(njoint):
        if counts[j]:
            per_joint[j] = errors_mm[visibility[:, j], j].mean()
    absent = [j for j in range(njoint) if counts[j] == 0]
    per_group = {}
    group_counts = {}
    for name, members in groups.items():
        vals = per_joint[list(members)]
        ok = ~np.isnan(vals)
        per_group[name] = float(vals[ok].mean()) if ok.any() else float("nan")
        group_counts[name] = int(counts[list(members)].sum())
    present = ~np.isnan(per_joint)
    mean = float(per_joint[present].mean()) if present.any() else float("nan")
    return {
        "per_joint": per_joint,
        "per_group": per_group,
        "group_counts": group_counts,
        "mean": mean,
        "absent_joints": absent,
    }


def mpjpe_3d(
    gt_params,
    pred_params,
    model: BodyModel,
    visibility: np.ndarray,
    groups: dict | None = None,
) -> dict:
    """Translation-zeroed MPJPE per joint / group / overall (mm)."""
    errors = joint_errors_mm(gt_params, pred_params, model)
    return aggregate_joint_errors(errors, visibility, groups)


# ---------------------------------------------------------------------------
# Procrustes
# ---------------------------------------------------------------------------


def procrustes_align(source: np.ndarray, target: np.ndarray):
    """Rotation R and translation t minimizing sum |R s + t - g|^2 (no scale)."""
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    h = (src - mu_s).T @ (tgt - mu_t)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    flip = np.diag([1.0, 1.0, d])
    rot = vt.T @ flip @ u.T
    trans = mu_t - rot @ mu_s
    return rot, trans


def procrustes_mpjpe(
    gt_joints: np.ndarray, pred_joints: np.ndarray, visible: np.ndarray | None = None
) -> float:
    """MPJPE (mm) after the optimal rigid alignment of predictions onto ground
    truth over the visible joints. Requires >= 3 visible joints."""
    gt = np.asarray(gt_joints, dtype=float)
    pred = np.asarray(pred_joints, dtype=float)
    if visible is None:
        visible = np.ones(len(gt), dtype=bool)
    visible = np.asarray(visible, dtype=bool)
    if visible.sum() < 3:
        raise ValueError("Procrustes alignment needs at least 3 visible joints")
    rot, trans = procrustes_align(pred[visible], gt[visible])
    aligned = pred[visible] @ rot.T + trans
    return float(np.linalg.norm(aligned - gt[visible], axis=1).mean() * 1000.0)


# ---------------------------------------------------------------------------
# PCK curves
# ---------------------------------------------------------------------------


def pck_curve(errors: np.ndarray, visibility: np.ndarray, thresholds: np.ndarray):
    """PCK@X per joint (fraction of visible instances with error < X), averaged
    over joints; AUC is the plain mean over the threshold sweep, in [0, 100]."""
    errors = np.asarray(errors, dtype=float)
    visibility = np.asarray(visibility, dtype=bool)
    if errors.size == 0 or not visibility.any():
        raise ValueError("PCK needs at least one visible joint error")
    thresholds = np.asarray(thresholds, dtype=float)
    per_joint_curves = []
    for j in range(errors.shape[1]):
        vis = visibility[:, j]
        if not vis.any():
            continue
        e = errors[vis, j]
        per_joint_curves.append((e[None, :] < thresholds[:, None]).mean(axis=1))
    curve = 100.0 * np.mean(per_joint_curves, axis=0)
    return curve, float(curve.mean())


def pck_curve_3d(errors_mm: np.ndarray, visibility: np.ndarray,
                 thresholds: np.ndarray = PCK3D_THRESHOLDS_MM):
    return pck_curve(errors_mm, visibility, thresholds)


def pck_curve_2d(normalized_errors: np.ndarray, visibility: np.ndarray,
                 thresholds: np.ndarray = PCK2D_THRESHOLDS):
    """normalized_errors are fractions of the scale (not percent)."""
    return pck_curve(normalized_errors, visibility, thresholds)


# ---------------------------------------------------------------------------
# normalized 2D error
# ---------------------------------------------------------------------------


def projected_scale_px(gt_joints: np.ndarray, camera: Camera, bone_joint: int = 1) -> float:
    """Pixel radius of a sphere at ground-truth joint 0 whose radius is the
    first-bone length: closed form mean(fx, fy) * r / depth."""
    radius = float(np.linalg.norm(gt_joints[0] - gt_joints[bone_joint]))
    depth = float(camera.depth_of(gt_joints[0]))
    if depth <= 0 or radius <= 0:
        raise ValueError("degenerate 2D normalization scale")
    return 0.5 * (camera.fx + camera.fy) * radius / depth


def normalized_2d_instance(
    gt: tuple[PoseParams, ShapeParams],
    pred: tuple[PoseParams, ShapeParams],
    gt_camera: Camera,
    pred_camera: Camera,
    model: BodyModel,
) -> np.ndarray:
    """Per-joint pixel error between each side's own projection, divided by
    the ground-truth sphere scale (fractions; NaN where a side projects behind
    its camera)."""
    gt_joints = pose_body(model, gt[0], gt[1]).joints
    pred_joints = pose_body(model, pred[0], pred[1]).joints
    scale = projected_scale_px(gt_joints, gt_camera)
    gt_pix, gt_ok = gt_camera.project_many(gt_joints)
    pr_pix, pr_ok = pred_camera.project_many(pred_joints)
    err = np.linalg.norm(gt_pix - pr_pix, axis=1) / scale
    err[~(gt_ok & pr_ok)] = np.nan
    return err


def normalized_2d_error(
    gt_params,
    pred_params,
    gt_cameras,
    pred_cameras,
    model: BodyModel,
    visibility: np.ndarray,
    groups: dict | None = None,
) -> dict:
    """Aggregated normalized 2D error in percent (x100), like mpjpe_3d."""
    rows = []
    for gt, pred, gcam, pcam in zip(gt_params, pred_params, gt_cameras, pred_cameras):
        rows.append(normalized_2d_instance(gt, pred, gcam, pcam, model))
    errors = 100.0 * np.asarray(rows)
    vis = np.asarray(visibility, dtype=bool) & np.isfinite(errors)
    return aggregate_joint_errors(errors, vis, groups)


# ---------------------------------------------------------------------------
# analyses
# ---------------------------------------------------------------------------


def occlusion_analysis(errors: np.ndarray, occluded_counts: np.ndarray,
                       max_occluded: int = 24):
    """Mean error over instances whose occluded-joint count is <= each bound."""
    errors = np.asarray(errors, dtype=float)
    occluded = np.asarray(occluded_counts, dtype=int)
    bounds = np.arange(max_occluded + 1)
    values = np.full(len(bounds), np.nan)
    for i, b in enumerate(bounds):
        sel = occluded <= b
        if sel.any():
            values[i] = errors[sel].mean()
    return bounds, values


def pose_difficulty_mm(
    gt_params: list[tuple[PoseParams, ShapeParams]],
    mean_pose: PoseParams,
    model: BodyModel,
) -> np.ndarray:
    """Distance of each ground-truth pose from the mean pose, as the MPJPE
    between the two poses rendered with the instance's own shape (mm)."""
    out = np.empty(len(gt_params))
    for i, (gp, gs) in enumerate(gt_params):
        a = joints_zero_translation(model, gp, gs)
        b = joints_zero_translation(model, mean_pose, gs)
        out[i] = np.linalg.norm(a - b, axis=1).mean() * 1000.0
    return out


def difficulty_analysis(difficulties_mm: np.ndarray, errors: np.ndarray,
                        bin_width_mm: float = 50.0):
    """Mean error per difficulty bin floor(d / bin_width); empty bins are NaN."""
    difficulties = np.asarray(difficulties_mm, dtype=float)
    errors = np.asarray(errors, dtype=float)
    bins = np.floor(difficulties / bin_width_mm).astype(int)
    n_bins = int(bins.max()) + 1 if len(bins) else 0
    values = np.full(n_bins, np.nan)
    counts = np.zeros(n_bins, dtype=int)
    for b in range(n_bins):
        sel = bins == b
        counts[b] = sel.sum()
        if counts[b]:
            values[b] = errors[sel].mean()
    edges = np.arange(n_bins + 1) * bin_width_mm
    return edges, values, counts


def body_tilt_deg(pose: PoseParams, shape: ShapeParams, model: BodyModel,
                  camera: Camera, neck_joint: int = NECK_JOINT) -> float:
    """Angle between the body's up axis (root -> neck, camera frame) and the
    camera's vertical axis (up = -y in camera coordinates)."""
    joints = pose_body(model, pose, shape).joints
    up_body = camera.rotation @ (joints[neck_joint] - joints[0])
    norm = np.linalg.norm(up_body)
    if norm == 0:
        raise ValueError("degenerate body axis")
    cosang = float(np.clip(up_body @ np.array([0.0, -1.0, 0.0]) / norm, -1.0, 1.0))
    return math.degrees(math.acos(cosang))


def tilt_analysis(tilts_deg: np.ndarray, errors: np.ndarray,
                  query_deg: np.ndarray | None = None,
                  kernel_halfwidth_deg: float = 20.0):
    """Epanechnikov-smoothed error vs tilt: w(u) = max(0, 1 - u^2) with
    u = (tilt - query) / halfwidth. Queries with zero total weight are NaN."""
    tilts = np.asarray(tilts_deg, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if query_deg is None:
        query_deg = np.arange(0.0, 181.0, 1.0)
    query = np.asarray(query_deg, dtype=float)
    u = (tilts[None, :] - query[:, None]) / kernel_halfwidth_deg
    w = np.maximum(0.0, 1.0 - u * u)
    totals = w.sum(axis=1)
    values = np.full(len(query), np.nan)
    ok = totals > 0
    values[ok] = (w[ok] @ errors) / totals[ok]
    return query, values


# ---------------------------------------------------------------------------
# depth validation
# ---------------------------------------------------------------------------


def render_depth(model: BodyModel, pose: PoseParams, shape: ShapeParams,
                 camera: Camera) -> np.ndarray:
    """Depth map of the posed body through the camera; NaN = background."""
    if model.faces is None:
        raise ValueError("model carries no faces; cannot rasterize")
    posed = pose_body(model, pose, shape)
    return _render_mesh_depth(posed.vertices, model.faces, camera)


def depth_compare(rendered: np.ndarray, captured: np.ndarray):
    """Mean and median absolute distance in cm over pixels defined in both."""
    rendered = np.asarray(rendered, dtype=float)
    captured = np.asarray(captured, dtype=float)
    if rendered.shape != captured.shape:
        raise ValueError(f"depth maps differ in shape: {rendered.shape} vs {captured.shape}")
    both = np.isfinite(rendered) & np.isfinite(captured)
    if not both.any():
        raise ValueError("no pixel is defined in both depth maps")
    diff = np.abs(rendered[both] - captured[both]) * 100.0
    return float(diff.mean()), float(np.median(diff))


@dataclass
class DepthValidation:
    """Per-frame depth agreement plus batch success accounting."""

    frame_mean_cm: list[float]
    frame_median_cm: list[float]
    success_rate: float

    @property
    def mean_cm(self) -> float:
        return float(np.mean(self.frame_mean_cm))

    @property
    def median_cm(self) -> float:
        return float(np.mean(self.frame_median_cm))


def validate_depth_sequence(rendered_maps, captured_maps, n_attempted: int | None = None
                            ) -> DepthValidation:
    means, medians = [], []
    for rend, capt in zip(rendered_maps, captured_maps):
        m, med = depth_compare(rend, capt)
        means.append(m)
        medians.append(med)
    attempted = n_attempted if n_attempted is not None else len(means)
    rate = len(means) / attempted if attempted else 0.0
    return DepthValidation(means, medians, rate)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    mpjpe: dict
    pa_mpjpe_mm: float
    pck3d_curve: np.ndarray
    pck3d_auc: float
    norm2d: dict | None
    pck2d_curve: np.ndarray | None
    pck2d_auc: float | None
    n_instances: int
    extras: dict

    def to_json(self) -> dict:
        def clean(x):
            if isinstance(x, np.ndarray):
                return [None if not np.isfinite(v) else float(v) for v in x.tolist()]
            if isinstance(x, float) and not np.isfinite(x):
                return None
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            return x

        return {
            "mpjpe": clean(self.mpjpe),
            "pa_mpjpe_mm": clean(self.pa_mpjpe_mm),
            "pck3d_curve": clean(self.pck3d_curve),
            "pck3d_auc": self.pck3d_auc,
            "norm2d": clean(self.norm2d),
            "pck2d_curve": clean(self.pck2d_curve),
            "pck2d_auc": self.pck2d_auc,
            "n_instances": self.n_instances,
            "extras": clean(self.extras),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))

    def table_text(self) -> str:
        """Joint-group summary table, one row per group plus means."""
        lines = []
        header = f"{'group':<12}{'(njts)':>8}{'N':>8}{'3D (mm)':>12}{'2D (%)':>12}"
        lines.append(header)
        lines.append("-" * len(header))
        groups = self.mpjpe["per_group"]
        counts = self.mpjpe["group_counts"]
        sizes = {name: len(m) for name, m in STANDARD_GROUPS.items()}
        for name in groups:
            d3 = groups[name]
            d2 = self.norm2d["per_group"].get(name) if self.norm2d else float("nan")
            njts = sizes.get(name, 0)
            lines.append(
                f"{name:<12}{f'({njts})':>8}{counts[name]:>8}"
                f"{d3:>12.1f}{(d2 if d2 == d2 else float('nan')):>12.1f}"
            )
        lines.append("-" * len(header))
        mean2d = self.norm2d["mean"] if self.norm2d else float("nan")
        lines.append(f"{'mean':<12}{'(24)':>8}{'':>8}{self.mpjpe['mean']:>12.1f}{mean2d:>12.1f}")
        lines.append(f"{'mean (PA)':<12}{'(24)':>8}{'':>8}{self.pa_mpjpe_mm:>12.1f}")
        lines.append(f"PCK3D AUC: {self.pck3d_auc:.1f}" +
                     (f"   PCK2D AUC: {self.pck2d_auc:.1f}" if self.pck2d_auc is not None else ""))
        return "\n".join(lines)


def evaluate_predictions(
    gt_params,
    pred_params,
    model: BodyModel,
    visibility: np.ndarray,
    gt_cameras=None,
    pred_cameras=None,
    groups: dict | None = None,
    mean_pose: PoseParams | None = None,
    occluded_counts: np.ndarray | None = None,
    tilts_deg: np.ndarray | None = None,
) -> EvalReport:
    """Full benchmark of one prediction set against ground truth."""
    visibility = np.asarray(visibility, dtype=bool)
    errors = joint_errors_mm(gt_params, pred_params, model)
    agg = aggregate_joint_errors(errors, visibility, groups)
    curve3, auc3 = pck_curve_3d(errors, visibility)

    pa_values = []
    for (gp, gs), (pp, ps), vis in zip(gt_params, pred_params, visibility):
        if vis.sum() >= 3:
            gt_j = joints_zero_translation(model, gp, gs)
            pr_j = joints_zero_translation(model, pp, ps)
            pa_values.append(procrustes_mpjpe(gt_j, pr_j, vis))
    pa = float(np.mean(pa_values)) if pa_values else float("nan")

    norm2d = None
    curve2 = None
    auc2 = None
    if gt_cameras is not None and pred_cameras is not None:
        rows = [
            normalized_2d_instance(gt, pred, gcam, pcam, model)
            for gt, pred, gcam, pcam in zip(gt_params, pred_params, gt_cameras, pred_cameras)
        ]
        frac = np.asarray(rows)
        vis2 = visibility & np.isfinite(frac)
        norm2d = aggregate_joint_errors(100.0 * frac, vis2, groups)
        curve2, auc2 = pck_curve_2d(frac, vis2)

    per_instance = np.array(
        [errors[i, visibility[i]].mean() if visibility[i].any() else np.nan
         for i in range(len(errors))]
    )
    extras: dict = {"per_instance_mpjpe_mm": per_instance}
    if occluded_counts is not None:
        bounds, occ = occlusion_analysis(per_instance, occluded_counts,
                                         max_occluded=model.joint_count)
        extras["occlusion_bounds"] = bounds
        extras["occlusion_mpjpe_mm"] = occ
    if mean_pose is not None:
        diffs = pose_difficulty_mm(gt_params, mean_pose, model)
        edges, vals, counts = difficulty_analysis(diffs, per_instance)
        extras["difficulty_edges_mm"] = edges
        extras["difficulty_mpjpe_mm"] = vals
        extras["difficulty_counts"] = counts
    if tilts_deg is not None:
        q, smoothed = tilt_analysis(tilts_deg, per_instance)
        extras["tilt_query_deg"] = q
        extras["tilt_mpjpe_mm"] = smoothed

    return EvalReport(
        mpjpe=agg,
        pa_mpjpe_mm=pa,
        pck3d_curve=curve3,
        pck3d_auc=auc3,
        norm2d=norm2d,
        pck2d_curve=curve2,
        pck2d_auc=auc2,
        n_instances=len(gt_params),
        extras=extras,
    )
