"""Stage orchestration: reproducible configs, content-hash provenance, and the
track -> clean -> fit -> check -> eval chain over a sequence directory.

Every stage writes its outputs plus a manifest recording the config hash and
the sha256 of each input it consumed. Manifests carry no timestamps, so a
rerun with identical seed and config is bit-identical. A stage warns when an
upstream output no longer matches the hash its manifest recorded (staleness).
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, PoseParams, ShapeParams, load_model, pose_body
from .cleaning import CleaningConfig, clean, read_clean_cloud, write_clean_cloud
from .curation import init_store
from .fitting import (
    FitConfig,
    GmmPrior,
    ShapePrior,
    build_fit_problem,
    fit,
    load_fit,
    save_fit,
)
from .metrics import (
    EvalReport,
    body_tilt_deg,
    evaluate_predictions,
    render_depth,
    validate_depth_sequence,
)
from .postproc import load_instance, run_checks, save_instance
from .scene import Camera, Sequence, load_sequence, read_depth
from .tracking import TrackingConfig, build_tracks, load_tracks, save_tracks
from .toy import TOY_JOINT_PART_SETS


@dataclass(frozen=True)
class PostprocConfig:
    reproj_base_px: float = 15.0  # at 640-width; scaled by image width
    min_torso: int = 5
    require_convergence: bool = True
    auto_accept: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    """All stage configs in one serializable bundle.

    The default fit weights carry lambda_3d=2e4: the normalized per-vertex
    weights give the 3D term a far smaller robust mass than the 2D term
    (sigma 0.1 m vs 10 px), and this restores comparable influence.
    """

    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    cleaning: CleaningConfig = field(default_factory=CleaningConfig)
    fit: FitConfig = field(default_factory=lambda: FitConfig(lambda_3d=2e4))
    postproc: PostprocConfig = field(default_factory=PostprocConfig)
    prior_variance: float = 1.0  # fallback single-component pose prior
    shape_prior_inverse_variance: float = 1.0

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["fit"]["stages"] = list(doc["fit"]["stages"])
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineConfig":
        return cls(
            tracking=TrackingConfig(**doc.get("tracking", {})),
            cleaning=CleaningConfig(**doc.get("cleaning", {})),
            fit=FitConfig(**{**doc.get("fit", {}),
                             "stages": tuple(doc.get("fit", {}).get("stages", ("global", "all")))}),
            postproc=PostprocConfig(**doc.get("postproc", {})),
            prior_variance=doc.get("prior_variance", 1.0),
            shape_prior_inverse_variance=doc.get("shape_prior_inverse_variance", 1.0),
        )

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))

    def config_hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


STAGE_ORDER = ("track", "clean", "fit", "check")


def write_manifest(out_dir: Path, stage: str, config_hash: str,
                   inputs: dict[str, str], outputs: list[str],
                   stale: list[str]) -> None:
    doc = {
        "stage": stage,
        "config_hash": config_hash,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "output_hashes": {name: file_hash(out_dir / name) for name in sorted(outputs)},
        "stale_at_run": sorted(stale),
    }
    (out_dir / f"{stage}_manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1))


def stale_stages(out_dir: str | Path) -> dict[str, list[str]]:
    """Stages whose recorded inputs no longer match the files on disk.

    After rerunning an upstream stage with a different config, every
    downstream manifest that recorded the old outputs shows up here until the
    downstream stage is rerun.
    """
    out_dir = Path(out_dir)
    stale: dict[str, list[str]] = {}
    for stage in STAGE_ORDER:
        manifest = out_dir / f"{stage}_manifest.json"
        if not manifest.exists():
            continue
        doc = json.loads(manifest.read_text())
        changed = []
        for rel, digest in doc.get("inputs", {}).items():
            path = (out_dir / rel).resolve()
            if not path.exists() or file_hash(path) != digest:
                changed.append(rel)
        if changed:
            stale[stage] = sorted(changed)
    return stale


class MissingUpstreamError(RuntimeError):
    pass


def _hash_inputs(paths: list[Path], base: Path) -> dict[str, str]:
    """Hashes keyed by path relative to the manifest directory, so outputs are
    byte-identical regardless of where the dataset lives."""
    out = {}
    for p in paths:
        if p.exists():
            out[os.path.relpath(p, base)] = file_hash(p)
    return out


def _sequence_input_files(seq_dir: Path) -> list[Path]:
    files = [seq_dir / "cameras.json", seq_dir / "cloud.bin", seq_dir / "cloud_obs.json"]
    for sub in ("masks", "dp", "flow"):
        files.extend(sorted((seq_dir / sub).glob("*")))
    return files


def _warn_stale(out_dir: Path) -> list[str]:
    """Flattened staleness findings across the manifest chain, with a warning."""
    findings = []
    for stage, changed in stale_stages(out_dir).items():
        for rel in changed:
            findings.append(f"{stage}:{rel}")
    if findings:
        print(f"warning: stale manifest inputs: {findings}", file=sys.stderr)
    return findings


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def default_out_dir(seq_dir: str | Path) -> Path:
    return Path(seq_dir) / "derived"


def stage_track(seq_dir: str | Path, config: PipelineConfig,
                out_dir: str | Path | None = None) -> Path:
    seq_dir = Path(seq_dir)
    out = Path(out_dir) if out_dir else default_out_dir(seq_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq = load_sequence(seq_dir)
    tracks = build_tracks(seq, config.tracking)
    save_tracks(out / "tracks.json", tracks)
    inputs = _hash_inputs(_sequence_input_files(seq_dir), out)
    write_manifest(out, "track", config.config_hash(), inputs, ["tracks.json"], [])
    return out / "tracks.json"


def stage_clean(seq_dir: str | Path, config: PipelineConfig,
                out_dir: str | Path | None = None,
                tracks_file: str | Path | None = None) -> list[Path]:
    seq_dir = Path(seq_dir)
    out = Path(out_dir) if out_dir else default_out_dir(seq_dir)
    out.mkdir(parents=True, exist_ok=True)
    tracks_file = Path(tracks_file) if tracks_file else out / "tracks.json"
    if not tracks_file.exists():
        raise MissingUpstreamError(f"missing tracks file {tracks_file}; run `track` first")
    seq = load_sequence(seq_dir)
    tracks = load_tracks(tracks_file)
    stale = _warn_stale(out)
    inputs = _hash_inputs([tracks_file] + _sequence_input_files(seq_dir), out)
    outputs = []
    for i, track in enumerate(tracks):
        cc = clean(seq.cloud, track, seq, config.cleaning)
        name = f"clean_cloud_{i}.bin"
        write_clean_cloud(out / name, cc)
        outputs.append(name)
    write_manifest(out, "clean", config.config_hash(), inputs, outputs, stale)
    return [out / name for name in outputs]


def _load_priors(model: BodyModel, config: PipelineConfig,
                 gmm_file: str | Path | None,
                 mean_pose_file: str | Path | None):
    body_dim = 3 * (model.joint_count - 1)
    mean_pose = PoseParams.zeros(model.joint_count)
    if mean_pose_file and Path(mean_pose_file).exists():
        data = np.load(mean_pose_file)
        mean_pose = PoseParams(np.asarray(data["axis_angle"], dtype=float))
    if gmm_file and Path(gmm_file).exists():
        gmm = GmmPrior.load(gmm_file)
    else:
        gmm = GmmPrior.single(mean_pose.axis_angle[1:].reshape(-1), config.prior_variance)
    if gmm.dim != body_dim:
        raise ValueError(f"pose prior dimension {gmm.dim} != body dimension {body_dim}")
    shape_prior = ShapePrior.isotropic(model.shape_dim, config.shape_prior_inverse_variance)
    return gmm, shape_prior, mean_pose


def stage_fit(seq_dir: str | Path, config: PipelineConfig,
              out_dir: str | Path | None = None,
              tracks_file: str | Path | None = None,
              clouds_dir: str | Path | None = None,
              model_file: str | Path | None = None,
              gmm_file: str | Path | None = None,
              mean_pose_file: str | Path | None = None) -> list[Path]:
    seq_dir = Path(seq_dir)
    out = Path(out_dir) if out_dir else default_out_dir(seq_dir)
    out.mkdir(parents=True, exist_ok=True)
    tracks_file = Path(tracks_file) if tracks_file else out / "tracks.json"
    clouds = Path(clouds_dir) if clouds_dir else out
    model_file = Path(model_file) if model_file else seq_dir / "model.npz"
    if not tracks_file.exists():
        raise MissingUpstreamError(f"missing tracks file {tracks_file}; run `track` first")
    if not model_file.exists():
        raise MissingUpstreamError(f"missing body-model file {model_file}")
    seq = load_sequence(seq_dir)
    model = load_model(model_file)
    tracks = load_tracks(tracks_file)
    gmm, shape_prior, mean_pose = _load_priors(model, config, gmm_file, mean_pose_file)
    fit_config = config.fit
    hinges = None
    if model.joint_count != 24:
        hinges = ()
        if fit_config.lambda_epose:
            fit_config = replace(fit_config, lambda_epose=0.0)

    stale = _warn_stale(out)
    input_files = [tracks_file, model_file] + _sequence_input_files(seq_dir)
    outputs = []
    for i, track in enumerate(tracks):
        cloud_file = clouds / f"clean_cloud_{i}.bin"
        if not cloud_file.exists():
            raise MissingUpstreamError(f"missing clean cloud {cloud_file}; run `clean` first")
        input_files.append(cloud_file)
        cc = read_clean_cloud(cloud_file)
        problem = build_fit_problem(seq, track, cc, model, fit_config, gmm, shape_prior, hinges)
        centroid = cc.points.mean(axis=0) if len(cc) else np.zeros(3)
        initial = (
            PoseParams(mean_pose.axis_angle.copy(), centroid),
            ShapeParams.zeros(model.shape_dim),
        )
        result = fit(problem, fit_config, initial)
        name = f"fit_{i}.json"
        provenance = {
            "model_hash": model.source_hash,
            "sequence_dir": os.path.relpath(seq_dir, out),
            "track_id": i,
            "config_hash": config.config_hash(),
        }
        save_fit(out / name, result, fit_config, provenance)
        outputs.append(name)
    inputs = _hash_inputs(input_files, out)
    write_manifest(out, "fit", config.config_hash(), inputs, outputs, stale)
    return [out / name for name in outputs]


def stage_check(seq_dir: str | Path, config: PipelineConfig,
                out_dir: str | Path | None = None,
                tracks_file: str | Path | None = None,
                model_file: str | Path | None = None,
                joint_part_sets: dict | None = None) -> list[Path]:
    seq_dir = Path(seq_dir)
    out = Path(out_dir) if out_dir else default_out_dir(seq_dir)
    tracks_file = Path(tracks_file) if tracks_file else out / "tracks.json"
    model_file = Path(model_file) if model_file else seq_dir / "model.npz"
    if not tracks_file.exists():
        raise MissingUpstreamError(f"missing tracks file {tracks_file}")
    seq = load_sequence(seq_dir)
    model = load_model(model_file)
    tracks = load_tracks(tracks_file)
    gmm, shape_prior, _ = _load_priors(model, config, None, None)
    if joint_part_sets is None and model.joint_count != 24:
        joint_part_sets = TOY_JOINT_PART_SETS if model.joint_count == 4 else None
    torso = None
    limbs = None
    if model.joint_count == 4:
        torso = (0, 1)
        limbs = {"left_arm": (2,), "right_arm": (3,)}
    threshold = config.postproc.reproj_base_px * seq.cameras[0].width / 640.0
    stale = _warn_stale(out)

    fit_config = config.fit
    if model.joint_count != 24 and fit_config.lambda_epose:
        fit_config = replace(fit_config, lambda_epose=0.0)
    outputs = []
    input_files = [tracks_file, model_file]
    for i, track in enumerate(tracks):
        fit_file = out / f"fit_{i}.json"
        if not fit_file.exists():
            raise MissingUpstreamError(f"missing fit output {fit_file}; run `fit` first")
        input_files.append(fit_file)
        result = load_fit(fit_file)
        cc = read_clean_cloud(out / f"clean_cloud_{i}.bin")
        problem = build_fit_problem(seq, track, cc, model, fit_config, gmm, shape_prior,
                                    () if model.joint_count != 24 else None)
        inst = run_checks(
            str(i), result, problem, seq, track,
            threshold_px=threshold,
            joint_part_sets=joint_part_sets,
            torso_joints=torso,
            limbs=limbs,
            min_torso=config.postproc.min_torso if model.joint_count == 24 else 1,
            require_convergence=config.postproc.require_convergence,
            auto_accept=config.postproc.auto_accept,
        )
        name = f"instance_{i}.json"
        save_instance(out / name, inst, fit_config,
                      provenance={"config_hash": config.config_hash()})
        outputs.append(name)
    inputs = _hash_inputs(input_files, out)
    write_manifest(out, "check", config.config_hash(), inputs, outputs, stale)

    # stage a review store next to the outputs for `serve`
    store_root = out / "review"
    store = init_store(store_root, sequence_dir=seq_dir, model_file=model_file)
    for name in outputs:
        (store_root / "instances" / name).write_bytes((out / name).read_bytes())
    for i in range(len(tracks)):
        src = out / f"clean_cloud_{i}.bin"
        if src.exists():
            (store_root / "clouds" / f"clean_cloud_{i}.bin").write_bytes(src.read_bytes())
    return [out / name for name in outputs]


# ---------------------------------------------------------------------------
# evaluation stage
# ---------------------------------------------------------------------------


def _camera_from_doc(doc: dict) -> Camera:
    return Camera(
        rotation=np.asarray(doc["rotation"], dtype=float),
        translation=np.asarray(doc["translation"], dtype=float),
        fx=float(doc["fx"]), fy=float(doc["fy"]),
        cx=float(doc["cx"]), cy=float(doc["cy"]),
        width=int(doc["width"]), height=int(doc["height"]),
    )


def load_prediction(path: str | Path):
    doc = json.loads(Path(path).read_text())
    pose = PoseParams(np.asarray(doc["pose_axis_angle"], dtype=float),
                      np.asarray(doc.get("translation", [0.0, 0.0, 0.0]), dtype=float))
    shape = ShapeParams(np.asarray(doc["beta"], dtype=float))
    camera = _camera_from_doc(doc["camera"]) if doc.get("camera") else None
    return doc["instance_id"], pose, shape, camera, doc.get("frame")


def stage_eval(instances_dir: str | Path, predictions_dir: str | Path,
               model_file: str | Path, seq_dir: str | Path | None = None,
               out_dir: str | Path | None = None,
               mean_pose_file: str | Path | None = None,
               statuses: tuple[str, ...] = ("auto-accepted", "human-accepted"),
               groups: dict | None = None) -> EvalReport:
    """Score one prediction set against exported ground-truth instances."""
    instances_dir = Path(instances_dir)
    predictions_dir = Path(predictions_dir)
    out = Path(out_dir) if out_dir else predictions_dir
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(model_file)

    cameras_by_frame: dict[int, Camera] = {}
    if seq_dir and (Path(seq_dir) / "cameras.json").exists():
        doc = json.loads((Path(seq_dir) / "cameras.json").read_text())
        cameras_by_frame = {e["frame"]: _camera_from_doc(e) for e in doc["frames"]}

    # replay the curation log when the instances live inside a review store
    decided: dict[str, str] = {}
    log_path = instances_dir.parent / "decisions.jsonl"
    if log_path.exists():
        for line in log_path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                decided[rec["instance_id"]] = (
                    "human-accepted" if rec["verdict"] == "accept" else "human-rejected"
                )

    gt_params, pred_params, visibility = [], [], []
    gt_cams, pred_cams = [], []
    occluded_counts, tilts = [], []
    used = []
    for path in sorted(instances_dir.glob("instance_*.json")):
        inst = load_instance(path)
        status = decided.get(inst.instance_id, inst.status)
        if status not in statuses:
            continue
        pred_path = predictions_dir / f"pred_{inst.instance_id}.json"
        if not pred_path.exists():
            continue
        _, ppose, pshape, pcam, frame = load_prediction(pred_path)
        gt_pose, gt_shape = inst.fit.pose, inst.fit.shape
        frame = frame if frame is not None else (inst.track_nodes[0][0] if inst.track_nodes else 0)
        gcam = cameras_by_frame.get(frame)
        gt_params.append((gt_pose, gt_shape))
        pred_params.append((ppose, pshape))
        visibility.append(inst.visibility.sequence_wise)
        gt_cams.append(gcam)
        pred_cams.append(pcam if pcam is not None else gcam)
        occluded_counts.append(inst.visibility.occluded_count)
        if gcam is not None:
            tilts.append(body_tilt_deg(gt_pose, gt_shape, model, gcam,
                                       neck_joint=min(12, model.joint_count - 1)))
        else:
            tilts.append(np.nan)
        used.append(inst.instance_id)
    if not gt_params:
        raise MissingUpstreamError("no (instance, prediction) pairs to evaluate")

    mean_pose = None
    if mean_pose_file and Path(mean_pose_file).exists():
        data = np.load(mean_pose_file)
        mean_pose = PoseParams(np.asarray(data["axis_angle"], dtype=float))

    have_cams = all(c is not None for c in gt_cams) and all(c is not None for c in pred_cams)
    report = evaluate_predictions(
        gt_params, pred_params, model, np.asarray(visibility),
        gt_cameras=gt_cams if have_cams else None,
        pred_cameras=pred_cams if have_cams else None,
        groups=groups,
        mean_pose=mean_pose,
        occluded_counts=np.asarray(occluded_counts),
        tilts_deg=np.asarray(tilts) if have_cams else None,
    )
    report.extras["instance_ids"] = used
    report.save(out / "report.json")
    (out / "table.txt").write_text(report.table_text() + "\n")
    return report


def stage_validate_depth(rendered_dir: str | Path, captured_dir: str | Path,
                         out_file: str | Path | None = None):
    """Compare directories of depth rasters frame by frame."""
    rendered_dir = Path(rendered_dir)
    captured_dir = Path(captured_dir)
    rendered_files = sorted(rendered_dir.glob("*.bin"))
    if not rendered_files:
        raise MissingUpstreamError(f"no depth rasters in {rendered_dir}")
    rendered, captured = [], []
    for rfile in rendered_files:
        cfile = captured_dir / rfile.name
        if not cfile.exists():
            raise MissingUpstreamError(f"missing captured depth {cfile}")
        rendered.append(read_depth(rfile))
        captured.append(read_depth(cfile))
    validation = validate_depth_sequence(rendered, captured)
    doc = {
        "per_frame_mean_cm": validation.frame_mean_cm,
        "per_frame_median_cm": validation.frame_median_cm,
        "mean_cm": validation.mean_cm,
        "median_cm": validation.median_cm,
        "success_rate": validation.success_rate,
    }
    if out_file:
        Path(out_file).write_text(json.dumps(doc, sort_keys=True, indent=1))
    return validation


def render_fit_depths(seq_dir: str | Path, fit_file: str | Path,
                      model_file: str | Path | None = None,
                      out_dir: str | Path | None = None) -> Path:
    """Render per-frame depth maps of one fitted body (for validate-depth)."""
    from .scene import write_depth

    seq_dir = Path(seq_dir)
    model_file = Path(model_file) if model_file else seq_dir / "model.npz"
    out = Path(out_dir) if out_dir else default_out_dir(seq_dir) / "rendered_depth"
    out.mkdir(parents=True, exist_ok=True)
    seq = load_sequence(seq_dir)
    model = load_model(model_file)
    result = load_fit(fit_file)
    for frame in range(seq.n_frames):
        depth = render_depth(model, result.pose, result.shape, seq.cameras[frame])
        write_depth(out / f"{frame:04d}.bin", frame, depth)
    return out
