"""Human-verification backend: serves pending fitted instances and persists
accept/discard verdicts in an append-only log.

The store is a directory: instances/*.json (exported by the check stage),
decisions.jsonl (one record per line, never rewritten), optional
clouds/clean_cloud_<id>.bin chunks, and store.json pointing at the sequence
whose images back the overlay views. Replaying the log over the instance
files reconstructs the status map exactly; the server keeps no other state.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .bodymodel import load_model, pose_body
from .cleaning import read_clean_cloud
from .postproc import load_instance

MAX_REVIEW_FRAMES = 8
MAX_CLOUD_POINTS = 4096


class UnknownInstanceError(KeyError):
    pass


class DecisionConflictError(RuntimeError):
    pass


class NotPendingError(RuntimeError):
    pass


@dataclass
class DecisionRecord:
    instance_id: str
    verdict: str  # accept | discard
    reviewer: str
    timestamp: str
    elapsed_seconds: float

    def to_json(self) -> dict:
        return asdict(self)


def sample_frames(n_frames: int, limit: int = MAX_REVIEW_FRAMES) -> list[int]:
    """At most `limit` frame positions, evenly spaced: floor(k * n / limit)."""
    if n_frames <= limit:
        return list(range(n_frames))
    return [k * n_frames // limit for k in range(limit)]


class ReviewStore:
    """Instance files + append-only decision log; safe for concurrent reads
    with writes serialized through one lock."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.instances_dir = self.root / "instances"
        self.log_path = self.root / "decisions.jsonl"
        self.clouds_dir = self.root / "clouds"
        self._lock = threading.Lock()
        self._served_at: dict[str, float] = {}
        meta_path = self.root / "store.json"
        self.meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        for key in ("sequence_dir", "model_file"):
            value = self.meta.get(key)
            if value and not os.path.isabs(value):
                self.meta[key] = str((self.root / value).resolve())
        if not self.instances_dir.is_dir():
            raise FileNotFoundError(f"review store has no instances/ directory: {self.root}")

    # -- state reconstruction -------------------------------------------------

    def decisions(self) -> list[DecisionRecord]:
        if not self.log_path.exists():
            return []
        records = []
        for line in self.log_path.read_text().splitlines():
            if line.strip():
                records.append(DecisionRecord(**json.loads(line)))
        return records

    def _base_statuses(self) -> dict[str, str]:
        out = {}
        for path in sorted(self.instances_dir.glob("instance_*.json")):
            doc = json.loads(path.read_text())
            out[doc["instance_id"]] = doc["status"]
        return out

    def status_map(self) -> dict[str, str]:
        """Exported statuses overlaid by replaying the decision log."""
        statuses = self._base_statuses()
        for rec in self.decisions():
            if rec.instance_id in statuses:
                statuses[rec.instance_id] = (
                    "human-accepted" if rec.verdict == "accept" else "human-rejected"
                )
        return statuses

    def _instance_path(self, instance_id: str) -> Path:
        path = self.instances_dir / f"instance_{instance_id}.json"
        if not path.exists():
            raise UnknownInstanceError(instance_id)
        return path

    # -- queries ---------------------------------------------------------------

    def list_pending(self, offset: int = 0, limit: int | None = None) -> list[dict]:
        """Pending instances ordered by id; stable pagination."""
        statuses = self.status_map()
        pending = sorted(k for k, v in statuses.items() if v == "pending-human")
        if limit is not None:
            pending = pending[offset : offset + limit]
        elif offset:
            pending = pending[offset:]
        out = []
        for iid in pending:
            doc = json.loads(self._instance_path(iid).read_text())
            out.append(
                {
                    "instance_id": iid,
                    "status": "pending-human",
                    "n_frames": len(doc.get("track_nodes", [])),
                    "objective_value": doc.get("objective_value"),
                }
            )
        return out

    def get_item(self, instance_id: str) -> dict:
        """Full review payload: parameters, posed geometry, visibility, a point
        cloud chunk, and <= 8 evenly sampled frames with their cameras."""
        path = self._instance_path(instance_id)
        doc = json.loads(path.read_text())
        status = self.status_map()[instance_id]
        payload = {
            "instance_id": instance_id,
            "status": status,
            "pose_axis_angle": doc["pose_axis_angle"],
            "translation": doc["translation"],
            "beta": doc["beta"],
            "visibility_sequence": doc["visibility_sequence"],
            "track_nodes": doc["track_nodes"],
        }
        seq_dir = self.meta.get("sequence_dir")
        model_file = self.meta.get("model_file")
        if model_file and Path(model_file).exists():
            from .bodymodel import PoseParams, ShapeParams

            model = load_model(model_file)
            posed = pose_body(
                model,
                PoseParams(np.asarray(doc["pose_axis_angle"]), np.asarray(doc["translation"])),
                ShapeParams(np.asarray(doc["beta"])),
            )
            payload["vertices"] = np.round(posed.vertices, 5).tolist()
            payload["joints"] = np.round(posed.joints, 5).tolist()
            payload["faces"] = model.faces.tolist() if model.faces is not None else None
        cloud_path = self.clouds_dir / f"clean_cloud_{instance_id}.bin"
        if cloud_path.exists():
            cloud = read_clean_cloud(cloud_path)
            step = max(1, len(cloud) // MAX_CLOUD_POINTS)
            payload["cloud_points"] = np.round(cloud.points[::step], 5).tolist()
            payload["cloud_colors"] = np.round(cloud.colors[::step], 4).tolist()
        frames = []
        track_frames = [int(f) for f, _ in doc.get("track_nodes", [])]
        cam_doc = {}
        if seq_dir and (Path(seq_dir) / "cameras.json").exists():
            entries = json.loads((Path(seq_dir) / "cameras.json").read_text())["frames"]
            cam_doc = {e["frame"]: e for e in entries}
        for pos in sample_frames(len(track_frames)):
            frame = track_frames[pos]
            frames.append(
                {
                    "frame": frame,
                    "image_url": f"/frames/{frame:04d}.png",
                    "camera": cam_doc.get(frame),
                }
            )
        payload["frames"] = frames
        self._served_at[instance_id] = time.monotonic()
        return payload

    # -- decisions ---------------------------------------------------------------

    def post_decision(self, instance_id: str, verdict: str, reviewer: str) -> DecisionRecord:
        """Append one verdict; idempotent on repeats, conflict on contradiction."""
        if verdict not in ("accept", "discard"):
            raise ValueError(f"verdict must be accept or discard, got {verdict!r}")
        self._instance_path(instance_id)
        with self._lock:
            for rec in self.decisions():
                if rec.instance_id == instance_id:
                    if rec.verdict == verdict:
                        return rec
                    raise DecisionConflictError(
                        f"instance {instance_id} already decided: {rec.verdict}"
                    )
            if self.status_map().get(instance_id) != "pending-human":
                raise NotPendingError(f"instance {instance_id} is not pending review")
            served = self._served_at.get(instance_id)
            record = DecisionRecord(
                instance_id=instance_id,
                verdict=verdict,
                reviewer=reviewer,
                timestamp=datetime.now(timezone.utc).isoformat(),
                elapsed_seconds=round(time.monotonic() - served, 3) if served else 0.0,
            )
            with self.log_path.open("a") as fh:
                fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
            return record


def create_app(store: ReviewStore, ui_dir: str | Path | None = None):
    """FastAPI app over a ReviewStore, also serving the UI bundle and frames."""
    from fastapi import FastAPI, HTTPException
    from fastapi.staticfiles import StaticFiles
    from pydantic import BaseModel

    class DecisionBody(BaseModel):
        verdict: str
        reviewer: str = "anonymous"

    app = FastAPI(title="stillpose curation")

    @app.get("/instances")
    def list_instances(status: str = "pending", offset: int = 0, limit: int | None = None):
        if status != "pending":
            raise HTTPException(400, "only status=pending is queryable")
        items = store.list_pending(offset=offset, limit=limit)
        return {"items": items, "total": len(store.list_pending())}

    @app.get("/instances/{instance_id}")
    def get_instance(instance_id: str):
        try:
            return store.get_item(instance_id)
        except UnknownInstanceError:
            raise HTTPException(404, f"unknown instance {instance_id}")

    @app.post("/instances/{instance_id}/decision")
    def post_decision(instance_id: str, body: DecisionBody):
        try:
            record = store.post_decision(instance_id, body.verdict, body.reviewer)
        except UnknownInstanceError:
            raise HTTPException(404, f"unknown instance {instance_id}")
        except DecisionConflictError as exc:
            raise HTTPException(409, str(exc))
        except NotPendingError as exc:
            raise HTTPException(409, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return record.to_json()

    seq_dir = store.meta.get("sequence_dir")
    if seq_dir and (Path(seq_dir) / "images").is_dir():
        app.mount("/frames", StaticFiles(directory=Path(seq_dir) / "images"), name="frames")
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def init_store(root: str | Path, sequence_dir: str | Path | None = None,
               model_file: str | Path | None = None) -> ReviewStore:
    """Create the store layout (idempotent) and return the store."""
    root = Path(root)
    (root / "instances").mkdir(parents=True, exist_ok=True)
    (root / "clouds").mkdir(exist_ok=True)
    meta = {}
    if sequence_dir is not None:
        meta["sequence_dir"] = os.path.relpath(sequence_dir, root)
    if model_file is not None:
        meta["model_file"] = os.path.relpath(model_file, root)
    (root / "store.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return ReviewStore(root)
