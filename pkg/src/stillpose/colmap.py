"""Import COLMAP text exports (cameras.txt / images.txt / points3D.txt) into
the sequence-directory layout: cameras.json, cloud.bin and cloud_obs.json.

Masks, dense correspondences, optical flow and images come from other tools;
this importer only covers what structure-from-motion produces. Frames are
ordered by image name; lens distortion is not modeled (SIMPLE_RADIAL inputs
are accepted with the radial coefficient dropped).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .scene import Camera, ScenePointCloud, write_cameras, write_cloud


class ColmapImportError(RuntimeError):
    pass


def _strip_comments(path: Path) -> list[str]:
    if not path.exists():
        raise ColmapImportError(f"missing COLMAP file: {path}")
    lines = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def _parse_cameras(path: Path) -> dict[int, dict]:
    cams = {}
    for line in _strip_comments(path):
        parts = line.split()
        cam_id, model = int(parts[0]), parts[1]
        width, height = int(parts[2]), int(parts[3])
        params = [float(p) for p in parts[4:]]
        if model == "PINHOLE":
            fx, fy, cx, cy = params[:4]
        elif model == "SIMPLE_PINHOLE":
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        elif model == "SIMPLE_RADIAL":
            fx = fy = params[0]
            cx, cy = params[1], params[2]  # radial term params[3] dropped
        else:
            raise ColmapImportError(f"unsupported COLMAP camera model {model}")
        cams[cam_id] = dict(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    return cams


def quaternion_to_rotation(qw: float, qx: float, qy: float, qz: float) -> np.ndarray:
    """COLMAP's world->camera unit quaternion as a rotation matrix."""
    q = np.array([qw, qx, qy, qz], dtype=float)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def import_colmap(colmap_dir: str | Path, out_dir: str | Path) -> Path:
    """Convert a COLMAP text-model directory; returns the output directory."""
    colmap_dir = Path(colmap_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cams = _parse_cameras(colmap_dir / "cameras.txt")

    # images.txt: two lines per image (pose line, then 2D-point line)
    lines = _strip_comments(colmap_dir / "images.txt")
    if len(lines) % 2:
        raise ColmapImportError("images.txt must hold two lines per image")
    images = []
    for pose_line, pts_line in zip(lines[0::2], lines[1::2]):
        parts = pose_line.split()
        image_id = int(parts[0])
        qw, qx, qy, qz = (float(v) for v in parts[1:5])
        tx, ty, tz = (float(v) for v in parts[5:8])
        cam_id = int(parts[8])
        name = parts[9]
        pts = pts_line.split()
        point3d_of_feature = {}
        for k in range(0, len(pts), 3):
            pid = int(pts[k + 2])
            if pid != -1:
                point3d_of_feature[k // 3] = (float(pts[k]), float(pts[k + 1]), pid)
        images.append(
            dict(image_id=image_id, name=name, cam_id=cam_id,
                 rotation=quaternion_to_rotation(qw, qx, qy, qz),
                 translation=np.array([tx, ty, tz]),
                 features=point3d_of_feature)
        )
    images.sort(key=lambda im: im["name"])
    frame_of_image_id = {im["image_id"]: frame for frame, im in enumerate(images)}

    cameras = []
    for im in images:
        c = cams.get(im["cam_id"])
        if c is None:
            raise ColmapImportError(f"image {im['name']} references unknown camera {im['cam_id']}")
        cameras.append(Camera(rotation=im["rotation"], translation=im["translation"], **c))
    write_cameras(out / "cameras.json", cameras)

    points, colors, observations = [], [], []
    for line in _strip_comments(colmap_dir / "points3D.txt"):
        parts = line.split()
        xyz = [float(v) for v in parts[1:4]]
        rgb = [int(v) / 255.0 for v in parts[4:7]]
        track = parts[8:]
        obs = []
        for k in range(0, len(track), 2):
            image_id = int(track[k])
            feature_idx = int(track[k + 1])
            frame = frame_of_image_id.get(image_id)
            if frame is None:
                continue
            feat = images[frame]["features"].get(feature_idx)
            if feat is None:
                continue
            obs.append((frame, feat[0], feat[1]))
        points.append(xyz)
        colors.append(rgb)
        observations.append(obs)

    cloud = ScenePointCloud.from_observation_lists(
        np.asarray(points, dtype=float).reshape(-1, 3),
        np.asarray(colors, dtype=float).reshape(-1, 3),
        observations,
    )
    write_cloud(out / "cloud.bin", cloud)
    return out
