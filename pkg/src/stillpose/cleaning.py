"""Prune the SfM cloud to human-only points for one track.

A point earns support in a frame when it (a) reprojects inside the track's
mask, and (b) passes a soft z-buffer visibility test, where a z-buffer
occlusion verdict can be overturned if the point's color matches the image at
its projection. Points supported in at least keep_threshold frames survive.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scene import (Camera, InstanceMask, ScenePointCloud, Sequence, bilinear_sample,
                    safe_round_pixels)
from .tracking import Track

_MAGIC_CLEAN = b"CPCD"
_VERSION = 1


@dataclass(frozen=True)
class CleaningConfig:
    keep_threshold: int | None = None  # None -> ceil(0.3 * track length)
    zbuffer_downscale: int = 8  # z-buffer cell size in pixels
    depth_slack: float = 0.05  # meters behind the cell minimum still visible
    color_distance_max: float = 0.25  # RGB euclidean distance in [0, sqrt(3)]

    def __post_init__(self):
        if self.keep_threshold is not None and self.keep_threshold < 1:
            raise ValueError("keep_threshold must be >= 1")
        if self.zbuffer_downscale < 1:
            raise ValueError("zbuffer_downscale must be >= 1")
        if self.depth_slack <= 0:
            raise ValueError("depth_slack must be positive")

    def resolve_threshold(self, track_length: int) -> int:
        if self.keep_threshold is not None:
            return self.keep_threshold
        return max(1, math.ceil(0.3 * track_length))


@dataclass
class SoftZBuffer:
    """Minimum scene depth per low-resolution cell; empty cells hold +inf."""

    grid: np.ndarray  # (rows, cols) float
    downscale: int
    depth_slack: float

    def cell_of(self, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pix = np.rint(np.atleast_2d(pixels)).astype(int)
        return pix[:, 1] // self.downscale, pix[:, 0] // self.downscale


@dataclass
class CleanPointCloud:
    """Surviving human points with per-point support counts."""

    points: np.ndarray
    colors: np.ndarray
    support_count: np.ndarray
    source_indices: np.ndarray  # rows of the input cloud each point came from
    keep_threshold: int

    def __len__(self) -> int:
        return len(self.points)


def reprojects_in_mask(point: np.ndarray, camera: Camera, mask: InstanceMask) -> bool:
    """True iff the point projects (positive depth) onto a mask pixel."""
    pix, valid = camera.project_many(np.asarray(point, dtype=float)[None, :])
    if not valid[0]:
        return False
    return bool(mask.contains(np.rint(pix).astype(np.int64))[0])


def build_soft_zbuffer(
    cloud_points: np.ndarray, camera: Camera, config: CleaningConfig
) -> SoftZBuffer:
    """Per-cell minimum depth over all cloud points projecting into the image."""
    pts = np.asarray(cloud_points, dtype=float).reshape(-1, 3)
    if not len(pts):
        raise ValueError("cannot build a z-buffer from an empty cloud")
    ds = config.zbuffer_downscale
    rows = -(-camera.height // ds)
    cols = -(-camera.width // ds)
    grid = np.full((rows, cols), np.inf)
    pix, valid = camera.project_many(pts)
    depth = camera.to_camera(pts)[:, 2]
    inside = valid & camera.in_image(pix)
    if inside.any():
        ipix = np.rint(pix[inside]).astype(int)
        r = ipix[:, 1] // ds
        c = ipix[:, 0] // ds
        np.minimum.at(grid, (r, c), depth[inside])
    return SoftZBuffer(grid=grid, downscale=ds, depth_slack=config.depth_slack)


def is_visible(
    point: np.ndarray, camera: Camera, zbuffer: SoftZBuffer, config: CleaningConfig
) -> bool:
    """True iff the point sits within depth_slack of its cell's front depth."""
    pix, valid = camera.project_many(np.asarray(point, dtype=float)[None, :])
    if not valid[0] or not camera.in_image(pix)[0]:
        return False
    r, c = zbuffer.cell_of(pix)
    depth = float(camera.depth_of(point))
    return depth <= zbuffer.grid[r[0], c[0]] + config.depth_slack


def appearance_agrees(
    point_color: np.ndarray, image_color: np.ndarray, config: CleaningConfig
) -> bool:
    """True iff the RGB euclidean distance is within color_distance_max."""
    if point_color is None:
        raise ValueError("point carries no color")
    point_color = np.asarray(point_color, dtype=float).reshape(3)
    image_color = np.asarray(image_color, dtype=float).reshape(3)
    return float(np.linalg.norm(point_color - image_color)) <= config.color_distance_max


def clean(
    cloud: ScenePointCloud,
    track: Track,
    seq: Sequence,
    config: CleaningConfig = CleaningConfig(),
) -> CleanPointCloud:
    """Count heuristic-passing frames per point and keep the well-supported ones.

    Appearance is consulted only for points the z-buffer calls occluded; a
    color match rescues the frame (the cloud is sparse, so a point's own cell
    may be fronted by an unrelated structure).
    """
    if not track.nodes:
        raise ValueError("track is empty")
    pts = cloud.points
    support = np.zeros(len(pts), dtype=np.int64)
    slack = config.depth_slack
    ds = config.zbuffer_downscale

    for frame, instance_id in track.nodes:
        camera = seq.cameras[frame]
        mask = seq.masks_by_id(frame).get(instance_id)
        if mask is None:
            continue
        pix, valid = camera.project_many(pts)
        depth = camera.to_camera(pts)[:, 2]
        inside = valid & camera.in_image(pix)
        if not inside.any():
            continue
        ipix = safe_round_pixels(pix, inside)
        in_mask = inside & mask.contains(ipix)

        zbuf = build_soft_zbuffer(pts, camera, config)
        r = np.clip(ipix[:, 1] // ds, 0, zbuf.grid.shape[0] - 1)
        c = np.clip(ipix[:, 0] // ds, 0, zbuf.grid.shape[1] - 1)
        visible = inside & (depth <= zbuf.grid[r, c] + slack)

        passed = in_mask & visible
        occluded = in_mask & ~visible
        if occluded.any() and seq.has_image(frame):
            image = seq.image(frame)
            sampled = bilinear_sample(image, pix[occluded])
            dist = np.linalg.norm(cloud.colors[occluded] - sampled, axis=1)
            rescued = dist <= config.color_distance_max
            passed = passed.copy()
            passed[np.flatnonzero(occluded)[rescued]] = True
        support += passed

    threshold = config.resolve_threshold(len(track.nodes))
    keep = support >= threshold
    return CleanPointCloud(
        points=pts[keep].copy(),
        colors=cloud.colors[keep].copy(),
        support_count=support[keep],
        source_indices=np.flatnonzero(keep),
        keep_threshold=threshold,
    )


def write_clean_cloud(path: str | Path, cloud: CleanPointCloud) -> None:
    parts = [
        _MAGIC_CLEAN,
        struct.pack("<III", _VERSION, len(cloud), cloud.keep_threshold),
        cloud.points.astype("<f4").tobytes(),
        cloud.colors.astype("<f4").tobytes(),
        cloud.support_count.astype("<u4").tobytes(),
        cloud.source_indices.astype("<u4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_clean_cloud(path: str | Path) -> CleanPointCloud:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC_CLEAN:
        raise ValueError(f"{path}: not a clean-cloud file (bad magic)")
    _, n, threshold = struct.unpack_from("<III", buf, 4)
    offset = 16
    pts = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=offset).reshape(n, 3)
    offset += 12 * n
    col = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=offset).reshape(n, 3)
    offset += 12 * n
    sup = np.frombuffer(buf, dtype="<u4", count=n, offset=offset)
    offset += 4 * n
    src = np.frombuffer(buf, dtype="<u4", count=n, offset=offset)
    return CleanPointCloud(
        points=pts.astype(float),
        colors=col.astype(float),
        support_count=sup.astype(np.int64),
        source_indices=src.astype(np.int64),
        keep_threshold=threshold,
    )
