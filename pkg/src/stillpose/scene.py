"""Per-sequence inputs: calibrated cameras, instance masks (run-length encoded),
dense pixel-to-vertex correspondences, optical flow, and the SfM point cloud.

File formats are documented in docs/formats.md. Pixel convention: integer
(u, v) addresses the center of cell (u, v); arrays are indexed [v, u]; all
sub-pixel sampling is bilinear with clamp-to-edge.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC_RLE = b"RLEM"
_MAGIC_DP = b"DPCR"
_MAGIC_FLOW = b"FLOW"
_MAGIC_CLOUD = b"PCLD"
_MAGIC_DEPTH = b"DPTH"
_VERSION = 1


class BehindCameraError(ValueError):
    """Projection of a point with non-positive depth was requested."""


class SequenceLoadError(RuntimeError):
    """A sequence directory is missing a component or a file is malformed."""


# ---------------------------------------------------------------------------
# camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: x_cam = R @ x_world + t, pixel = f * (x/z, y/z) + c."""

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        r = self.rotation
        if r.shape != (3, 3) or np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation must be orthonormal")
        if np.linalg.det(r) < 0:
            raise ValueError("camera rotation must have determinant +1")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def depth_of(self, points: np.ndarray) -> np.ndarray | float:
        """z-coordinate in the camera frame; scalar in, scalar out."""
        cam = self.to_camera(points)
        return cam[..., 2]

    def project(self, point: np.ndarray) -> np.ndarray:
        """Single 3D point -> (2,) pixel; raises BehindCameraError for depth <= 0."""
        cam = self.to_camera(point)
        if cam[2] <= 0:
            raise BehindCameraError(f"point has non-positive depth {cam[2]:.6g}")
        return np.array(
            [self.fx * cam[0] / cam[2] + self.cx, self.fy * cam[1] / cam[2] + self.cy]
        )

    def project_many(self, points: np.ndarray):
        """(n,3) -> pixels (n,2), valid (n,) bool. Behind-camera rows are invalid
        (pixels set to NaN) instead of raising."""
        cam = self.to_camera(points)
        z = cam[:, 2]
        valid = z > 0
        pix = np.full((len(cam), 2), np.nan)
        zs = np.where(valid, z, 1.0)
        pix[:, 0] = self.fx * cam[:, 0] / zs + self.cx
        pix[:, 1] = self.fy * cam[:, 1] / zs + self.cy
        pix[~valid] = np.nan
        return pix, valid

    def backproject(self, pixel: np.ndarray, depth: float | np.ndarray) -> np.ndarray:
        """Inverse of project at a given camera-frame depth; works on (2,) or (n,2)."""
        pixel = np.asarray(pixel, dtype=float)
        d = np.asarray(depth, dtype=float)
        x = (pixel[..., 0] - self.cx) / self.fx * d
        y = (pixel[..., 1] - self.cy) / self.fy * d
        cam = np.stack([x, y, d], axis=-1)
        return (cam - self.translation) @ self.rotation

    def in_image(self, pixels: np.ndarray) -> np.ndarray:
        """Rounded-pixel inside test for (n,2) float pixels."""
        pix = np.rint(np.asarray(pixels))
        with np.errstate(invalid="ignore"):
            ok = (
                (pix[..., 0] >= 0)
                & (pix[..., 0] < self.width)
                & (pix[..., 1] >= 0)
                & (pix[..., 1] < self.height)
            )
        return ok & np.isfinite(pix).all(axis=-1)


def safe_round_pixels(pixels: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Round float pixels to int, writing 0 where invalid (avoids NaN casts)."""
    pix = np.where(valid[:, None], pixels, 0.0)
    return np.rint(pix).astype(np.int64)


def bilinear_sample(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sample grid (H,W) or (H,W,C) at float pixels (n,2)=(u,v), clamp-to-edge."""
    grid = np.asarray(grid)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    h, w = grid.shape[:2]
    u = np.clip(pts[:, 0], 0.0, w - 1.0)
    v = np.clip(pts[:, 1], 0.0, h - 1.0)
    u0 = np.floor(u).astype(int)
    v0 = np.floor(v).astype(int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (u - u0)[:, None] if grid.ndim == 3 else (u - u0)
    fv = (v - v0)[:, None] if grid.ndim == 3 else (v - v0)
    g00 = grid[v0, u0]
    g01 = grid[v0, u1]
    g10 = grid[v1, u0]
    g11 = grid[v1, u1]
    top = g00 * (1 - fu) + g01 * fu
    bot = g10 * (1 - fu) + g11 * fu
    return top * (1 - fv) + bot * fv


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------


@dataclass
class InstanceMask:
    """One instance's pixel set in one frame, run-length encoded over the
    row-major flat index (v * width + u)."""

    frame_index: int
    instance_id: int
    runs: np.ndarray  # (n, 2) int64 (start, length)
    width: int
    height: int
    _grid: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.runs = np.asarray(self.runs, dtype=np.int64).reshape(-1, 2)
        if len(self.runs):
            if self.runs[:, 1].min() <= 0:
                raise ValueError("run lengths must be positive")
            ends = self.runs[:, 0] + self.runs[:, 1]
            if self.runs[:, 0].min() < 0 or ends.max() > self.width * self.height:
                raise ValueError("mask runs fall outside image bounds")

    @classmethod
    def from_array(cls, grid: np.ndarray, frame_index: int, instance_id: int) -> "InstanceMask":
        flat = np.asarray(grid, dtype=bool).reshape(-1)
        padded = np.concatenate([[False], flat, [False]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        starts, ends = edges[::2], edges[1::2]
        runs = np.stack([starts, ends - starts], axis=1)
        return cls(frame_index, instance_id, runs, grid.shape[1], grid.shape[0])

    def to_array(self) -> np.ndarray:
        if self._grid is None:
            flat = np.zeros(self.width * self.height, dtype=bool)
            for start, length in self.runs:
                flat[start : start + length] = True
            self._grid = flat.reshape(self.height, self.width)
        return self._grid

    def pixels(self) -> np.ndarray:
        """(n, 2) int array of (u, v) pixel coordinates."""
        flat = np.concatenate(
            [np.arange(s, s + l) for s, l in self.runs] or [np.empty(0, dtype=np.int64)]
        )
        v, u = np.divmod(flat, self.width)
        return np.stack([u, v], axis=1)

    @property
    def pixel_count(self) -> int:
        return int(self.runs[:, 1].sum()) if len(self.runs) else 0

    def contains(self, pixels: np.ndarray) -> np.ndarray:
        """Membership test for integer (n,2) (u,v); out-of-bounds -> False."""
        pix = np.atleast_2d(np.asarray(pixels, dtype=np.int64))
        ok = (
            (pix[:, 0] >= 0)
            & (pix[:, 0] < self.width)
            & (pix[:, 1] >= 0)
            & (pix[:, 1] < self.height)
        )
        out = np.zeros(len(pix), dtype=bool)
        grid = self.to_array()
        out[ok] = grid[pix[ok, 1], pix[ok, 0]]
        return out


def write_masks(path: str | Path, frame_index: int, masks: list[InstanceMask],
                width: int, height: int) -> None:
    parts = [
        _MAGIC_RLE,
        struct.pack("<IIII", _VERSION, frame_index, width, height),
        struct.pack("<I", len(masks)),
    ]
    for m in sorted(masks, key=lambda m: m.instance_id):
        parts.append(struct.pack("<iI", m.instance_id, len(m.runs)))
        parts.append(m.runs.astype("<u4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_masks(path: str | Path) -> list[InstanceMask]:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC_RLE:
        raise SequenceLoadError(f"{path}: not a mask file (bad magic)")
    _, frame, width, height, count = struct.unpack_from("<IIIII", buf, 4)
    offset = 24
    masks = []
    for _ in range(count):
        inst, nruns = struct.unpack_from("<iI", buf, offset)
        offset += 8
        runs = np.frombuffer(buf, dtype="<u4", count=2 * nruns, offset=offset)
        offset += 8 * nruns
        masks.append(
            InstanceMask(frame, inst, runs.astype(np.int64).reshape(-1, 2), width, height)
        )
    return masks


# ---------------------------------------------------------------------------
# dense correspondences
# ---------------------------------------------------------------------------


@dataclass
class DenseCorrespondence:
    """Per mask pixel: a body-part index and a model-vertex index."""

    frame_index: int
    pixels: np.ndarray  # (n, 2) int (u, v)
    parts: np.ndarray  # (n,) int, 1-based part index
    vertices: np.ndarray  # (n,) int model-vertex index
    width: int
    height: int
    _lookup: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
        self.parts = np.asarray(self.parts, dtype=np.int64).reshape(-1)
        self.vertices = np.asarray(self.vertices, dtype=np.int64).reshape(-1)
        if not (len(self.pixels) == len(self.parts) == len(self.vertices)):
            raise ValueError("dense-correspondence arrays must have equal length")
        if len(self.vertices) and self.vertices.min() < 0:
            raise ValueError("vertex indices must be nonnegative")

    def _index(self) -> dict:
        if self._lookup is None:
            flat = self.pixels[:, 1] * self.width + self.pixels[:, 0]
            self._lookup = {int(f): i for i, f in enumerate(flat)}
        return self._lookup

    def row_at(self, u: int, v: int) -> int:
        """Row index for pixel (u, v), or -1 when the pixel carries no data."""
        return self._index().get(int(v) * self.width + int(u), -1)

    def rows_at(self, pixels: np.ndarray) -> np.ndarray:
        """Vectorized row_at for integer (n, 2) pixels; -1 where undefined."""
        pix = np.atleast_2d(np.asarray(pixels, dtype=np.int64))
        idx = self._index()
        flat = pix[:, 1] * self.width + pix[:, 0]
        oob = (
            (pix[:, 0] < 0) | (pix[:, 0] >= self.width)
            | (pix[:, 1] < 0) | (pix[:, 1] >= self.height)
        )
        out = np.array([idx.get(int(f), -1) for f in flat], dtype=np.int64)
        out[oob] = -1
        return out


def write_dense_correspondence(path: str | Path, dp: DenseCorrespondence) -> None:
    n = len(dp.pixels)
    parts = [
        _MAGIC_DP,
        struct.pack("<IIIII", _VERSION, dp.frame_index, dp.width, dp.height, n),
        dp.pixels[:, 0].astype("<u4").tobytes(),
        dp.pixels[:, 1].astype("<u4").tobytes(),
        dp.parts.astype("<i4").tobytes(),
        dp.vertices.astype("<i4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_dense_correspondence(path: str | Path) -> DenseCorrespondence:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC_DP:
        raise SequenceLoadError(f"{path}: not a dense-correspondence file (bad magic)")
    _, frame, width, height, n = struct.unpack_from("<IIIII", buf, 4)
    offset = 24
    u = np.frombuffer(buf, dtype="<u4", count=n, offset=offset); offset += 4 * n
    v = np.frombuffer(buf, dtype="<u4", count=n, offset=offset); offset += 4 * n
    part = np.frombuffer(buf, dtype="<i4", count=n, offset=offset); offset += 4 * n
    vert = np.frombuffer(buf, dtype="<i4", count=n, offset=offset)
    pixels = np.stack([u, v], axis=1).astype(np.int64)
    return DenseCorrespondence(frame, pixels, part.astype(np.int64),
                               vert.astype(np.int64), width, height)


# ---------------------------------------------------------------------------
# optical flow
# ---------------------------------------------------------------------------


@dataclass
class FlowField:
    """Dense displacement from source_frame pixels to target_frame (pixels)."""

    source_frame: int
    target_frame: int
    data: np.ndarray  # (H, W, 2) float32, (du, dv)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError("flow data must be (H, W, 2)")

    @property
    def shape(self):
        return self.data.shape[:2]

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Bilinear flow at float pixels (n, 2)."""
        return bilinear_sample(self.data, points)


def write_flow(path: str | Path, flow: FlowField) -> None:
    h, w = flow.shape
    parts = [
        _MAGIC_FLOW,
        struct.pack("<IIIII", _VERSION, flow.source_frame, flow.target_frame, w, h),
        flow.data.astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_flow(path: str | Path) -> FlowField:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC_FLOW:
        raise SequenceLoadError(f"{path}: not a flow file (bad magic)")
    _, src, tgt, w, h = struct.unpack_from("<IIIII", buf, 4)
    data = np.frombuffer(buf, dtype="<f4", count=h * w * 2, offset=24).reshape(h, w, 2)
    return FlowField(src, tgt, data.copy())


# ---------------------------------------------------------------------------
# point cloud
# ---------------------------------------------------------------------------


@dataclass
class ScenePointCloud:
    """Raw SfM points with colors and per-point observation lists."""

    points: np.ndarray  # (N, 3)
    colors: np.ndarray  # (N, 3) in [0, 1]
    obs_offsets: np.ndarray  # (N + 1,) into obs_frames/obs_pixels
    obs_frames: np.ndarray  # (M,)
    obs_pixels: np.ndarray  # (M, 2) float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        if len(self.colors) and (self.colors.min() < 0 or self.colors.max() > 1):
            raise ValueError("point colors must lie in [0, 1]")

    @classmethod
    def from_observation_lists(cls, points, colors, observations) -> "ScenePointCloud":
        """observations: per point, iterable of (frame, u, v)."""
        offsets = np.zeros(len(points) + 1, dtype=np.int64)
        frames, pixels = [], []
        for i, obs in enumerate(observations):
            offsets[i + 1] = offsets[i] + len(obs)
            for frame, u, v in obs:
                frames.append(frame)
                pixels.append((u, v))
        return cls(
            points,
            colors,
            offsets,
            np.asarray(frames, dtype=np.int64),
            np.asarray(pixels, dtype=float).reshape(-1, 2),
        )

    def observations_of(self, i: int):
        lo, hi = self.obs_offsets[i], self.obs_offsets[i + 1]
        return self.obs_frames[lo:hi], self.obs_pixels[lo:hi]

    def __len__(self) -> int:
        return len(self.points)


def write_cloud(path: str | Path, cloud: ScenePointCloud) -> None:
    n = len(cloud)
    parts = [
        _MAGIC_CLOUD,
        struct.pack("<II", _VERSION, n),
        cloud.points.astype("<f4").tobytes(),
        cloud.colors.astype("<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))
    obs = []
    for i in range(n):
        frames, pixels = cloud.observations_of(i)
        obs.append([[int(f), float(p[0]), float(p[1])] for f, p in zip(frames, pixels)])
    obs_path = Path(path).with_name("cloud_obs.json")
    obs_path.write_text(json.dumps({"observations": obs}, sort_keys=True))


def read_cloud(path: str | Path) -> ScenePointCloud:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != _MAGIC_CLOUD:
        raise SequenceLoadError(f"{path}: not a point-cloud file (bad magic)")
    _, n = struct.unpack_from("<II", buf, 4)
    offset = 12
    pts = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=offset).reshape(n, 3)
    offset += 12 * n
    col = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=offset).reshape(n, 3)
    obs_path = path.with_name("cloud_obs.json")
    if not obs_path.exists():
        raise SequenceLoadError(f"missing observation file {obs_path}")
    raw = json.loads(obs_path.read_text())["observations"]
    if len(raw) != n:
        raise SequenceLoadError(
            f"{obs_path}: {len(raw)} observation lists for {n} points"
        )
    return ScenePointCloud.from_observation_lists(
        pts.astype(float), col.astype(float), raw
    )


# ---------------------------------------------------------------------------
# depth rasters
# ---------------------------------------------------------------------------


def write_depth(path: str | Path, frame_index: int, depth: np.ndarray) -> None:
    h, w = depth.shape
    parts = [
        _MAGIC_DEPTH,
        struct.pack("<IIII", _VERSION, frame_index, w, h),
        np.asarray(depth, dtype="<f4").tobytes(),
    ]
    Path(path).write_bytes(b"".join(parts))


def read_depth(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != _MAGIC_DEPTH:
        raise SequenceLoadError(f"{path}: not a depth file (bad magic)")
    _, _, w, h = struct.unpack_from("<IIII", buf, 4)
    return np.frombuffer(buf, dtype="<f4", count=h * w, offset=20).reshape(h, w).astype(float)


# ---------------------------------------------------------------------------
# sequence
# ---------------------------------------------------------------------------


@dataclass
class Sequence:
    """All loaded per-sequence inputs. Immutable by convention; share freely."""

    directory: Path
    cameras: list[Camera]
    masks: list[list[InstanceMask]]  # per frame, sorted by instance_id
    correspondences: list[DenseCorrespondence]
    flows_fw: dict[int, FlowField]  # frame n -> n+1
    flows_bw: dict[int, FlowField]  # frame n -> n-1
    cloud: ScenePointCloud
    image_paths: list[Path | None]
    _images: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_frames(self) -> int:
        return len(self.cameras)

    @property
    def image_size(self):
        cam = self.cameras[0]
        return cam.width, cam.height

    def masks_by_id(self, frame: int) -> dict[int, InstanceMask]:
        return {m.instance_id: m for m in self.masks[frame]}

    def has_image(self, frame: int) -> bool:
        return self.image_paths[frame] is not None

    def image(self, frame: int) -> np.ndarray:
        """Float RGB (H, W, 3) in [0, 1]; loaded lazily and cached."""
        if frame not in self._images:
            path = self.image_paths[frame]
            if path is None:
                raise SequenceLoadError(f"frame {frame} has no image file")
            from PIL import Image

            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB"), dtype=float) / 255.0
            self._images[frame] = arr
        return self._images[frame]


def _camera_from_json(entry: dict) -> Camera:
    return Camera(
        rotation=np.asarray(entry["rotation"], dtype=float),
        translation=np.asarray(entry["translation"], dtype=float),
        fx=float(entry["fx"]),
        fy=float(entry["fy"]),
        cx=float(entry["cx"]),
        cy=float(entry["cy"]),
        width=int(entry["width"]),
        height=int(entry["height"]),
    )


def camera_to_json(camera: Camera, frame: int) -> dict:
    return {
        "frame": frame,
        "rotation": camera.rotation.tolist(),
        "translation": camera.translation.tolist(),
        "fx": camera.fx,
        "fy": camera.fy,
        "cx": camera.cx,
        "cy": camera.cy,
        "width": camera.width,
        "height": camera.height,
    }


def write_cameras(path: str | Path, cameras: list[Camera]) -> None:
    frames = [camera_to_json(cam, i) for i, cam in enumerate(cameras)]
    Path(path).write_text(json.dumps({"frames": frames}, sort_keys=True, indent=1))


def load_sequence(directory: str | Path) -> Sequence:
    """Load a sequence directory; every error names the offending component.

    Loading is deterministic and idempotent: frames are ordered by index and
    instances by id, so loading twice yields equal structures.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise SequenceLoadError(f"sequence directory not found: {directory}")
    cam_path = directory / "cameras.json"
    if not cam_path.exists():
        raise SequenceLoadError(f"missing cameras.json in {directory}")
    try:
        cam_doc = json.loads(cam_path.read_text())
        entries = sorted(cam_doc["frames"], key=lambda e: e["frame"])
        cameras = [_camera_from_json(e) for e in entries]
    except SequenceLoadError:
        raise
    except Exception as exc:
        raise SequenceLoadError(f"malformed cameras.json in {directory}: {exc}") from exc
    n = len(cameras)
    if n < 2:
        raise SequenceLoadError(f"sequence needs at least 2 frames, found {n}")
    if [e["frame"] for e in entries] != list(range(n)):
        raise SequenceLoadError("cameras.json frame indices must be 0..N-1")
    width, height = cameras[0].width, cameras[0].height

    masks: list[list[InstanceMask]] = []
    corrs: list[DenseCorrespondence] = []
    for frame in range(n):
        mask_path = directory / "masks" / f"{frame:04d}.rle"
        if not mask_path.exists():
            raise SequenceLoadError(f"missing mask file for frame {frame}: {mask_path}")
        frame_masks = sorted(read_masks(mask_path), key=lambda m: m.instance_id)
        for m in frame_masks:
            if (m.width, m.height) != (width, height):
                raise SequenceLoadError(
                    f"mask size {m.width}x{m.height} != image size for frame {frame}"
                )
        masks.append(frame_masks)

        dp_path = directory / "dp" / f"{frame:04d}.bin"
        if not dp_path.exists():
            raise SequenceLoadError(
                f"missing dense-correspondence file for frame {frame}: {dp_path}"
            )
        corrs.append(read_dense_correspondence(dp_path))

    flows_fw: dict[int, FlowField] = {}
    flows_bw: dict[int, FlowField] = {}
    for frame in range(n - 1):
        path = directory / "flow" / f"{frame:04d}_fw.bin"
        if not path.exists():
            raise SequenceLoadError(f"missing forward flow for frame {frame}: {path}")
        flow = read_flow(path)
        if flow.shape != (height, width):
            raise SequenceLoadError(f"forward flow for frame {frame} has wrong size")
        flows_fw[frame] = flow
    for frame in range(1, n):
        path = directory / "flow" / f"{frame:04d}_bw.bin"
        if not path.exists():
            raise SequenceLoadError(f"missing backward flow for frame {frame}: {path}")
        flow = read_flow(path)
        if flow.shape != (height, width):
            raise SequenceLoadError(f"backward flow for frame {frame} has wrong size")
        flows_bw[frame] = flow

    cloud_path = directory / "cloud.bin"
    if not cloud_path.exists():
        raise SequenceLoadError(f"missing cloud.bin in {directory}")
    cloud = read_cloud(cloud_path)
    bad = [int(f) for f in cloud.obs_frames if f < 0 or f >= n]
    if bad:
        raise SequenceLoadError(f"cloud observations reference invalid frames {bad[:5]}")

    image_paths: list[Path | None] = []
    for frame in range(n):
        path = directory / "images" / f"{frame:04d}.png"
        image_paths.append(path if path.exists() else None)

    return Sequence(
        directory=directory,
        cameras=cameras,
        masks=masks,
        correspondences=corrs,
        flows_fw=flows_fw,
        flows_bw=flows_bw,
        cloud=cloud,
        image_paths=image_paths,
    )
