"""Synthetic frozen-people scenes with exact ground truth.

An orbiting pinhole camera films toy bodies inside a colored box room. The
generator rasterizes every frame and emits the full sequence-directory layout
(masks, pixel-to-vertex maps, flow, cloud, images, depth) together with the
ground truth that produced it, so every pipeline stage can be scored exactly.
All randomness flows from one seed; identical calls write identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, PoseParams, ShapeParams, pose_body, save_model
from .rasterize import rasterize_meshes
from .scene import (
    Camera,
    DenseCorrespondence,
    InstanceMask,
    ScenePointCloud,
    write_cameras,
    write_cloud,
    write_dense_correspondence,
    write_depth,
    write_flow,
    write_masks,
    safe_round_pixels,
    FlowField,
)
from .toy import make_toy_model


@dataclass
class SyntheticInstance:
    pose_axis_angle: list  # (J, 3)
    beta: list  # (B,)
    translation: list  # (3,)
    base_color: list  # RGB in [0, 1]
    visible_from: int = 0
    visible_to: int | None = None  # inclusive; None = last frame

    def active_in(self, frame: int, n_frames: int) -> bool:
        last = self.visible_to if self.visible_to is not None else n_frames - 1
        return self.visible_from <= frame <= last


@dataclass
class SyntheticScene:
    instances: list[SyntheticInstance]
    n_frames: int = 30
    image_width: int = 160
    image_height: int = 160
    focal: float = 160.0
    orbit_radius: float = 2.6
    orbit_height: float = 1.0
    orbit_center: list = field(default_factory=lambda: [0.0, 1.0, 0.0])
    orbit_start_deg: float = 0.0
    orbit_end_deg: float = 360.0
    room_half_size: float = 4.0
    room_height: float = 8.0
    point_jitter_m: float = 0.0
    pixel_jitter_px: float = 0.0
    point_dropout: float = 0.0
    points_per_instance: int = 900
    background_points: int = 1200

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticScene":
        doc = dict(doc)
        doc["instances"] = [SyntheticInstance(**inst) for inst in doc["instances"]]
        return cls(**doc)


def orbit_camera(scene: SyntheticScene, angle_rad: float) -> Camera:
    center = np.asarray(scene.orbit_center, dtype=float)
    pos = np.array(
        [
            center[0] + scene.orbit_radius * np.cos(angle_rad),
            scene.orbit_height,
            center[2] + scene.orbit_radius * np.sin(angle_rad),
        ]
    )
    forward = center - pos
    z = forward / np.linalg.norm(forward)
    down = np.array([0.0, -1.0, 0.0])
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return Camera(
        rotation=rot,
        translation=-rot @ pos,
        fx=scene.focal,
        fy=scene.focal,
        cx=(scene.image_width - 1) / 2.0,
        cy=(scene.image_height - 1) / 2.0,
        width=scene.image_width,
        height=scene.image_height,
    )


def scene_cameras(scene: SyntheticScene) -> list[Camera]:
    span = scene.orbit_end_deg - scene.orbit_start_deg
    endpoint = abs(span % 360.0) > 1e-9  # full circles skip the duplicate end view
    angles = np.deg2rad(
        np.linspace(scene.orbit_start_deg, scene.orbit_end_deg, scene.n_frames,
                    endpoint=endpoint)
    )
    return [orbit_camera(scene, a) for a in angles]


# ---------------------------------------------------------------------------
# room geometry
# ---------------------------------------------------------------------------


def _quad(p0, p1, p2, p3):
    verts = np.array([p0, p1, p2, p3], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int64)
    return verts, faces


def room_meshes(scene: SyntheticScene):
    """Floor and four walls, each with its own flat-ish color field."""
    s = scene.room_half_size
    h = scene.room_height
    quads = [
        _quad([-s, 0, -s], [s, 0, -s], [s, 0, s], [-s, 0, s]),       # floor
        _quad([-s, 0, -s], [s, 0, -s], [s, h, -s], [-s, h, -s]),     # wall z-
        _quad([-s, 0, s], [s, 0, s], [s, h, s], [-s, h, s]),         # wall z+
        _quad([-s, 0, -s], [-s, 0, s], [-s, h, s], [-s, h, -s]),     # wall x-
        _quad([s, 0, -s], [s, 0, s], [s, h, s], [s, h, -s]),         # wall x+
    ]
    base_colors = np.array(
        [
            [0.35, 0.40, 0.30],
            [0.20, 0.35, 0.70],
            [0.25, 0.30, 0.65],
            [0.18, 0.45, 0.60],
            [0.30, 0.35, 0.75],
        ]
    )
    meshes = []
    for (verts, faces), color in zip(quads, base_colors):
        vcol = np.clip(color[None, :] + 0.03 * np.sin(verts[:, :1] + verts[:, 2:3]), 0, 1)
        meshes.append((verts, faces, np.broadcast_to(vcol, (4, 3)).copy()))
    return meshes


def instance_vertex_colors(model: BodyModel, base_color: np.ndarray) -> np.ndarray:
    v = model.template_vertices
    wave = 0.05 * np.sin(12.0 * v[:, 1])[:, None]
    return np.clip(np.asarray(base_color)[None, :] + wave, 0.0, 1.0)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _sample_surface(rng, verts, faces, colors, count):
    """Uniform area-weighted surface samples: positions and colors."""
    a = verts[faces[:, 0]]
    b = verts[faces[:, 1]]
    c = verts[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    probs = areas / areas.sum()
    face_ids = rng.choice(len(faces), size=count, p=probs)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    bary = np.stack([1 - r1, r1 * (1 - r2), r1 * r2], axis=1)
    pts = np.einsum("nk,nkd->nd", bary, np.stack([a, b, c], axis=1)[face_ids])
    cols = np.einsum(
        "nk,nkd->nd", bary,
        np.stack([colors[faces[:, 0]], colors[faces[:, 1]], colors[faces[:, 2]]], axis=1)[face_ids],
    )
    return pts, np.clip(cols, 0.0, 1.0)


def generate_synthetic(scene: SyntheticScene, seed: int, out_dir: str | Path,
                       model: BodyModel | None = None) -> Path:
    """Write a full synthetic sequence directory; returns its path.

    Layout: model.npz, cameras.json, masks/, dp/, flow/, images/, depth/
    (full scene) and depth/inst<k>/ (body-only), cloud.bin + cloud_obs.json,
    ground_truth.json + gt_labels.npz.
    """
    out = Path(out_dir)
    for sub in ("masks", "dp", "flow", "images", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    if model is None:
        model = make_toy_model()
    save_model(model, out / "model.npz")
    cameras = scene_cameras(scene)
    write_cameras(out / "cameras.json", cameras)

    n = scene.n_frames
    width, height = scene.image_width, scene.image_height
    room = room_meshes(scene)

    posed_bodies = []
    body_colors = []
    for inst in scene.instances:
        pose = PoseParams(np.asarray(inst.pose_axis_angle, dtype=float),
                          np.asarray(inst.translation, dtype=float))
        shape = ShapeParams(np.asarray(inst.beta, dtype=float))
        posed_bodies.append(pose_body(model, pose, shape))
        body_colors.append(instance_vertex_colors(model, np.asarray(inst.base_color)))
        (out / "depth" / f"inst{len(posed_bodies) - 1}").mkdir(exist_ok=True)

    # --- per-frame rendering ------------------------------------------------
    from PIL import Image

    n_inst = len(scene.instances)
    depth_maps = []
    for frame in range(n):
        cam = cameras[frame]
        active = [k for k in range(n_inst) if scene.instances[k].active_in(frame, n)]
        meshes = [(posed_bodies[k].vertices, model.faces) for k in active]
        mesh_colors = [body_colors[k] for k in active]
        mesh_faces = [model.faces for _ in active]
        for verts, faces, colors in room:
            meshes.append((verts, faces))
            mesh_colors.append(colors)
            mesh_faces.append(faces)
        raster = rasterize_meshes(meshes, cam)
        depth_maps.append(raster.depth)
        write_depth(out / "depth" / f"{frame:04d}.bin", frame, raster.depth)

        # per-instance body-only depth (what a sensor sees of that body)
        for slot, k in enumerate(active):
            body_depth = np.where(raster.mesh_index == slot, raster.depth, np.nan)
            write_depth(out / "depth" / f"inst{k}" / f"{frame:04d}.bin", frame, body_depth)

        # masks
        frame_masks = []
        for slot, k in enumerate(active):
            grid = raster.mesh_index == slot
            if grid.any():
                frame_masks.append(InstanceMask.from_array(grid, frame, k))
        write_masks(out / "masks" / f"{frame:04d}.rle", frame, frame_masks, width, height)

        # color image
        image = np.full((height, width, 3), 0.05)
        vertex_map = raster.nearest_vertex(mesh_faces)
        for mid in range(len(meshes)):
            sel = raster.mesh_index == mid
            if not sel.any():
                continue
            tri = mesh_faces[mid][raster.face_index[sel]]  # (n, 3)
            corner_colors = mesh_colors[mid][tri]  # (n, 3, 3)
            image[sel] = np.einsum("nk,nkc->nc", raster.bary[sel], corner_colors)
        Image.fromarray(np.rint(image * 255).astype(np.uint8)).save(
            out / "images" / f"{frame:04d}.png"
        )

        # dense correspondences (body meshes only), with optional pixel jitter
        dp_pixels, dp_parts, dp_verts = [], [], []
        for slot, k in enumerate(active):
            sel = raster.mesh_index == slot
            if not sel.any():
                continue
            vv, uu = np.nonzero(sel)
            vert_ids = vertex_map[vv, uu]
            if scene.pixel_jitter_px > 0:
                jit = np.rint(
                    np.stack([uu, vv], axis=1)
                    + rng.normal(0.0, scene.pixel_jitter_px, (len(uu), 2))
                ).astype(int)
                jit[:, 0] = np.clip(jit[:, 0], 0, width - 1)
                jit[:, 1] = np.clip(jit[:, 1], 0, height - 1)
                same = raster.mesh_index[jit[:, 1], jit[:, 0]] == slot
                vert_ids = np.where(same, vertex_map[jit[:, 1], jit[:, 0]], vert_ids)
            dp_pixels.append(np.stack([uu, vv], axis=1))
            dp_parts.append(model.vertex_parts[vert_ids])
            dp_verts.append(vert_ids)
        if dp_pixels:
            dp = DenseCorrespondence(
                frame,
                np.concatenate(dp_pixels),
                np.concatenate(dp_parts),
                np.concatenate(dp_verts),
                width,
                height,
            )
        else:
            dp = DenseCorrespondence(frame, np.empty((0, 2), dtype=np.int64),
                                     np.empty(0, dtype=np.int64),
                                     np.empty(0, dtype=np.int64), width, height)
        write_dense_correspondence(out / "dp" / f"{frame:04d}.bin", dp)

    # --- optical flow (exact projective motion of the static scene) ---------
    ug, vg = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    grid_pix = np.stack([ug.ravel(), vg.ravel()], axis=1)

    def true_flow(src: int, dst: int) -> FlowField:
        depth = depth_maps[src].ravel()
        valid = np.isfinite(depth)
        world = cameras[src].backproject(grid_pix[valid], depth[valid])
        target_pix, tvalid = cameras[dst].project_many(world)
        flow = np.zeros((height * width, 2), dtype=np.float32)
        disp = target_pix - grid_pix[valid]
        disp[~tvalid] = 0.0
        flow[valid] = disp.astype(np.float32)
        return FlowField(src, dst, flow.reshape(height, width, 2))

    for frame in range(n - 1):
        write_flow(out / "flow" / f"{frame:04d}_fw.bin", true_flow(frame, frame + 1))
    for frame in range(1, n):
        write_flow(out / "flow" / f"{frame:04d}_bw.bin", true_flow(frame, frame - 1))

    # --- point cloud ----------------------------------------------------------
    # Body points sit on repeatable surface features, the way SfM triangulates
    # distinctive texture: sampled at mesh vertices (with replacement when the
    # budget exceeds the vertex count). Background points are uniform surface
    # samples; nothing downstream associates them with vertices.
    all_points, all_colors, labels = [], [], []
    for k, inst in enumerate(scene.instances):
        count = scene.points_per_instance
        nvert = model.vertex_count
        if count <= nvert:
            ids = rng.choice(nvert, size=count, replace=False)
        else:
            ids = np.concatenate([np.arange(nvert), rng.choice(nvert, size=count - nvert)])
        pts = posed_bodies[k].vertices[ids]
        cols = body_colors[k][ids]
        all_points.append(pts)
        all_colors.append(cols)
        labels.append(np.full(len(pts), k, dtype=np.int64))
    room_verts = []
    room_faces = []
    room_cols = []
    offset = 0
    for verts, faces, colors in room:
        room_verts.append(verts)
        room_faces.append(faces + offset)
        room_cols.append(colors)
        offset += len(verts)
    bg_pts, bg_cols = _sample_surface(
        rng,
        np.concatenate(room_verts),
        np.concatenate(room_faces),
        np.concatenate(room_cols),
        scene.background_points,
    )
    all_points.append(bg_pts)
    all_colors.append(bg_cols)
    labels.append(np.full(len(bg_pts), -1, dtype=np.int64))
    points = np.concatenate(all_points)
    colors = np.concatenate(all_colors)
    labels = np.concatenate(labels)

    if scene.point_dropout > 0:
        keep = rng.random(len(points)) >= scene.point_dropout
        points, colors, labels = points[keep], colors[keep], labels[keep]

    observations: list[list] = [[] for _ in range(len(points))]
    for frame in range(n):
        cam = cameras[frame]
        pix, valid = cam.project_many(points)
        inside = valid & cam.in_image(pix)
        if not inside.any():
            continue
        ipix = safe_round_pixels(pix, inside)
        z = cam.to_camera(points)[:, 2]
        rendered = depth_maps[frame][ipix[:, 1], ipix[:, 0]]
        seen = inside & np.isfinite(rendered) & (np.abs(z - rendered) < 0.03)
        for i in np.flatnonzero(seen):
            observations[i].append((frame, float(pix[i, 0]), float(pix[i, 1])))

    noisy_points = points.copy()
    if scene.point_jitter_m > 0:
        noisy_points = points + rng.normal(0.0, scene.point_jitter_m, points.shape)
    cloud = ScenePointCloud.from_observation_lists(noisy_points, colors, observations)
    write_cloud(out / "cloud.bin", cloud)

    # --- ground truth ---------------------------------------------------------
    gt = {
        "seed": seed,
        "scene": scene.to_json(),
        "instances": [
            {
                "instance_id": k,
                "pose_axis_angle": inst.pose_axis_angle,
                "beta": inst.beta,
                "translation": inst.translation,
                "visible_from": inst.visible_from,
                "visible_to": inst.visible_to,
            }
            for k, inst in enumerate(scene.instances)
        ],
    }
    (out / "ground_truth.json").write_text(json.dumps(gt, sort_keys=True, indent=1))
    np.savez(out / "gt_labels.npz", point_labels=labels, clean_points=points)
    return out


def load_ground_truth(seq_dir: str | Path):
    """(ground-truth dict, point labels, noise-free point positions)."""
    seq_dir = Path(seq_dir)
    doc = json.loads((seq_dir / "ground_truth.json").read_text())
    data = np.load(seq_dir / "gt_labels.npz")
    return doc, data["point_labels"], data["clean_points"]


def gt_instance_params(doc: dict, instance_id: int):
    for inst in doc["instances"]:
        if inst["instance_id"] == instance_id:
            return (
                PoseParams(np.asarray(inst["pose_axis_angle"], dtype=float),
                           np.asarray(inst["translation"], dtype=float)),
                ShapeParams(np.asarray(inst["beta"], dtype=float)),
            )
    raise KeyError(f"no ground-truth instance {instance_id}")


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def single_person_scene(
    n_frames: int = 30,
    point_jitter_m: float = 0.0,
    pixel_jitter_px: float = 0.0,
) -> SyntheticScene:
    """One mildly posed person at the orbit center."""
    pose = np.zeros((4, 3))
    pose[1, 0] = 0.15   # slight chest lean
    pose[2, 2] = -0.5   # left arm lowered
    pose[3, 2] = 0.35   # right arm raised
    inst = SyntheticInstance(
        pose_axis_angle=pose.tolist(),
        beta=[0.3, -0.2],
        translation=[0.0, 0.0, 0.0],
        base_color=[0.80, 0.30, 0.20],
    )
    return SyntheticScene(
        instances=[inst],
        n_frames=n_frames,
        point_jitter_m=point_jitter_m,
        pixel_jitter_px=pixel_jitter_px,
    )


def crossing_scene(n_frames: int = 10, with_ghost: bool = False) -> SyntheticScene:
    """Two people whose projections swap sides as the camera sweeps past their
    alignment axis; optional third person visible in a single frame."""
    pose_a = np.zeros((4, 3))
    pose_a[2, 2] = -0.4
    pose_a[3, 2] = 0.4
    pose_b = np.zeros((4, 3))
    pose_b[2, 2] = -1.2   # arms held low: silhouettes differ through the pass
    pose_b[3, 2] = 1.2
    instances = [
        SyntheticInstance(
            pose_axis_angle=pose_a.tolist(), beta=[0.0, 0.0],
            translation=[0.45, 0.0, 0.0], base_color=[0.85, 0.25, 0.20],
        ),
        SyntheticInstance(
            pose_axis_angle=pose_b.tolist(), beta=[0.2, 0.1],
            translation=[-0.45, 0.85, 0.50], base_color=[0.85, 0.65, 0.20],
        ),
    ]
    if with_ghost:
        instances.append(
            SyntheticInstance(
                pose_axis_angle=np.zeros((4, 3)).tolist(), beta=[-0.5, -0.3],
                translation=[0.0, 0.0, -1.4], base_color=[0.70, 0.25, 0.60],
                visible_from=n_frames // 2, visible_to=n_frames // 2,
            )
        )
    return SyntheticScene(
        instances=instances,
        n_frames=n_frames,
        orbit_start_deg=-50.0,
        orbit_end_deg=50.0,
    )
