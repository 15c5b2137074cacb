"""Minimal z-tested triangle rasterizer over pixel centers.

Depth is perspective-correct (1/z interpolates linearly in screen space), so a
covered pixel's value equals the camera-frame depth of the ray-surface
intersection at its center. Faces with any vertex behind the camera are
skipped; good enough for validation scenes where bodies sit well in frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Camera


@dataclass
class RasterResult:
    depth: np.ndarray  # (H, W) float, NaN where nothing was hit
    mesh_index: np.ndarray  # (H, W) int32, -1 background
    face_index: np.ndarray  # (H, W) int32, -1 background
    bary: np.ndarray  # (H, W, 3) perspective-correct barycentrics

    def nearest_vertex(self, faces_per_mesh: list[np.ndarray]) -> np.ndarray:
        """Per-pixel index of the hit face's dominant vertex (-1 background)."""
        out = np.full(self.depth.shape, -1, dtype=np.int64)
        for mesh_id, faces in enumerate(faces_per_mesh):
            sel = self.mesh_index == mesh_id
            if not sel.any():
                continue
            fidx = self.face_index[sel]
            corner = np.argmax(self.bary[sel], axis=1)
            out[sel] = faces[fidx, corner]
        return out


def rasterize_meshes(
    meshes: list[tuple[np.ndarray, np.ndarray]], camera: Camera, min_depth: float = 1e-6
) -> RasterResult:
    """Rasterize [(vertices (V,3) world, faces (F,3))] into one depth buffer."""
    h, w = camera.height, camera.width
    depth = np.full((h, w), np.inf)
    mesh_index = np.full((h, w), -1, dtype=np.int32)
    face_index = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3))

    for mesh_id, (verts, faces) in enumerate(meshes):
        cam = camera.to_camera(np.asarray(verts, dtype=float))
        z = cam[:, 2]
        ok = z > min_depth
        pix = np.empty((len(cam), 2))
        zsafe = np.where(ok, z, 1.0)
        pix[:, 0] = camera.fx * cam[:, 0] / zsafe + camera.cx
        pix[:, 1] = camera.fy * cam[:, 1] / zsafe + camera.cy

        for fi, face in enumerate(np.asarray(faces, dtype=int)):
            if not ok[face].all():
                continue
            tri = pix[face]  # (3, 2)
            tz = z[face]
            x0 = max(int(np.ceil(tri[:, 0].min())), 0)
            x1 = min(int(np.floor(tri[:, 0].max())), w - 1)
            y0 = max(int(np.ceil(tri[:, 1].min())), 0)
            y1 = min(int(np.floor(tri[:, 1].max())), h - 1)
            if x0 > x1 or y0 > y1:
                continue
            area = (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1]) - (
                tri[1, 1] - tri[0, 1]
            ) * (tri[2, 0] - tri[0, 0])
            if abs(area) < 1e-12:
                continue
            xs = np.arange(x0, x1 + 1)
            ys = np.arange(y0, y1 + 1)
            px, py = np.meshgrid(xs, ys)
            l0 = (
                (tri[2, 0] - tri[1, 0]) * (py - tri[1, 1])
                - (tri[2, 1] - tri[1, 1]) * (px - tri[1, 0])
            ) / area
            l1 = (
                (tri[0, 0] - tri[2, 0]) * (py - tri[2, 1])
                - (tri[0, 1] - tri[2, 1]) * (px - tri[2, 0])
            ) / area
            l2 = 1.0 - l0 - l1
            inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
            if not inside.any():
                continue
            inv_z = l0 / tz[0] + l1 / tz[1] + l2 / tz[2]
            zpix = 1.0 / inv_z
            win = depth[y0 : y1 + 1, x0 : x1 + 1]
            better = inside & (zpix < win)
            if not better.any():
                continue
            win[better] = zpix[better]
            mesh_index[y0 : y1 + 1, x0 : x1 + 1][better] = mesh_id
            face_index[y0 : y1 + 1, x0 : x1 + 1][better] = fi
            # perspective-correct barycentrics for attribute interpolation
            pb = np.stack([l0 / tz[0], l1 / tz[1], l2 / tz[2]], axis=-1) * zpix[..., None]
            bary[y0 : y1 + 1, x0 : x1 + 1][better] = pb[better]

    depth[~np.isfinite(depth)] = np.nan
    return RasterResult(depth=depth, mesh_index=mesh_index, face_index=face_index, bary=bary)


def render_depth(vertices: np.ndarray, faces: np.ndarray, camera: Camera) -> np.ndarray:
    """Depth map (H, W) of one mesh; NaN where the surface does not cover."""
    return rasterize_meshes([(vertices, faces)], camera).depth
