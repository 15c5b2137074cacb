"""Procedural toy body models for tests and synthetic scenes.

The full-body model file is licensed and never redistributed, so the whole
pipeline is exercised with small tube-and-box bodies built here. Joint
regressor rows are uniform over a vertex ring centered exactly on the joint,
which keeps every model invariant satisfied by construction.
"""

from __future__ import annotations

import numpy as np

from .bodymodel import BodyModel, validate_model


def make_box_model() -> BodyModel:
    """Minimal 8-vertex, 2-joint model: a unit-height box split at mid-height."""
    corners = []
    for y in (0.0, 1.0):
        for x, z in ((-0.25, -0.25), (0.25, -0.25), (0.25, 0.25), (-0.25, 0.25)):
            corners.append((x, y, z))
    template = np.array(corners)
    regressor = np.zeros((2, 8))
    regressor[0, :4] = 0.25
    regressor[1, 4:] = 0.25
    weights = np.zeros((8, 2))
    weights[:4, 0] = 1.0
    weights[4:, 1] = 1.0
    shape_basis = np.zeros((8, 3, 1))
    shape_basis[:, 1, 0] = 0.1 * template[:, 1]
    faces = np.array(
        [
            [0, 1, 2], [0, 2, 3],          # bottom
            [4, 6, 5], [4, 7, 6],          # top
            [0, 4, 5], [0, 5, 1],
            [1, 5, 6], [1, 6, 2],
            [2, 6, 7], [2, 7, 3],
            [3, 7, 4], [3, 4, 0],
        ],
        dtype=np.int64,
    )
    model = BodyModel(
        template_vertices=template,
        shape_blend_basis=shape_basis,
        pose_blend_basis=np.zeros((8, 3, 9)),
        joint_regressor=regressor,
        skinning_weights=weights,
        kinematic_tree=np.array([-1, 0], dtype=np.int64),
        faces=faces,
        vertex_parts=np.array([1] * 4 + [2] * 4, dtype=np.int64),
    )
    validate_model(model)
    return model


def _tube(stations: np.ndarray, axis_dirs: np.ndarray, radius: float, nring: int):
    """Ring vertices around a polyline of station centers; returns (verts, normals)."""
    angles = 2.0 * np.pi * np.arange(nring) / nring
    verts = []
    normals = []
    for center, axis in zip(stations, axis_dirs):
        axis = axis / np.linalg.norm(axis)
        ref = np.array([0.0, 0.0, 1.0])
        if abs(axis @ ref) > 0.9:
            ref = np.array([1.0, 0.0, 0.0])
        u = np.cross(axis, ref)
        u /= np.linalg.norm(u)
        w = np.cross(axis, u)
        for a in angles:
            n = np.cos(a) * u + np.sin(a) * w
            verts.append(center + radius * n)
            normals.append(n)
    return np.array(verts), np.array(normals)


def _tube_faces(n_stations: int, nring: int, offset: int) -> list[list[int]]:
    faces = []
    for s in range(n_stations - 1):
        for k in range(nring):
            a = offset + s * nring + k
            b = offset + s * nring + (k + 1) % nring
            c = offset + (s + 1) * nring + k
            d = offset + (s + 1) * nring + (k + 1) % nring
            faces.append([a, b, d])
            faces.append([a, d, c])
    return faces


def _cap_faces(ring_start: int, nring: int, apex: int, flip: bool) -> list[list[int]]:
    faces = []
    for k in range(nring):
        a = ring_start + k
        b = ring_start + (k + 1) % nring
        faces.append([apex, b, a] if flip else [apex, a, b])
    return faces


def _stations(lo: float, hi: float, count: int, must_include: tuple[float, ...]):
    """count values spanning [lo, hi] with the nearest entries snapped onto
    must_include; returns (stations, indices of the snapped entries)."""
    xs = np.linspace(lo, hi, count)
    idxs = []
    for target in must_include:
        i = int(np.argmin(np.abs(xs - target)))
        while i in idxs:  # two targets snapping to one slot: shift right
            i += 1
        xs[i] = target
        idxs.append(i)
    order = np.argsort(xs)
    xs = xs[order]
    remap = {int(old): int(new) for new, old in enumerate(order)}
    return xs, [remap[i] for i in idxs]


def make_toy_model(
    nring: int = 8,
    trunk_stations: int = 10,
    arm_stations: int = 5,
    pose_blend_scale: float = 0.0,
    seed: int = 0,
) -> BodyModel:
    """Four-joint tube humanoid (~170 vertices at the defaults): trunk plus
    two arms.

    Joint 0 (root) sits mid-trunk, joint 1 at the chest, joints 2/3 at the
    shoulders. Raise nring / *_stations for a denser surface (synthetic scenes
    do, to keep pixel-to-vertex quantization below the recovery tolerances).
    pose_blend_scale > 0 adds a small random pose-blendshape basis, used by
    gradient tests to exercise that path; the default 0 keeps the geometry
    exactly piecewise rigid.
    """
    trunk_y, (root_station, chest_station) = _stations(
        0.15, 1.42, trunk_stations, (0.90, 1.25)
    )
    trunk_centers = np.stack([np.zeros_like(trunk_y), trunk_y, np.zeros_like(trunk_y)], axis=1)
    trunk_dirs = np.tile([0.0, 1.0, 0.0], (len(trunk_y), 1))
    arm_x = np.linspace(0.10, 0.55, arm_stations)
    left_centers = np.stack([arm_x, np.full_like(arm_x, 1.40), np.zeros_like(arm_x)], axis=1)
    left_dirs = np.tile([1.0, 0.0, 0.0], (len(arm_x), 1))
    right_centers = left_centers * np.array([-1.0, 1.0, 1.0])
    right_dirs = np.tile([-1.0, 0.0, 0.0], (len(arm_x), 1))

    trunk_v, trunk_n = _tube(trunk_centers, trunk_dirs, 0.11, nring)
    left_v, left_n = _tube(left_centers, left_dirs, 0.045, nring)
    right_v, right_n = _tube(right_centers, right_dirs, 0.045, nring)

    parts_list = [trunk_v, left_v, right_v]
    normals_list = [trunk_n, left_n, right_n]
    offsets = np.cumsum([0] + [len(p) for p in parts_list])
    verts = np.concatenate(parts_list)
    normals = np.concatenate(normals_list)

    faces = []
    faces += _tube_faces(len(trunk_y), nring, offsets[0])
    faces += _tube_faces(len(arm_x), nring, offsets[1])
    faces += _tube_faces(len(arm_x), nring, offsets[2])

    # Flat caps: apex vertices at the open tube ends.
    apexes = np.array(
        [
            [0.0, trunk_y[0], 0.0],
            [0.0, trunk_y[-1], 0.0],
            [arm_x[-1], 1.40, 0.0],
            [-arm_x[-1], 1.40, 0.0],
        ]
    )
    apex_normals = np.zeros((4, 3))
    apex_ids = np.arange(len(verts), len(verts) + 4)
    faces += _cap_faces(offsets[0], nring, apex_ids[0], flip=True)
    faces += _cap_faces(offsets[0] + (len(trunk_y) - 1) * nring, nring, apex_ids[1], flip=False)
    faces += _cap_faces(offsets[1] + (len(arm_x) - 1) * nring, nring, apex_ids[2], flip=False)
    faces += _cap_faces(offsets[2] + (len(arm_x) - 1) * nring, nring, apex_ids[3], flip=False)
    verts = np.concatenate([verts, apexes])
    normals = np.concatenate([normals, apex_normals])
    nvert = len(verts)

    # Joints and their regressor rings. Rings sit exactly on the joint centers.
    joints = np.array(
        [
            [0.0, 0.90, 0.0],
            [0.0, 1.25, 0.0],
            [arm_x[0], 1.40, 0.0],
            [-arm_x[0], 1.40, 0.0],
        ]
    )
    ring_starts = [
        offsets[0] + root_station * nring,   # trunk station at y = 0.90
        offsets[0] + chest_station * nring,  # trunk station at y = 1.25
        offsets[1],                          # first left-arm station
        offsets[2],                          # first right-arm station
    ]
    regressor = np.zeros((4, nvert))
    for j, start in enumerate(ring_starts):
        regressor[j, start : start + nring] = 1.0 / nring

    # Skinning: trunk ramps root -> chest over y in [0.90, 1.25]; arms ramp
    # chest -> shoulder over their first segment.
    weights = np.zeros((nvert, 4))
    for i, v in enumerate(verts):
        if offsets[1] <= i < offsets[2] or i == apex_ids[2]:
            arm_joint = 2
        elif offsets[2] <= i < offsets[3] or i == apex_ids[3]:
            arm_joint = 3
        else:
            arm_joint = None
        if arm_joint is None:
            t = np.clip((v[1] - 0.90) / 0.35, 0.0, 1.0)
            weights[i, 0] = 1.0 - t
            weights[i, 1] = t
        else:
            t = np.clip((abs(v[0]) - arm_x[0]) / (arm_x[1] - arm_x[0]), 0.0, 1.0)
            blend = 0.5 + 0.5 * t
            weights[i, arm_joint] = blend
            weights[i, 1] = 1.0 - blend

    # Shape basis: stature (vertical stretch about the trunk base) and girth
    # (radial inflation along each vertex's ring normal).
    shape_basis = np.zeros((nvert, 3, 2))
    shape_basis[:, 1, 0] = 0.12 * (verts[:, 1] - trunk_y[0])
    shape_basis[:, :, 1] = 0.04 * normals

    pose_basis = np.zeros((nvert, 3, 27))
    if pose_blend_scale > 0.0:
        rng = np.random.default_rng(seed)
        pose_basis = pose_blend_scale * rng.standard_normal((nvert, 3, 27))

    vertex_parts = np.argmax(weights, axis=1) + 1

    model = BodyModel(
        template_vertices=verts,
        shape_blend_basis=shape_basis,
        pose_blend_basis=pose_basis,
        joint_regressor=regressor,
        skinning_weights=weights,
        kinematic_tree=np.array([-1, 0, 1, 1], dtype=np.int64),
        faces=np.array(faces, dtype=np.int64),
        vertex_parts=vertex_parts.astype(np.int64),
    )
    validate_model(model)
    return model


#: part sets accepted as evidence that a toy-model joint is visible; the
#: shoulder joints sit inside the trunk tube, so chest pixels count for them
TOY_JOINT_PART_SETS = {0: {1}, 1: {2}, 2: {2, 3}, 3: {2, 4}}

#: chest joint doubles as the "neck" for body-tilt computations on the toy model
TOY_NECK_JOINT = 1
