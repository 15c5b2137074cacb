"""Parametric articulated body model: shape/pose blendshapes, joint regression,
linear blend skinning along a kinematic tree, and exact parameter derivatives.

The model file is an .npz container of named arrays (see docs/formats.md).
A small procedurally built "toy" model ships for tests and synthetic scenes so
nothing here depends on the licensed full-body model file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rotation import axis_angle_jacobian, axis_angle_to_matrix, canonicalize_axis_angle

_TOL = 1e-6


class ModelFormatError(ValueError):
    """Model file exists but its arrays are missing, misshaped, or unreadable."""


class ModelInvariantError(ValueError):
    """Model arrays are well-formed but violate a model invariant."""


@dataclass(frozen=True)
class BodyModel:
    """Immutable articulated template. Safe to share across threads.

    Arrays: template_vertices (V,3) meters; shape_blend_basis (V,3,B);
    pose_blend_basis (V,3,9*(J-1)) driven by the (R_j - I) entries of non-root
    joints; joint_regressor (J,V) rows summing to 1; skinning_weights (V,J)
    rows summing to 1; kinematic_tree (J,) parent indices, root = -1 at 0.
    """

    template_vertices: np.ndarray
    shape_blend_basis: np.ndarray
    pose_blend_basis: np.ndarray
    joint_regressor: np.ndarray
    skinning_weights: np.ndarray
    kinematic_tree: np.ndarray
    faces: np.ndarray | None = None
    vertex_parts: np.ndarray | None = None
    source_hash: str = ""

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def joint_count(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def shape_dim(self) -> int:
        return self.shape_blend_basis.shape[2]


@dataclass
class PoseParams:
    """Per-joint axis-angle rotations (element 0 = global orientation) plus a
    world translation in meters."""

    axis_angle: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.axis_angle = np.asarray(self.axis_angle, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.axis_angle.ndim != 2 or self.axis_angle.shape[1] != 3:
            raise ValueError(f"axis_angle must be (J, 3), got {self.axis_angle.shape}")
        if self.translation.shape != (3,):
            raise ValueError(f"translation must be (3,), got {self.translation.shape}")
        if not (np.isfinite(self.axis_angle).all() and np.isfinite(self.translation).all()):
            raise ValueError("pose parameters must be finite")

    @classmethod
    def zeros(cls, joint_count: int) -> "PoseParams":
        return cls(np.zeros((joint_count, 3)))

    def canonicalized(self) -> "PoseParams":
        return PoseParams(canonicalize_axis_angle(self.axis_angle), self.translation.copy())

    @property
    def joint_count(self) -> int:
        return self.axis_angle.shape[0]


@dataclass
class ShapeParams:
    """Linear shape coefficients (unitless)."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if not np.isfinite(self.beta).all():
            raise ValueError("shape parameters must be finite")

    @classmethod
    def zeros(cls, dim: int = 10) -> "ShapeParams":
        return cls(np.zeros(dim))


@dataclass(frozen=True)
class PosedBody:
    """World-frame vertices (V,3) and joints (J,3) for one parameter set."""

    vertices: np.ndarray
    joints: np.ndarray


# ---------------------------------------------------------------------------
# model file IO
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = (
    "template",
    "shape_basis",
    "pose_basis",
    "joint_regressor",
    "skinning_weights",
    "parents",
)


def save_model(model: BodyModel, path: str | Path) -> None:
    arrays = {
        "template": model.template_vertices,
        "shape_basis": model.shape_blend_basis,
        "pose_basis": model.pose_blend_basis,
        "joint_regressor": model.joint_regressor,
        "skinning_weights": model.skinning_weights,
        "parents": model.kinematic_tree.astype(np.int64),
        "vertex_count": np.int64(model.vertex_count),
        "joint_count": np.int64(model.joint_count),
    }
    if model.faces is not None:
        arrays["faces"] = model.faces.astype(np.int64)
    if model.vertex_parts is not None:
        arrays["vertex_parts"] = model.vertex_parts.astype(np.int64)
    np.savez(path, **arrays)


def load_model(path: str | Path) -> BodyModel:
    """Load and validate a model file.

    Raises FileNotFoundError (missing file), ModelFormatError (bad arrays) or
    ModelInvariantError (well-formed arrays breaking an invariant), so callers
    can tell the three failure classes apart.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    try:
        data = np.load(path)
    except Exception as exc:  # zip/pickle-level corruption
        raise ModelFormatError(f"unreadable model container {path}: {exc}") from exc
    missing = [k for k in _REQUIRED_KEYS if k not in data]
    if missing:
        raise ModelFormatError(f"model file {path} missing arrays: {missing}")

    template = np.asarray(data["template"], dtype=float)
    shape_basis = np.asarray(data["shape_basis"], dtype=float)
    pose_basis = np.asarray(data["pose_basis"], dtype=float)
    regressor = np.asarray(data["joint_regressor"], dtype=float)
    weights = np.asarray(data["skinning_weights"], dtype=float)
    parents = np.asarray(data["parents"], dtype=np.int64)

    if template.ndim != 2 or template.shape[1] != 3:
        raise ModelFormatError(f"template must be (V, 3), got {template.shape}")
    nvert = template.shape[0]
    njoint = regressor.shape[0] if regressor.ndim == 2 else -1
    checks = {
        "shape_basis": (shape_basis.ndim == 3 and shape_basis.shape[:2] == (nvert, 3)),
        "pose_basis": (
            pose_basis.ndim == 3
            and pose_basis.shape[:2] == (nvert, 3)
            and pose_basis.shape[2] == 9 * (njoint - 1)
        ),
        "joint_regressor": (regressor.ndim == 2 and regressor.shape[1] == nvert),
        "skinning_weights": (weights.shape == (nvert, njoint)),
        "parents": (parents.shape == (njoint,)),
    }
    bad = [name for name, ok in checks.items() if not ok]
    if bad:
        raise ModelFormatError(f"model file {path} has misshaped arrays: {bad}")
    if "vertex_count" in data and int(data["vertex_count"]) != nvert:
        raise ModelFormatError(f"header vertex_count {int(data['vertex_count'])} != {nvert}")
    if "joint_count" in data and int(data["joint_count"]) != njoint:
        raise ModelFormatError(f"header joint_count {int(data['joint_count'])} != {njoint}")

    faces = np.asarray(data["faces"], dtype=np.int64) if "faces" in data else None
    parts = np.asarray(data["vertex_parts"], dtype=np.int64) if "vertex_parts" in data else None
    model = BodyModel(
        template_vertices=template,
        shape_blend_basis=shape_basis,
        pose_blend_basis=pose_basis,
        joint_regressor=regressor,
        skinning_weights=weights,
        kinematic_tree=parents,
        faces=faces,
        vertex_parts=parts,
        source_hash=digest,
    )
    validate_model(model)
    return model


def validate_model(model: BodyModel) -> None:
    """Check the BodyModel invariants; raise ModelInvariantError on the first failure."""
    weights = model.skinning_weights
    if weights.min() < -_TOL:
        raise ModelInvariantError("skinning weights must be nonnegative")
    row = weights.sum(axis=1)
    if np.abs(row - 1.0).max() > _TOL:
        worst = int(np.abs(row - 1.0).argmax())
        raise ModelInvariantError(
            f"skinning-weight row {worst} sums to {row[worst]:.6f}, expected 1"
        )
    reg_row = model.joint_regressor.sum(axis=1)
    if np.abs(reg_row - 1.0).max() > _TOL:
        worst = int(np.abs(reg_row - 1.0).argmax())
        raise ModelInvariantError(
            f"joint-regressor row {worst} sums to {reg_row[worst]:.6f}, expected 1"
        )
    parents = model.kinematic_tree
    if parents[0] != -1:
        raise ModelInvariantError("joint 0 must be the root (parent -1)")
    if (parents[1:] < 0).any() or (parents[1:] >= np.arange(1, len(parents))).any():
        raise ModelInvariantError(
            "kinematic tree must be acyclic with one root: parent index of joint j "
            "must lie in [0, j)"
        )
    if model.faces is not None and model.faces.size:
        if model.faces.min() < 0 or model.faces.max() >= model.vertex_count:
            raise ModelInvariantError("face indices out of vertex range")


# ---------------------------------------------------------------------------
# posing
# ---------------------------------------------------------------------------


def _check_dims(model: BodyModel, pose: PoseParams, shape: ShapeParams) -> None:
    if pose.joint_count != model.joint_count:
        raise ValueError(
            f"pose has {pose.joint_count} joints, model has {model.joint_count}"
        )
    if shape.beta.shape[0] != model.shape_dim:
        raise ValueError(
            f"shape has {shape.beta.shape[0]} coefficients, model expects {model.shape_dim}"
        )


def _rest_geometry(model: BodyModel, beta: np.ndarray, rotations: np.ndarray):
    """Shaped template, pose-corrected rest vertices, and rest joints."""
    v_shaped = model.template_vertices + model.shape_blend_basis @ beta
    j_rest = model.joint_regressor @ v_shaped
    pose_feat = (rotations[1:] - np.eye(3)).reshape(-1)
    v_posed = v_shaped + model.pose_blend_basis @ pose_feat
    return v_shaped, v_posed, j_rest


def _chain_transforms(rotations: np.ndarray, j_rest: np.ndarray, parents: np.ndarray):
    """World transform of each joint; G[j] maps joint-local rest frame to world."""
    njoint = len(parents)
    locals_ = np.tile(np.eye(4), (njoint, 1, 1))
    locals_[:, :3, :3] = rotations
    locals_[0, :3, 3] = j_rest[0]
    locals_[1:, :3, 3] = j_rest[1:] - j_rest[parents[1:]]
    world = np.empty_like(locals_)
    world[0] = locals_[0]
    for j in range(1, njoint):
        world[j] = world[parents[j]] @ locals_[j]
    return locals_, world


def _skinning_transforms(world: np.ndarray, j_rest: np.ndarray) -> np.ndarray:
    """A_j = G_j translated back by the rest joint, so A_j acts on rest-pose points."""
    skin = world.copy()
    skin[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], j_rest)
    return skin


def pose_body(model: BodyModel, pose: PoseParams, shape: ShapeParams) -> PosedBody:
    """Evaluate the model: blendshapes, joint regression, skinning, translation.

    Pure and deterministic; identical inputs give bit-identical outputs.
    """
    _check_dims(model, pose, shape)
    rotations = axis_angle_to_matrix(pose.axis_angle)
    _, v_posed, j_rest = _rest_geometry(model, shape.beta, rotations)
    _, world = _chain_transforms(rotations, j_rest, model.kinematic_tree)
    skin = _skinning_transforms(world, j_rest)

    per_vertex = np.einsum("vj,jab->vab", model.skinning_weights, skin)
    verts = (
        np.einsum("vab,vb->va", per_vertex[:, :3, :3], v_posed)
        + per_vertex[:, :3, 3]
        + pose.translation
    )
    joints = world[:, :3, 3] + pose.translation
    return PosedBody(vertices=verts, joints=joints)


def joints_zero_translation(
    model: BodyModel, pose: PoseParams, shape: ShapeParams
) -> np.ndarray:
    """Joints with the global translation forced to zero (J,3)."""
    zeroed = PoseParams(pose.axis_angle.copy(), np.zeros(3))
    return pose_body(model, zeroed, shape).joints


# ---------------------------------------------------------------------------
# derivatives
# ---------------------------------------------------------------------------


class PoseDerivatives:
    """Posed vertices/joints plus exact Jacobians w.r.t. theta (3J), beta (B).

    The translation derivative is the identity on every output point and is
    left to callers. Built once per objective evaluation; all arrays ordered
    [param, point, coord] or [point, coord, param] as documented per attribute.
    """

    def __init__(self, model: BodyModel, pose: PoseParams, shape: ShapeParams):
        _check_dims(model, pose, shape)
        njoint = model.joint_count
        nshape = model.shape_dim
        parents = model.kinematic_tree
        beta = shape.beta

        rotations = axis_angle_to_matrix(pose.axis_angle)
        drot = np.stack([axis_angle_jacobian(w) for w in pose.axis_angle])  # (J,3,3,3)
        v_shaped, v_posed, j_rest = _rest_geometry(model, beta, rotations)
        locals_, world = _chain_transforms(rotations, j_rest, parents)

        # Rest-joint sensitivity to shape: (B, J, 3).
        dj_rest = np.einsum("jv,vcb->bjc", model.joint_regressor, model.shape_blend_basis)

        ntheta = 3 * njoint
        nparam = ntheta + nshape
        dworld = np.zeros((nparam, njoint, 4, 4))

        # theta params: dG_j = dG_parent @ L_j, plus G_parent @ dL_j at j == m.
        for m in range(njoint):
            for c in range(3):
                p = 3 * m + c
                dlocal = np.zeros((4, 4))
                dlocal[:3, :3] = drot[m, c]
                if m == 0:
                    dworld[p, 0] = dlocal
                for j in range(1, njoint):
                    acc = dworld[p, parents[j]] @ locals_[j]
                    if j == m:
                        acc = acc + world[parents[j]] @ dlocal
                    dworld[p, j] = acc

        # beta params: local translations move with the rest joints.
        for b in range(nshape):
            p = ntheta + b
            dlocal0 = np.zeros((4, 4))
            dlocal0[:3, 3] = dj_rest[b, 0]
            dworld[p, 0] = dlocal0
            for j in range(1, njoint):
                dlocal = np.zeros((4, 4))
                dlocal[:3, 3] = dj_rest[b, j] - dj_rest[b, parents[j]]
                dworld[p, j] = dworld[p, parents[j]] @ locals_[j] + world[parents[j]] @ dlocal

        skin = _skinning_transforms(world, j_rest)
        dskin = dworld.copy()
        dskin[:, :, :3, 3] -= np.einsum("pjab,jb->pja", dworld[:, :, :3, :3], j_rest)
        for b in range(nshape):
            p = ntheta + b
            dskin[p, :, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], dj_rest[b])

        # Rest-vertex sensitivities. Pose blendshapes feel theta through R_m - I.
        dv_posed = np.zeros((nparam, model.vertex_count, 3))
        for m in range(1, njoint):
            block = model.pose_blend_basis[:, :, 9 * (m - 1) : 9 * m]
            for c in range(3):
                dv_posed[3 * m + c] = block @ drot[m, c].reshape(-1)
        for b in range(nshape):
            dv_posed[ntheta + b] = model.shape_blend_basis[:, :, b]

        self.model = model
        self.translation = pose.translation
        self.nparam = nparam
        self.ntheta = ntheta
        self._v_posed = v_posed
        self._dv_posed = dv_posed
        self._skin = skin
        self._dskin = dskin
        self.joints = world[:, :3, 3] + pose.translation
        self.djoints = dworld[:, :, :3, 3].transpose(1, 2, 0)  # (J, 3, P)

    def vertices(self, vertex_ids: np.ndarray):
        """Posed positions (n,3) and Jacobian (n,3,P) for the selected vertices."""
        ids = np.asarray(vertex_ids, dtype=int)
        w = self.model.skinning_weights[ids]  # (n, J)
        vp = self._v_posed[ids]  # (n, 3)
        dvp = self._dv_posed[:, ids, :]  # (P, n, 3)
        trans = np.einsum("nj,jab->nab", w, self._skin)  # (n, 4, 4)
        pos = np.einsum("nab,nb->na", trans[:, :3, :3], vp) + trans[:, :3, 3] + self.translation

        dtrans = np.einsum("nj,pjab->pnab", w, self._dskin)
        dpos = (
            np.einsum("pnab,nb->pna", dtrans[:, :, :3, :3], vp)
            + dtrans[:, :, :3, 3]
            + np.einsum("nab,pnb->pna", trans[:, :3, :3], dvp)
        )
        return pos, dpos.transpose(1, 2, 0)  # (n,3), (n,3,P)


def model_hash(model: BodyModel) -> str:
    """Digest of the loaded arrays (used when the model was built in memory)."""
    if model.source_hash:
        return model.source_hash
    h = hashlib.sha256()
    for arr in (
        model.template_vertices,
        model.shape_blend_basis,
        model.pose_blend_basis,
        model.joint_regressor,
        model.skinning_weights,
        model.kinematic_tree,
    ):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
