"""The five-term static-pose objective and its minimization over a track.

One (theta, beta, t) must explain all frames: a robust 3D term pulls model
vertices to cleaned cloud points, a robust 2D term pulls their projections to
the dense-correspondence pixels, and three priors (hinge exponential, pose
mixture, shape quadratic) regularize. All gradients are analytic; finite
differences are only ever used by tests to check them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bodymodel import BodyModel, PoseDerivatives, PoseParams, ShapeParams, pose_body
from .cleaning import CleanPointCloud
from .optim import minimize
from .scene import Camera, Sequence, safe_round_pixels
from .tracking import Track

#: (joint, axis-angle component, sign) whose exponential grows when the hinge
#: bends the unnatural way: left/right knee about +x, left/right elbow about y.
STANDARD_HINGES = ((4, 0, -1.0), (5, 0, -1.0), (18, 1, 1.0), (19, 1, -1.0))


class NoDataError(ValueError):
    """The assembled problem has no 3D and no 2D correspondences."""


# ---------------------------------------------------------------------------
# penalties and priors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GemanMcClure:
    """Bounded robust penalty rho(e) = sigma^2 |e|^2 / (|e|^2 + sigma^2)."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def value(self, residuals: np.ndarray) -> np.ndarray:
        r2 = np.sum(np.square(residuals), axis=-1)
        s2 = self.sigma**2
        return s2 * r2 / (r2 + s2)

    def value_grad(self, residuals: np.ndarray):
        r2 = np.sum(np.square(residuals), axis=-1)
        s2 = self.sigma**2
        denom = r2 + s2
        return s2 * r2 / denom, (2.0 * s2 * s2 / denom**2)[..., None] * residuals

    @property
    def saturation(self) -> float:
        return self.sigma**2


@dataclass
class GmmPrior:
    """Gaussian-mixture pose prior evaluated as min_j -log(g_j N(theta; mu_j, S_j))."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covs: np.ndarray  # (K, D, D)
    chol: np.ndarray = field(init=False)
    inv_covs: np.ndarray = field(init=False)
    log_normalizers: np.ndarray = field(init=False)  # -log g + 0.5(D log 2pi + log|S|)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.asarray(self.means, dtype=float)
        self.covs = np.asarray(self.covs, dtype=float)
        if self.weights.min() <= 0:
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-6:
            raise ValueError("mixture weights must sum to 1")
        self.chol = np.linalg.cholesky(self.covs)  # raises if not positive definite
        eye = np.eye(self.dim)
        self.inv_covs = np.stack(
            [np.linalg.solve(c, eye) for c in self.covs]
        )
        logdet = 2.0 * np.log(np.diagonal(self.chol, axis1=1, axis2=2)).sum(axis=1)
        self.log_normalizers = (
            -np.log(self.weights) + 0.5 * (self.dim * math.log(2.0 * math.pi) + logdet)
        )

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def single(cls, mean: np.ndarray, variance: float = 0.25) -> "GmmPrior":
        mean = np.asarray(mean, dtype=float).reshape(-1)
        cov = variance * np.eye(len(mean))
        return cls(np.ones(1), mean[None, :], cov[None, :, :])

    @classmethod
    def load(cls, path: str | Path) -> "GmmPrior":
        data = np.load(path)
        return cls(data["weights"], data["means"], data["covs"])

    def save(self, path: str | Path) -> None:
        np.savez(path, weights=self.weights, means=self.means, covs=self.covs)


@dataclass
class ShapePrior:
    """Quadratic shape prior beta^T diag(inv_variances) beta."""

    inverse_variances: np.ndarray  # (B,) diagonal of Sigma_beta^{-1}

    def __post_init__(self):
        self.inverse_variances = np.asarray(self.inverse_variances, dtype=float).reshape(-1)
        if (self.inverse_variances < 0).any():
            raise ValueError("inverse variances must be nonnegative")

    @classmethod
    def isotropic(cls, dim: int, inverse_variance: float = 1.0) -> "ShapePrior":
        return cls(np.full(dim, inverse_variance))


# ---------------------------------------------------------------------------
# correspondences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Correspondence3D:
    target_point: np.ndarray  # x_r, meters
    vertex_index: int
    frame_index: int
    weight: float = 1.0


@dataclass(frozen=True)
class Correspondence2D:
    pixel: np.ndarray
    vertex_index: int
    frame_index: int
    weight: float = 1.0


@dataclass
class Corr3DSet:
    """Packed 3D correspondences (columns of Correspondence3D)."""

    targets: np.ndarray  # (n, 3)
    vertex_indices: np.ndarray  # (n,)
    frame_indices: np.ndarray  # (n,)
    weights: np.ndarray  # (n,)

    @classmethod
    def from_list(cls, corrs: list[Correspondence3D]) -> "Corr3DSet":
        return cls(
            np.array([c.target_point for c in corrs], dtype=float).reshape(-1, 3),
            np.array([c.vertex_index for c in corrs], dtype=np.int64),
            np.array([c.frame_index for c in corrs], dtype=np.int64),
            np.array([c.weight for c in corrs], dtype=float),
        )

    def __len__(self):
        return len(self.weights)


@dataclass
class Corr2DSet:
    """Packed 2D correspondences (columns of Correspondence2D)."""

    pixels: np.ndarray  # (n, 2)
    vertex_indices: np.ndarray
    frame_indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_list(cls, corrs: list[Correspondence2D]) -> "Corr2DSet":
        return cls(
            np.array([c.pixel for c in corrs], dtype=float).reshape(-1, 2),
            np.array([c.vertex_index for c in corrs], dtype=np.int64),
            np.array([c.frame_index for c in corrs], dtype=np.int64),
            np.array([c.weight for c in corrs], dtype=float),
        )

    def __len__(self):
        return len(self.weights)


def _as_corr3(corrs) -> Corr3DSet:
    return corrs if isinstance(corrs, Corr3DSet) else Corr3DSet.from_list(list(corrs))


def _as_corr2(corrs) -> Corr2DSet:
    return corrs if isinstance(corrs, Corr2DSet) else Corr2DSet.from_list(list(corrs))


def compute_weights(
    vertex_indices_3d: np.ndarray,
    vertex_indices_2d: np.ndarray,
    n_frames: int,
    vertex_count: int,
):
    """Per-vertex data-term weights: association (or appearance) count of the
    vertex, normalized by the total count and by the track frame count.
    Vertices never referenced get weight 0 and so cannot influence the fit."""
    w3 = np.zeros(vertex_count)
    w2 = np.zeros(vertex_count)
    v3 = np.asarray(vertex_indices_3d, dtype=np.int64)
    v2 = np.asarray(vertex_indices_2d, dtype=np.int64)
    if len(v3):
        counts = np.bincount(v3, minlength=vertex_count).astype(float)
        w3 = counts / (counts.sum() * n_frames)
    if len(v2):
        counts = np.bincount(v2, minlength=vertex_count).astype(float)
        w2 = counts / (counts.sum() * n_frames)
    return w3, w2


# ---------------------------------------------------------------------------
# configuration / problem / result
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    lambda_3d: float = 1.0
    lambda_2d: float = 1.0
    lambda_epose: float = 1.0
    lambda_mpose: float = 1.0
    lambda_shape: float = 1.0
    sigma_3d: float = 0.1  # meters
    sigma_2d: float = 10.0  # pixels
    max_iterations: int = 150  # per stage
    tolerance: float = 1e-9  # relative decrease declaring convergence
    stages: tuple[str, ...] = ("global", "all")
    pixel_stride: int = 1  # subsample 2D correspondences at assembly time

    def __post_init__(self):
        for name in ("lambda_3d", "lambda_2d", "lambda_epose", "lambda_mpose", "lambda_shape"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        for stage in self.stages:
            if stage not in ("global", "all"):
                raise ValueError(f"unknown stage {stage!r}")


@dataclass
class FitProblem:
    model: BodyModel
    cameras: list[Camera]
    corr3d: Corr3DSet
    corr2d: Corr2DSet
    gmm_prior: GmmPrior | None = None
    shape_prior: ShapePrior | None = None
    hinges: tuple = STANDARD_HINGES
    n_frames: int = 0


@dataclass
class FitResult:
    pose: PoseParams
    shape: ShapeParams
    objective_value: float
    breakdown: dict
    n_iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# energy terms
# ---------------------------------------------------------------------------


def e_3d(pose, shape, corrs, penalty: GemanMcClure, model: BodyModel) -> float:
    """Robust 3D data term; 0 on empty input."""
    packed = _as_corr3(corrs)
    if not len(packed):
        return 0.0
    posed = pose_body(model, pose, shape)
    xs = posed.vertices[packed.vertex_indices]
    return float(np.sum(packed.weights * penalty.value(packed.targets - xs)))


def e_2d(pose, shape, corrs, penalty: GemanMcClure, cameras: list[Camera],
         model: BodyModel) -> float:
    """Robust reprojection term; vertices behind a camera contribute the
    saturation value sigma^2 so the objective stays finite."""
    packed = _as_corr2(corrs)
    if not len(packed):
        return 0.0
    posed = pose_body(model, pose, shape)
    xs = posed.vertices[packed.vertex_indices]
    total = 0.0
    for frame in np.unique(packed.frame_indices):
        sel = packed.frame_indices == frame
        cam = cameras[int(frame)]
        pix, valid = cam.project_many(xs[sel])
        w = packed.weights[sel]
        res = packed.pixels[sel] - pix
        vals = np.where(valid, penalty.value(np.nan_to_num(res)), penalty.saturation)
        total += float(np.sum(w * vals))
    return total


def e_epose(pose: PoseParams, hinges=STANDARD_HINGES) -> float:
    """Exponential penalty on unnaturally bent hinge joints."""
    if hinges is STANDARD_HINGES and pose.joint_count != 24:
        raise ValueError(
            f"standard hinge table needs the 24-joint layout, pose has {pose.joint_count}"
        )
    total = 0.0
    for joint, comp, sign in hinges:
        total += math.exp(sign * pose.axis_angle[joint, comp])
    return total


def e_mpose(pose: PoseParams, prior: GmmPrior) -> float:
    """Best mixture component's negative log density of the non-root pose."""
    theta = pose.axis_angle[1:].reshape(-1)
    if len(theta) != prior.dim:
        raise ValueError(f"prior dimension {prior.dim} != body-pose dimension {len(theta)}")
    return float(np.min(_mpose_component_values(theta, prior)))


def _mpose_component_values(theta: np.ndarray, prior: GmmPrior) -> np.ndarray:
    diffs = theta[None, :] - prior.means  # (K, D)
    vals = np.empty(prior.n_components)
    for j in range(prior.n_components):
        y = np.linalg.solve(prior.chol[j], diffs[j])
        vals[j] = prior.log_normalizers[j] + 0.5 * float(y @ y)
    return vals


def e_shape(shape: ShapeParams, prior: ShapePrior) -> float:
    beta = shape.beta
    if len(beta) != len(prior.inverse_variances):
        raise ValueError(
            f"shape dim {len(beta)} != prior dim {len(prior.inverse_variances)}"
        )
    return float(np.sum(prior.inverse_variances * beta * beta))


# ---------------------------------------------------------------------------
# packed parameter vector and analytic gradients
# ---------------------------------------------------------------------------


def pack_params(pose: PoseParams, shape: ShapeParams) -> np.ndarray:
    return np.concatenate([pose.axis_angle.reshape(-1), shape.beta, pose.translation])


def unpack_params(x: np.ndarray, njoints: int, nshape: int):
    ntheta = 3 * njoints
    pose = PoseParams(x[:ntheta].reshape(njoints, 3), x[ntheta + nshape :])
    shape = ShapeParams(x[ntheta : ntheta + nshape])
    return pose, shape


def _grad_e3d(packed: Corr3DSet, deriv: PoseDerivatives, penalty: GemanMcClure,
              nparam_total: int):
    grad = np.zeros(nparam_total)
    if not len(packed):
        return 0.0, grad
    uniq, inv = np.unique(packed.vertex_indices, return_inverse=True)
    pos, dpos = deriv.vertices(uniq)
    xs = pos[inv]
    dxs = dpos[inv]  # (n, 3, P) with P = ntheta + nshape
    res = packed.targets - xs
    vals, dres = penalty.value_grad(res)
    value = float(np.sum(packed.weights * vals))
    wd = packed.weights[:, None] * dres  # (n, 3)
    grad[: deriv.nparam] = -np.einsum("nc,ncp->p", wd, dxs)
    grad[deriv.nparam :] = -wd.sum(axis=0)
    return value, grad


def _grad_e2d(packed: Corr2DSet, deriv: PoseDerivatives, penalty: GemanMcClure,
              cameras: list[Camera], nparam_total: int):
    grad = np.zeros(nparam_total)
    if not len(packed):
        return 0.0, grad
    uniq, inv = np.unique(packed.vertex_indices, return_inverse=True)
    pos, dpos = deriv.vertices(uniq)
    xs = pos[inv]
    dxs = dpos[inv]
    value = 0.0
    for frame in np.unique(packed.frame_indices):
        sel = packed.frame_indices == frame
        cam = cameras[int(frame)]
        x = xs[sel]
        cam_pts = cam.to_camera(x)
        z = cam_pts[:, 2]
        valid = z > 1e-9
        w = packed.weights[sel]
        value += float(penalty.saturation * np.sum(w[~valid]))
        if not valid.any():
            continue
        xv = cam_pts[valid]
        zv = xv[:, 2]
        pix = np.stack(
            [cam.fx * xv[:, 0] / zv + cam.cx, cam.fy * xv[:, 1] / zv + cam.cy], axis=1
        )
        res = packed.pixels[sel][valid] - pix
        vals, dres = penalty.value_grad(res)
        wv = w[valid]
        value += float(np.sum(wv * vals))
        # dpix/dx_world = [[fx/z, 0, -fx X/z^2], [0, fy/z, -fy Y/z^2]] @ R
        dpix_cam = np.zeros((len(xv), 2, 3))
        dpix_cam[:, 0, 0] = cam.fx / zv
        dpix_cam[:, 0, 2] = -cam.fx * xv[:, 0] / zv**2
        dpix_cam[:, 1, 1] = cam.fy / zv
        dpix_cam[:, 1, 2] = -cam.fy * xv[:, 1] / zv**2
        dpix_world = dpix_cam @ cam.rotation  # (n, 2, 3)
        wd = wv[:, None] * dres  # (n, 2)
        chain = np.einsum("na,nab->nb", wd, dpix_world)  # (n, 3)
        grad[: deriv.nparam] -= np.einsum("nb,nbp->p", chain, dxs[sel][valid])
        grad[deriv.nparam :] -= chain.sum(axis=0)
    return value, grad


def _grad_epose(pose: PoseParams, hinges, nparam_total: int):
    grad = np.zeros(nparam_total)
    value = 0.0
    for joint, comp, sign in hinges:
        term = math.exp(sign * pose.axis_angle[joint, comp])
        value += term
        grad[3 * joint + comp] += sign * term
    return value, grad


def _grad_mpose(pose: PoseParams, prior: GmmPrior, nparam_total: int):
    theta = pose.axis_angle[1:].reshape(-1)
    vals = _mpose_component_values(theta, prior)
    j = int(np.argmin(vals))
    grad = np.zeros(nparam_total)
    grad[3 : 3 + prior.dim] = prior.inv_covs[j] @ (theta - prior.means[j])
    return float(vals[j]), grad


def _grad_shape(shape: ShapeParams, prior: ShapePrior, ntheta: int, nparam_total: int):
    grad = np.zeros(nparam_total)
    beta = shape.beta
    grad[ntheta : ntheta + len(beta)] = 2.0 * prior.inverse_variances * beta
    return float(np.sum(prior.inverse_variances * beta * beta)), grad


_TERMS = ("e_3d", "e_2d", "e_epose", "e_mpose", "e_shape")


def _lambdas(config: FitConfig) -> dict:
    return {
        "e_3d": config.lambda_3d,
        "e_2d": config.lambda_2d,
        "e_epose": config.lambda_epose,
        "e_mpose": config.lambda_mpose,
        "e_shape": config.lambda_shape,
    }


def term_values_and_gradients(
    pose: PoseParams, shape: ShapeParams, problem: FitProblem, config: FitConfig
) -> dict:
    """Every energy term's value and analytic gradient over the packed vector
    [theta, beta, t]. Terms with zero lambda are still evaluated when their
    inputs exist; impossible terms (e.g. no prior) are skipped."""
    lam = _lambdas(config)
    deriv = None
    if (lam["e_3d"] > 0 and len(problem.corr3d)) or (lam["e_2d"] > 0 and len(problem.corr2d)):
        deriv = PoseDerivatives(problem.model, pose, shape)
    ntheta = 3 * problem.model.joint_count
    nshape = problem.model.shape_dim
    nparam = ntheta + nshape + 3
    out = {}
    if deriv is not None and lam["e_3d"] > 0:
        out["e_3d"] = _grad_e3d(
            problem.corr3d, deriv, GemanMcClure(config.sigma_3d), nparam
        )
    if deriv is not None and lam["e_2d"] > 0:
        out["e_2d"] = _grad_e2d(
            problem.corr2d, deriv, GemanMcClure(config.sigma_2d), problem.cameras, nparam
        )
    if lam["e_epose"] > 0 and problem.hinges:
        out["e_epose"] = _grad_epose(pose, problem.hinges, nparam)
    if lam["e_mpose"] > 0 and problem.gmm_prior is not None:
        out["e_mpose"] = _grad_mpose(pose, problem.gmm_prior, nparam)
    if lam["e_shape"] > 0 and problem.shape_prior is not None:
        out["e_shape"] = _grad_shape(shape, problem.shape_prior, ntheta, nparam)
    return out


def objective(pose: PoseParams, shape: ShapeParams, problem: FitProblem,
              config: FitConfig):
    """Lambda-weighted total and per-term breakdown (weighted contributions)."""
    lam = _lambdas(config)
    breakdown = {name: 0.0 for name in _TERMS}
    if lam["e_3d"] > 0 and len(problem.corr3d):
        breakdown["e_3d"] = lam["e_3d"] * e_3d(
            pose, shape, problem.corr3d, GemanMcClure(config.sigma_3d), problem.model
        )
    if lam["e_2d"] > 0 and len(problem.corr2d):
        breakdown["e_2d"] = lam["e_2d"] * e_2d(
            pose, shape, problem.corr2d, GemanMcClure(config.sigma_2d),
            problem.cameras, problem.model,
        )
    if lam["e_epose"] > 0 and problem.hinges:
        breakdown["e_epose"] = lam["e_epose"] * e_epose(pose, problem.hinges)
    if lam["e_mpose"] > 0 and problem.gmm_prior is not None:
        breakdown["e_mpose"] = lam["e_mpose"] * e_mpose(pose, problem.gmm_prior)
    if lam["e_shape"] > 0 and problem.shape_prior is not None:
        breakdown["e_shape"] = lam["e_shape"] * e_shape(shape, problem.shape_prior)
    return float(sum(breakdown.values())), breakdown


def objective_with_grad(pose: PoseParams, shape: ShapeParams, problem: FitProblem,
                        config: FitConfig):
    lam = _lambdas(config)
    terms = term_values_and_gradients(pose, shape, problem, config)
    nparam = 3 * problem.model.joint_count + problem.model.shape_dim + 3
    total = 0.0
    grad = np.zeros(nparam)
    for name, (value, g) in terms.items():
        total += lam[name] * value
        grad += lam[name] * g
    return total, grad


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


def build_fit_problem(
    seq: Sequence,
    track: Track,
    clean_cloud: CleanPointCloud,
    model: BodyModel,
    config: FitConfig = FitConfig(),
    gmm_prior: GmmPrior | None = None,
    shape_prior: ShapePrior | None = None,
    hinges: tuple | None = None,
) -> FitProblem:
    """Gather 3D and 2D correspondences over the track and weight them.

    3D: a clean point joins a frame's set only when SfM observed it there (its
    surface is visible in that frame), re-associated through the projection
    and the pixel-to-vertex map. 2D: every dense-correspondence pixel inside
    the track's mask (subsampled by config.pixel_stride).
    """
    observed: dict[int, set] = {}
    if len(clean_cloud):
        for i, src in enumerate(clean_cloud.source_indices):
            frames, _ = seq.cloud.observations_of(int(src))
            observed[i] = set(int(f) for f in frames)

    t3_targets, t3_vidx, t3_frames = [], [], []
    t2_pixels, t2_vidx, t2_frames = [], [], []
    for frame, instance_id in track.nodes:
        camera = seq.cameras[frame]
        mask = seq.masks_by_id(frame).get(instance_id)
        dp = seq.correspondences[frame]
        if mask is None or mask.pixel_count == 0:
            continue
        if len(clean_cloud):
            pix, valid = camera.project_many(clean_cloud.points)
            inside = valid & camera.in_image(pix)
            in_frame = np.array([frame in observed[i] for i in range(len(clean_cloud))])
            inside &= in_frame
            if inside.any():
                ipix = safe_round_pixels(pix, inside)
                inside &= mask.contains(ipix)
                rows = dp.rows_at(ipix)
                sel = inside & (rows >= 0)
                for i in np.flatnonzero(sel):
                    t3_targets.append(clean_cloud.points[i])
                    t3_vidx.append(int(dp.vertices[rows[i]]))
                    t3_frames.append(frame)
        if len(dp.pixels):
            in_mask = mask.contains(dp.pixels)
            rows = np.flatnonzero(in_mask)[:: max(1, config.pixel_stride)]
            t2_pixels.extend(dp.pixels[rows].astype(float))
            t2_vidx.extend(dp.vertices[rows].tolist())
            t2_frames.extend([frame] * len(rows))

    bad = [v for v in set(t3_vidx) | set(t2_vidx) if v >= model.vertex_count]
    if bad:
        raise ValueError(f"correspondences reference vertices beyond the model: {bad[:5]}")

    n_frames = len(track.nodes)
    w3, w2 = compute_weights(t3_vidx, t2_vidx, n_frames, model.vertex_count)
    v3 = np.asarray(t3_vidx, dtype=np.int64)
    v2 = np.asarray(t2_vidx, dtype=np.int64)
    corr3 = Corr3DSet(
        np.asarray(t3_targets, dtype=float).reshape(-1, 3),
        v3,
        np.asarray(t3_frames, dtype=np.int64),
        w3[v3] if len(v3) else np.empty(0),
    )
    corr2 = Corr2DSet(
        np.asarray(t2_pixels, dtype=float).reshape(-1, 2),
        v2,
        np.asarray(t2_frames, dtype=np.int64),
        w2[v2] if len(v2) else np.empty(0),
    )
    if hinges is None:
        hinges = STANDARD_HINGES if model.joint_count == 24 else ()
    return FitProblem(
        model=model,
        cameras=seq.cameras,
        corr3d=corr3,
        corr2d=corr2,
        gmm_prior=gmm_prior,
        shape_prior=shape_prior,
        hinges=hinges,
        n_frames=n_frames,
    )


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _stage_mask(stage: str, njoints: int, nshape: int) -> np.ndarray:
    nparam = 3 * njoints + nshape + 3
    if stage == "all":
        return np.ones(nparam, dtype=bool)
    mask = np.zeros(nparam, dtype=bool)
    mask[0:3] = True  # global orientation
    mask[-3:] = True  # translation
    return mask


def fit(
    problem: FitProblem,
    config: FitConfig = FitConfig(),
    initial: tuple[PoseParams, ShapeParams] | None = None,
) -> FitResult:
    """Staged descent: global orientation + translation on the data terms
    first, then every parameter on the full objective. The objective never
    increases across accepted iterations."""
    if not len(problem.corr3d) and not len(problem.corr2d):
        raise NoDataError("fit requires at least one 3D or 2D correspondence")
    model = problem.model
    if initial is None:
        initial = (PoseParams.zeros(model.joint_count), ShapeParams.zeros(model.shape_dim))
    x = pack_params(*initial)
    njoints, nshape = model.joint_count, model.shape_dim
    total_iters = 0
    converged = False

    for stage in config.stages:
        stage_config = config
        if stage == "global":
            stage_config = replace(config, lambda_epose=0.0, lambda_mpose=0.0, lambda_shape=0.0)
        free = _stage_mask(stage, njoints, nshape)
        base = x.copy()

        def fun_grad(xf, base=base, free=free, cfg=stage_config):
            xx = base.copy()
            xx[free] = xf
            pose, shape = unpack_params(xx, njoints, nshape)
            value, grad = objective_with_grad(pose, shape, problem, cfg)
            return value, grad[free]

        def fun(xf, base=base, free=free, cfg=stage_config):
            xx = base.copy()
            xx[free] = xf
            pose, shape = unpack_params(xx, njoints, nshape)
            return objective(pose, shape, problem, cfg)[0]

        result = minimize(
            fun_grad,
            x[free],
            fun=fun,
            max_iter=config.max_iterations,
            tol=config.tolerance,
        )
        x[free] = result.x
        total_iters += result.n_iter
        converged = result.converged

    pose, shape = unpack_params(x, njoints, nshape)
    value, breakdown = objective(pose, shape, problem, config)
    return FitResult(
        pose=pose,
        shape=shape,
        objective_value=value,
        breakdown=breakdown,
        n_iterations=total_iters,
        converged=converged,
    )


def save_fit(path: str | Path, result: FitResult, config: FitConfig,
             provenance: dict | None = None) -> None:
    doc = {
        "pose_axis_angle": result.pose.axis_angle.tolist(),
        "translation": result.pose.translation.tolist(),
        "beta": result.shape.beta.tolist(),
        "objective_value": result.objective_value,
        "breakdown": result.breakdown,
        "n_iterations": result.n_iterations,
        "converged": result.converged,
        "lambdas": _lambdas(config),
        "sigma_3d": config.sigma_3d,
        "sigma_2d": config.sigma_2d,
        "provenance": provenance or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_fit(path: str | Path) -> FitResult:
    doc = json.loads(Path(path).read_text())
    return FitResult(
        pose=PoseParams(np.asarray(doc["pose_axis_angle"]), np.asarray(doc["translation"])),
        shape=ShapeParams(np.asarray(doc["beta"])),
        objective_value=doc["objective_value"],
        breakdown=doc["breakdown"],
        n_iterations=doc["n_iterations"],
        converged=doc["converged"],
    )
