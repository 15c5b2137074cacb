import numpy as np
import pytest

from stillpose.bodymodel import (
    ModelFormatError,
    ModelInvariantError,
    PoseDerivatives,
    PoseParams,
    ShapeParams,
    joints_zero_translation,
    load_model,
    pose_body,
    save_model,
)
from stillpose.rotation import axis_angle_to_matrix
from stillpose.toy import make_box_model, make_toy_model

from conftest import random_pose, random_shape


# -- loading ------------------------------------------------------------------


def test_load_box_fixture(tmp_path, box_model):
    path = tmp_path / "box.npz"
    save_model(box_model, path)
    loaded = load_model(path)
    assert loaded.vertex_count == 8
    assert loaded.joint_count == 2
    assert loaded.source_hash
    np.testing.assert_array_equal(loaded.kinematic_tree, box_model.kinematic_tree)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "nope.npz")


def test_load_malformed_arrays(tmp_path, box_model):
    path = tmp_path / "bad.npz"
    np.savez(path, template=box_model.template_vertices)  # everything else absent
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_load_bad_skinning_row(tmp_path, box_model):
    weights = box_model.skinning_weights.copy()
    weights[3] *= 0.9  # row sums to 0.9
    path = tmp_path / "badrow.npz"
    np.savez(
        path,
        template=box_model.template_vertices,
        shape_basis=box_model.shape_blend_basis,
        pose_basis=box_model.pose_blend_basis,
        joint_regressor=box_model.joint_regressor,
        skinning_weights=weights,
        parents=box_model.kinematic_tree,
    )
    with pytest.raises(ModelInvariantError, match="row 3"):
        load_model(path)


def test_load_is_deterministic(tmp_path, toy_model):
    path = tmp_path / "toy.npz"
    save_model(toy_model, path)
    a = load_model(path)
    b = load_model(path)
    np.testing.assert_array_equal(a.template_vertices, b.template_vertices)
    np.testing.assert_array_equal(a.skinning_weights, b.skinning_weights)


# -- posing ------------------------------------------------------------------


def test_identity_pose_reproduces_template(toy_model):
    posed = pose_body(toy_model, PoseParams.zeros(4), ShapeParams.zeros(2))
    assert np.abs(posed.vertices - toy_model.template_vertices).max() <= 1e-12
    rest_joints = toy_model.joint_regressor @ toy_model.template_vertices
    assert np.abs(posed.joints - rest_joints).max() <= 1e-12


def test_translation_shifts_rigidly(toy_model):
    t = np.array([1.0, 2.0, 3.0])
    posed = pose_body(toy_model, PoseParams(np.zeros((4, 3)), t), ShapeParams.zeros(2))
    assert np.abs(posed.vertices - toy_model.template_vertices - t).max() <= 1e-12


def test_global_rotation_matches_direct_oracle(toy_model):
    # oracle: rotate the template about the root joint with a plain matrix
    aa = np.zeros((4, 3))
    aa[0] = [0.0, 0.0, np.pi / 2]
    posed = pose_body(toy_model, PoseParams(aa), ShapeParams.zeros(2))
    rot = axis_angle_to_matrix(aa[0])
    root = (toy_model.joint_regressor @ toy_model.template_vertices)[0]
    expected = (toy_model.template_vertices - root) @ rot.T + root
    assert np.abs(posed.vertices - expected).max() <= 1e-9


def test_rotation_equivariance_about_root(toy_model, rng):
    base = random_pose(rng, 4, scale=0.2)
    shape = random_shape(rng, 2)
    extra = rng.standard_normal(3) * 0.7
    rot = axis_angle_to_matrix(extra)

    composed_aa = base.axis_angle.copy()
    r0 = axis_angle_to_matrix(base.axis_angle[0])
    composed = rot @ r0
    # recover axis-angle of the composed rotation via the matrix log
    angle = np.arccos(np.clip((np.trace(composed) - 1) / 2, -1, 1))
    axis = np.array([
        composed[2, 1] - composed[1, 2],
        composed[0, 2] - composed[2, 0],
        composed[1, 0] - composed[0, 1],
    ])
    axis = axis / max(np.linalg.norm(axis), 1e-12)
    composed_aa[0] = axis * angle

    a = pose_body(toy_model, PoseParams(composed_aa, base.translation), shape)
    b = pose_body(toy_model, PoseParams(base.axis_angle, base.translation), shape)
    root = b.joints[0]
    rotated = (b.vertices - root) @ rot.T + root
    assert np.abs(a.vertices - rotated).max() <= 1e-9


def test_shape_linearity_at_zero_pose(toy_model, rng):
    pose = PoseParams.zeros(4)
    base = pose_body(toy_model, pose, ShapeParams.zeros(2)).vertices
    b1 = ShapeParams(rng.standard_normal(2))
    b2 = ShapeParams(rng.standard_normal(2))
    both = ShapeParams(b1.beta + b2.beta)
    d1 = pose_body(toy_model, pose, b1).vertices - base
    d2 = pose_body(toy_model, pose, b2).vertices - base
    d12 = pose_body(toy_model, pose, both).vertices - base
    assert np.abs(d12 - (d1 + d2)).max() <= 1e-9


def test_determinism_bit_identical(toy_model, rng):
    pose = random_pose(rng, 4)
    shape = random_shape(rng, 2)
    a = pose_body(toy_model, pose, shape)
    b = pose_body(toy_model, pose, shape)
    assert (a.vertices == b.vertices).all()
    assert (a.joints == b.joints).all()


def test_dimension_mismatch_errors(toy_model):
    with pytest.raises(ValueError, match="joints"):
        pose_body(toy_model, PoseParams.zeros(5), ShapeParams.zeros(2))
    with pytest.raises(ValueError, match="coefficients"):
        pose_body(toy_model, PoseParams.zeros(4), ShapeParams.zeros(3))


# -- joints_zero_translation ---------------------------------------------------


def test_joints_zero_translation_ignores_translation(toy_model, rng):
    pose = random_pose(rng, 4)
    shape = random_shape(rng, 2)
    with_t = PoseParams(pose.axis_angle, np.array([5.0, 5.0, 5.0]))
    without = PoseParams(pose.axis_angle, np.zeros(3))
    a = joints_zero_translation(toy_model, with_t, shape)
    b = joints_zero_translation(toy_model, without, shape)
    np.testing.assert_array_equal(a, b)


def test_joints_zero_translation_rest(toy_model):
    joints = joints_zero_translation(toy_model, PoseParams.zeros(4), ShapeParams.zeros(2))
    expected = toy_model.joint_regressor @ toy_model.template_vertices
    assert np.abs(joints - expected).max() <= 1e-12


def test_joints_zero_translation_matches_pose_body(toy_model, rng):
    pose = random_pose(rng, 4)
    shape = random_shape(rng, 2)
    expected = pose_body(toy_model, pose, shape).joints - pose.translation
    got = joints_zero_translation(toy_model, pose, shape)
    assert np.abs(got - expected).max() <= 1e-12


# -- derivatives ---------------------------------------------------------------


def test_pose_derivatives_match_finite_differences(rng):
    model = make_toy_model(pose_blend_scale=0.01, seed=3)
    pose = random_pose(rng, 4, scale=0.25)
    shape = random_shape(rng, 2, scale=0.4)
    deriv = PoseDerivatives(model, pose, shape)
    vids = np.array([0, 13, 47, 90, 130, 163])
    _, dpos = deriv.vertices(vids)

    x0 = np.concatenate([pose.axis_angle.ravel(), shape.beta])

    def positions(x):
        p = PoseParams(x[:12].reshape(4, 3), pose.translation)
        s = ShapeParams(x[12:14])
        return pose_body(model, p, s).vertices[vids]

    h = 1e-6
    for k in range(14):
        e = np.zeros(14)
        e[k] = h
        fd = (positions(x0 + e) - positions(x0 - e)) / (2 * h)
        assert np.abs(fd - dpos[:, :, k]).max() < 1e-6


def test_box_model_is_valid(box_model):
    assert box_model.vertex_count == 8
    assert box_model.joint_count == 2
    assert box_model.faces.shape == (12, 3)
