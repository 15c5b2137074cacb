import json

import numpy as np
import pytest

from stillpose.colmap import import_colmap, quaternion_to_rotation
from stillpose.rotation import axis_angle_to_matrix
from stillpose.scene import (
    BehindCameraError,
    Camera,
    DenseCorrespondence,
    FlowField,
    InstanceMask,
    SequenceLoadError,
    bilinear_sample,
    load_sequence,
    read_cloud,
    read_dense_correspondence,
    read_depth,
    read_flow,
    read_masks,
    write_dense_correspondence,
    write_depth,
    write_flow,
    write_masks,
)


# -- projection ----------------------------------------------------------------


def test_project_optical_axis(identity_camera):
    np.testing.assert_allclose(identity_camera.project(np.array([0, 0, 1.0])), [0, 0])


def test_project_with_intrinsics():
    cam = Camera(np.eye(3), np.zeros(3), 100.0, 100.0, 320.0, 240.0, 640, 480)
    np.testing.assert_allclose(cam.project(np.array([1.0, 0.0, 2.0])), [370.0, 240.0])


def test_project_behind_camera_raises(identity_camera):
    with pytest.raises(BehindCameraError):
        identity_camera.project(np.array([0.0, 0.0, -1.0]))


def test_depth_of_identity(identity_camera):
    assert identity_camera.depth_of(np.array([0.0, 0.0, 3.0])) == 3.0


def test_depth_of_translated():
    cam = Camera(np.eye(3), np.array([0.0, 0.0, -1.0]), 1, 1, 0, 0, 10, 10)
    assert cam.depth_of(np.array([0.0, 0.0, 3.0])) == 2.0


def test_depth_of_rotated_matches_matrix_oracle(rng):
    # oracle: a full 4x4 homogeneous transform applied by hand
    aa = rng.standard_normal(3)
    rot = axis_angle_to_matrix(aa)
    t = rng.standard_normal(3)
    cam = Camera(rot, t, 50, 50, 10, 10, 100, 100)
    mat = np.eye(4)
    mat[:3, :3] = rot
    mat[:3, 3] = t
    for _ in range(20):
        p = rng.standard_normal(3) * 2
        expected = (mat @ np.append(p, 1.0))[2]
        assert abs(cam.depth_of(p) - expected) < 1e-12


def test_project_backproject_roundtrip(rng):
    aa = rng.standard_normal(3) * 0.5
    cam = Camera(axis_angle_to_matrix(aa), rng.standard_normal(3), 80.0, 90.0,
                 47.0, 53.0, 96, 108)
    for _ in range(50):
        pixel = rng.uniform(0, 95, 2)
        depth = rng.uniform(0.1, 10.0)
        world = cam.backproject(pixel, depth)
        back = cam.project(world)
        assert np.abs(back - pixel).max() <= 1e-6


def test_camera_invariants():
    with pytest.raises(ValueError, match="orthonormal"):
        Camera(np.eye(3) * 1.01, np.zeros(3), 1, 1, 0, 0, 4, 4)
    with pytest.raises(ValueError, match="focal"):
        Camera(np.eye(3), np.zeros(3), -1.0, 1.0, 0, 0, 4, 4)
    flip = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError, match="determinant"):
        Camera(flip, np.zeros(3), 1, 1, 0, 0, 4, 4)


def test_bilinear_sample_interpolates():
    grid = np.array([[0.0, 1.0], [2.0, 3.0]])
    assert bilinear_sample(grid, np.array([[0.5, 0.5]]))[0] == pytest.approx(1.5)
    assert bilinear_sample(grid, np.array([[1.0, 0.0]]))[0] == pytest.approx(1.0)
    # clamp-to-edge beyond bounds
    assert bilinear_sample(grid, np.array([[5.0, 5.0]]))[0] == pytest.approx(3.0)


# -- masks ----------------------------------------------------------------------


def test_mask_roundtrip_array():
    grid = np.zeros((6, 8), dtype=bool)
    grid[2:4, 3:6] = True
    mask = InstanceMask.from_array(grid, frame_index=0, instance_id=7)
    assert mask.pixel_count == 6
    np.testing.assert_array_equal(mask.to_array(), grid)
    pix = mask.pixels()
    assert set(map(tuple, pix)) == {(3, 2), (4, 2), (5, 2), (3, 3), (4, 3), (5, 3)}


def test_mask_bounds_invariant():
    with pytest.raises(ValueError, match="bounds"):
        InstanceMask(0, 0, np.array([[47, 3]]), width=8, height=6)


def test_mask_file_roundtrip(tmp_path):
    grid = np.zeros((5, 5), dtype=bool)
    grid[1, 1:4] = True
    m1 = InstanceMask.from_array(grid, 3, 1)
    m2 = InstanceMask.from_array(~grid, 3, 0)
    path = tmp_path / "0003.rle"
    write_masks(path, 3, [m1, m2], 5, 5)
    loaded = read_masks(path)
    assert [m.instance_id for m in loaded] == [0, 1]
    np.testing.assert_array_equal(loaded[1].to_array(), grid)


# -- dense correspondences --------------------------------------------------------


def test_dp_roundtrip_and_lookup(tmp_path):
    dp = DenseCorrespondence(
        frame_index=2,
        pixels=np.array([[1, 2], [3, 4]]),
        parts=np.array([1, 3]),
        vertices=np.array([10, 20]),
        width=8,
        height=8,
    )
    path = tmp_path / "0002.bin"
    write_dense_correspondence(path, dp)
    loaded = read_dense_correspondence(path)
    assert loaded.row_at(3, 4) == 1
    assert loaded.vertices[loaded.row_at(1, 2)] == 10
    assert loaded.row_at(0, 0) == -1
    rows = loaded.rows_at(np.array([[1, 2], [7, 7], [-1, 0]]))
    np.testing.assert_array_equal(rows, [0, -1, -1])


# -- flow --------------------------------------------------------------------------


def test_flow_roundtrip_and_sampling(tmp_path):
    data = np.zeros((4, 6, 2), dtype=np.float32)
    data[:, :, 0] = 3.0
    flow = FlowField(0, 1, data)
    path = tmp_path / "0000_fw.bin"
    write_flow(path, flow)
    loaded = read_flow(path)
    assert loaded.source_frame == 0 and loaded.target_frame == 1
    np.testing.assert_allclose(loaded.sample(np.array([[2.5, 1.5]])), [[3.0, 0.0]])


# -- depth --------------------------------------------------------------------------


def test_depth_roundtrip(tmp_path):
    depth = np.full((4, 4), np.nan)
    depth[1, 2] = 2.5
    path = tmp_path / "0000.bin"
    write_depth(path, 0, depth)
    loaded = read_depth(path)
    assert np.isnan(loaded[0, 0])
    assert loaded[1, 2] == pytest.approx(2.5)


# -- sequence loading ----------------------------------------------------------------


def test_load_sequence_fixture(clean_scene_dir, clean_sequence):
    assert clean_sequence.n_frames == 12
    assert len(clean_sequence.cameras) == 12
    assert len(clean_sequence.cloud) > 0
    assert clean_sequence.has_image(0)
    img = clean_sequence.image(0)
    assert img.shape[2] == 3 and 0 <= img.min() and img.max() <= 1


def test_load_sequence_missing_flow_names_frame(clean_scene_dir, tmp_path):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(clean_scene_dir, broken)
    (broken / "flow" / "0003_fw.bin").unlink()
    with pytest.raises(SequenceLoadError, match="frame 3"):
        load_sequence(broken)


def test_load_sequence_idempotent(clean_scene_dir):
    a = load_sequence(clean_scene_dir)
    b = load_sequence(clean_scene_dir)
    assert a.n_frames == b.n_frames
    np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
    for fa, fb in zip(a.masks, b.masks):
        assert [m.instance_id for m in fa] == [m.instance_id for m in fb]
        for ma, mb in zip(fa, fb):
            np.testing.assert_array_equal(ma.runs, mb.runs)


# -- COLMAP import ---------------------------------------------------------------------


def _write_colmap_fixture(root):
    root.mkdir(parents=True, exist_ok=True)
    (root / "cameras.txt").write_text(
        "# Camera list\n"
        "1 PINHOLE 64 48 60 62 32 24\n"
    )
    # two images, quaternion = identity and a 90-degree yaw
    (root / "images.txt").write_text(
        "# Image list\n"
        "1 1 0 0 0 0.1 0.2 2.0 1 b.png\n"
        "10.5 20.5 1 30.0 40.0 2\n"
        "2 0.7071067811865476 0 0.7071067811865475 0 0 0 2.5 1 a.png\n"
        "11.0 21.0 1 31.0 41.0 -1\n"
    )
    (root / "points3D.txt").write_text(
        "# 3D point list\n"
        "1 0.5 0.6 0.7 255 0 0 0.1 1 0 2 0\n"
        "2 1.5 1.6 1.7 0 255 0 0.2 1 1\n"
    )


def test_import_colmap_fixture(tmp_path):
    _write_colmap_fixture(tmp_path / "colmap")
    out = import_colmap(tmp_path / "colmap", tmp_path / "seq")
    cams = json.loads((out / "cameras.json").read_text())["frames"]
    assert len(cams) == 2
    # frames ordered by image name: a.png first
    assert cams[0]["fx"] == 60.0
    cloud = read_cloud(out / "cloud.bin")
    assert len(cloud) == 2
    # point 1 observed in both images, point 2 only in image 1 (frame 1)
    frames0, pix0 = cloud.observations_of(0)
    frames1, pix1 = cloud.observations_of(1)
    assert sorted(frames0.tolist()) == [0, 1]
    assert frames1.tolist() == [1]
    # image id 1 is b.png -> frame index 1; its feature 0 is (10.5, 20.5)
    assert (pix0[frames0 == 1] == [10.5, 20.5]).all()
    np.testing.assert_allclose(cloud.colors[0], [1.0, 0.0, 0.0])


def test_quaternion_identity():
    np.testing.assert_allclose(quaternion_to_rotation(1, 0, 0, 0), np.eye(3))


def test_quaternion_yaw():
    rot = quaternion_to_rotation(np.cos(np.pi / 4), 0, np.sin(np.pi / 4), 0)
    expected = axis_angle_to_matrix(np.array([0.0, np.pi / 2, 0.0]))
    np.testing.assert_allclose(rot, expected, atol=1e-12)
