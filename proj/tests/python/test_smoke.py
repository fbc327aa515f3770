import json

import numpy as np
import pytest

import meshsplat as ms


@pytest.fixture(scope="module")
def mesh():
    return ms.humanoid(1)


def test_mesh_properties(mesh):
    assert mesh.triangle_count == 12 * 17
    assert mesh.vertices.shape == (mesh.vertex_count, 3)
    assert mesh.triangles.shape == (mesh.triangle_count, 3)
    assert "pelvis" in mesh.joint_names


def test_init_splats_one_per_triangle(mesh):
    s = ms.init_splats(mesh)
    assert s["mu"].shape == (mesh.triangle_count, 3)
    np.testing.assert_array_equal(s["mu"], 0.0)
    np.testing.assert_array_equal(s["rotation"][:, 0], 1.0)
    np.testing.assert_array_equal(s["polygon_id"], np.arange(mesh.triangle_count))
    np.testing.assert_array_equal(s["opacity"], 0.5)


def test_splat_file_round_trip(mesh, tmp_path):
    s = ms.init_splats(mesh, per_polygon=2, seed=3)
    ms.save_splats(tmp_path / "a.splats", s, mesh.triangle_count)
    back = ms.load_splats(tmp_path / "a.splats")
    for key in s:
        np.testing.assert_allclose(back[key], s[key], atol=1e-6)


def test_neutral_frames_are_identity(mesh):
    f = ms.polygon_frames(mesh, ms.neutral_pose(mesh))
    np.testing.assert_allclose(f["k"], 1.0, atol=1e-12)
    np.testing.assert_allclose(np.abs(f["rotation"][:, 0]), 1.0, atol=1e-12)


def test_render_shape_and_range(mesh):
    cam = ms.init_camera(32, 24)
    img = ms.render(mesh, ms.init_splats(mesh), ms.facing_pose(mesh), cam, background=(1, 1, 1))
    assert img.shape == (24, 32, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert (img < 1.0).any()


def test_render_is_deterministic(mesh):
    cam = ms.init_camera(32, 32)
    s = ms.init_splats(mesh)
    a = ms.render(mesh, s, ms.facing_pose(mesh), cam)
    b = ms.render(mesh, s, ms.facing_pose(mesh), cam)
    np.testing.assert_array_equal(a, b)


def test_metrics():
    a = np.random.default_rng(0).random((16, 16, 3))
    assert ms.psnr(a, a) == 100.0
    assert ms.ssim(a, a) == pytest.approx(1.0)


def test_relative_deltas_wrap():
    d = ms.relative_deltas([3.0, 0.0, 0.0], [-3.0, 0.0, 0.0])
    assert d[0] == pytest.approx(2 * np.pi - 6.0)


def test_fit_recovers_pose(mesh):
    cam = ms.init_camera(128, 128)
    truth = ms.facing_pose(mesh, 3.0)
    shoulder = mesh.joint_names.index("left_shoulder")
    truth["joint_rotations"][shoulder] = [0.0, 0.0, 0.3]
    kp = ms.project_keypoints(mesh, truth, cam)
    pose, report = ms.fit_frame(mesh, kp, cam, ms.facing_pose(mesh, 3.0))
    assert report["loss"]["total"] < report["initial_loss"]
    assert np.allclose(pose["joint_rotations"][shoulder], [0.0, 0.0, 0.3], atol=0.05)


def test_preprocess_keypoints_round_trip(mesh):
    kp = ms.project_keypoints(mesh, ms.facing_pose(mesh), ms.init_camera(64, 64))
    kp["frames"] = kp["frames"] * 3
    seq, report = ms.preprocess_keypoints(kp)
    assert report["gaps"] == []
    assert seq["frames"] == kp["frames"]


def test_train_reduces_loss(mesh):
    cam = ms.init_camera(24, 24)
    pose = ms.facing_pose(mesh, 2.4)
    target = ms.render(mesh, ms.init_splats(mesh, opacity=0.9), pose, cam)
    splats, log, halted, _ = ms.train(mesh, ms.init_splats(mesh), [pose], [cam], [target], iterations=30,
                                      random_background=False)
    assert not halted
    assert log[-1]["loss"]["total"] < log[0]["loss"]["total"]
    assert splats["mu"].shape[0] <= mesh.triangle_count


def test_viewer_bundle_and_payload(mesh, tmp_path):
    manifest = ms.export_viewer(tmp_path / "b", mesh, ms.init_splats(mesh), {"idle": [ms.neutral_pose(mesh)]})
    assert manifest["format"] == "meshsplat-viewer-bundle"
    assert (tmp_path / "b" / "manifest.json").exists()
    frames = ms.decode_frames(ms.pose_frames_payload(mesh, ms.neutral_pose(mesh)))
    assert len(frames) == 1
    assert frames[0]["k"].shape == (mesh.triangle_count,)


def test_errors_raise(mesh):
    with pytest.raises(ms.MeshsplatError):
        ms.render(mesh, ms.init_splats(mesh), {"root_translation": [0, 0, 1, 2]}, ms.init_camera(8, 8))
