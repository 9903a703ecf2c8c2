import numpy as np
import pytest

from jointcalib.board import BoardSpec, circle_centers, corner_points
from jointcalib.errors import BoardNotVisible, SceneError
from jointcalib.geometry import Pose, project
from jointcalib.simulate import (
    EULER_CONVENTION,
    LidarSpec,
    SceneSpec,
    check_scene,
    default_scene,
    scene_truth,
    simulate_corners,
    simulate_frame,
    simulate_lidar,
)


def exact_corners(scene, frame=0):
    return [project(scene.camera_truth, scene.board_pose_camera(i, frame), corner_points(s)) for i, (s, _) in enumerate(scene.boards)]


def test_zero_noise_corners_are_exact(clean_scene):
    obs = simulate_corners(clean_scene)
    for o, e in zip(obs, exact_corners(clean_scene)):
        assert np.array_equal(o["pixels"], e)
        assert o["dropped"] == []


def test_same_seed_bit_identical():
    sc = default_scene(corner_noise=0.3, range_noise=0.01, seed=5)
    a, b = simulate_frame(sc), simulate_frame(sc)
    assert np.array_equal(a.points, b.points)
    assert all(np.array_equal(x["pixels"], y["pixels"]) for x, y in zip(a.corner_obs, b.corner_obs))


def test_seed_changes_noise_not_truth():
    a = simulate_frame(default_scene(corner_noise=0.3, range_noise=0.01, seed=1))
    b = simulate_frame(default_scene(corner_noise=0.3, range_noise=0.01, seed=2))
    assert not np.array_equal(a.points, b.points)
    assert a.truth == b.truth


def test_corner_noise_rms_matches_sigma():
    sigma = 0.2
    errs = []
    for seed in range(40):
        sc = default_scene(corner_noise=sigma, seed=seed)
        for o, e in zip(simulate_corners(sc), exact_corners(sc)):
            errs.append(o["pixels"] - e)
    errs = np.vstack(errs)
    assert len(errs) >= 10_000
    rms = np.sqrt(np.mean(np.sum(errs**2, axis=1)))
    assert rms == pytest.approx(sigma * np.sqrt(2), rel=0.05)


def test_board_outside_every_beam_gets_no_points(clean_scene):
    # straight above the sensor, beyond the +-16 deg elevation fan
    above = Pose.from_matrix(np.eye(3), [0.0, 0.0, 10.0])
    sc = SceneSpec(clean_scene.camera_truth, clean_scene.T_lidar_camera_truth, [(BoardSpec(), above)])
    pts, _, labels, _ = simulate_lidar(sc)
    assert len(pts) == 0 and len(labels) == 0


def test_noiseless_board_points_are_planar(clean_scene, clean_frame):
    for i, (spec, pose) in enumerate(clean_scene.boards):
        p = clean_frame.points[clean_frame.labels == i]
        assert len(p) > 300
        n = pose.R[:, 2]
        assert np.abs((p - pose.t) @ n).max() < 1e-12


def test_noiseless_points_avoid_holes(clean_scene, clean_frame):
    for i, (spec, pose) in enumerate(clean_scene.boards):
        q = pose.inverse().apply(clean_frame.points[clean_frame.labels == i])
        for h in spec.hole_centers:
            assert np.hypot(q[:, 0] - h[0], q[:, 1] - h[1]).min() > spec.hole_radius


def test_noisy_points_keep_clear_of_holes():
    sr = 0.008
    sc = default_scene(range_noise=sr, seed=3)
    fr = simulate_frame(sc)
    for i, (spec, pose) in enumerate(sc.boards):
        q = pose.inverse().apply(fr.points[fr.labels == i])
        for h in spec.hole_centers:
            assert np.hypot(q[:, 0] - h[0], q[:, 1] - h[1]).min() > spec.hole_radius - 2 * sr


def test_truth_document(clean_scene):
    t = scene_truth(clean_scene)
    assert t["convention"] == EULER_CONVENTION
    b0 = t["frames"][0]["boards"][0]
    spec, pose = clean_scene.boards[0]
    np.testing.assert_allclose(b0["circle_centers_lidar"], pose.apply(circle_centers(spec)))


def test_scene_json_round_trip():
    sc = default_scene(corner_noise=0.2, range_noise=0.01, seed=9, frames=2)
    back = SceneSpec.from_dict(sc.to_dict())
    assert back.to_dict() == sc.to_dict()
    assert np.array_equal(simulate_frame(back, 1).points, simulate_frame(sc, 1).points)


def test_reposed_frames_share_truth_across_seeds():
    a, b = default_scene(frames=3, seed=0), default_scene(frames=3, seed=7)
    assert scene_truth(a) == scene_truth(b)
    assert not np.allclose(a.layout(1)[0][1].t, a.layout(0)[0][1].t)


def test_every_corner_visible_in_default_scene(clean_frame):
    assert all(len(o["pixels"]) == 48 for o in clean_frame.corner_obs)


def test_board_out_of_image_raises(clean_scene):
    # board far off to the side of the camera
    pose = clean_scene.T_lidar_camera_truth.inverse().compose(Pose.from_matrix(np.diag([1.0, -1, -1]), [5.0, 0.0, 5.0]))
    sc = SceneSpec(clean_scene.camera_truth, clean_scene.T_lidar_camera_truth, [(BoardSpec(), pose)])
    with pytest.raises(BoardNotVisible):
        simulate_corners(sc)


@pytest.mark.parametrize(
    "kw,msg",
    [(dict(corner_noise=-1.0), "noise"), (dict(boards=[]), "no boards"), (dict(frames=0), "frames")],
)
def test_scene_validation(clean_scene, kw, msg):
    args = dict(
        camera_truth=clean_scene.camera_truth,
        T_lidar_camera_truth=clean_scene.T_lidar_camera_truth,
        boards=clean_scene.boards,
    )
    args.update(kw)
    with pytest.raises(SceneError, match=msg):
        SceneSpec(**args)


def test_check_scene_rejects_board_behind_camera(clean_scene):
    pose = clean_scene.T_lidar_camera_truth.inverse().compose(Pose.from_matrix(np.eye(3), [0.0, 0.0, -5.0]))
    sc = SceneSpec(clean_scene.camera_truth, clean_scene.T_lidar_camera_truth, [(BoardSpec(), pose)])
    with pytest.raises(SceneError, match="front of the camera"):
        check_scene(sc)


def test_ground_plane_adds_points(clean_scene):
    d = clean_scene.to_dict()
    d["ground_plane"] = {"normal": [0, 0, 1], "offset": 1.8}
    fr = simulate_frame(SceneSpec.from_dict(d))
    assert (fr.labels == -1).sum() > 1000


def test_lidar_spec_channels_shorthand():
    ls = LidarSpec.from_dict({"channels": 16, "elevation_range_deg": [-15, 15]})
    assert len(ls.elevations_deg) == 16 and ls.elevations_deg[0] == -15
