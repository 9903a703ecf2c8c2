import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointcalib.errors import BehindCamera, NonRotationMatrix, OutsideValidityRadius
from jointcalib.geometry import (
    CameraModel,
    Pose,
    angle_axis_from_rotation,
    distort,
    pose_apply,
    pose_compose,
    pose_inverse,
    project,
    rotation_from_angle_axis,
    rotation_from_rpy,
    rpy_from_rotation,
    undistort,
    unproject,
)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def random_rotvecs(n, seed=0, max_angle=np.pi - 1e-3):
    rng = np.random.default_rng(seed)
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    return axes * rng.uniform(1e-6, max_angle, size=(n, 1))


class TestRotation:
    def test_zero_is_identity(self):
        assert np.array_equal(rotation_from_angle_axis([0.0, 0.0, 0.0]), np.eye(3))

    def test_half_turn_about_x(self):
        np.testing.assert_allclose(rotation_from_angle_axis([np.pi, 0, 0]), np.diag([1.0, -1.0, -1.0]), atol=1e-15)

    def test_small_vector_round_trip(self):
        r = np.array([0.1, 0.2, 0.3])
        np.testing.assert_allclose(angle_axis_from_rotation(rotation_from_angle_axis(r)), r, atol=1e-10)

    def test_matches_independent_rodrigues(self):
        # frozen from OpenCV's cv2.Rodrigues([0.1, 0.2, 0.3])
        expected = np.array(
            [
                [0.9357548032779188, -0.28316496056507373, 0.21019170595074288],
                [0.3029327134026371, 0.9505806179060914, -0.06803131640494002],
                [-0.18054007669439776, 0.12733457491763028, 0.9752903089530457],
            ]
        )
        np.testing.assert_allclose(rotation_from_angle_axis([0.1, 0.2, 0.3]), expected, atol=1e-14)

    def test_identity_to_zero_vector(self):
        assert np.array_equal(angle_axis_from_rotation(np.eye(3)), np.zeros(3))

    def test_half_turn_inverse(self):
        np.testing.assert_allclose(angle_axis_from_rotation(np.diag([1.0, -1.0, -1.0])), [np.pi, 0, 0], atol=1e-12)

    def test_half_turn_branch_is_canonical(self):
        # axis sign is ambiguous at pi; first nonzero component comes out positive
        r = angle_axis_from_rotation(rotation_from_angle_axis(np.pi * np.array([0.0, -0.6, 0.8])))
        np.testing.assert_allclose(r, np.pi * np.array([0.0, 0.6, -0.8]), atol=1e-9)

    def test_round_trip_1000_samples(self):
        for r in random_rotvecs(1000, seed=7):
            back = angle_axis_from_rotation(rotation_from_angle_axis(r))
            assert np.abs(back - r).max() < 1e-10

    @pytest.mark.parametrize(
        "M",
        [np.diag([1.0, 1.0, -1.0]), 2 * np.eye(3), np.array([[1.0, 0.1, 0], [0, 1, 0], [0, 0, 1]]), np.full((3, 3), np.nan)],
        ids=["reflection", "scaled", "sheared", "nan"],
    )
    def test_rejects_non_rotations(self, M):
        with pytest.raises(NonRotationMatrix):
            angle_axis_from_rotation(M)

    @given(vec3)
    def test_always_orthonormal(self, r):
        R = rotation_from_angle_axis(r)
        assert abs(np.linalg.det(R) - 1) < 1e-12
        assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-12

    @given(st.floats(-179, 179), st.floats(-89, 89), st.floats(-179, 179))
    def test_rpy_round_trip(self, roll, pitch, yaw):
        np.testing.assert_allclose(rpy_from_rotation(rotation_from_rpy(roll, pitch, yaw)), [roll, pitch, yaw], atol=1e-8)

    def test_rpy_is_intrinsic_xyz(self):
        Rx = rotation_from_angle_axis([np.radians(10), 0, 0])
        Ry = rotation_from_angle_axis([0, np.radians(20), 0])
        Rz = rotation_from_angle_axis([0, 0, np.radians(30)])
        np.testing.assert_allclose(rotation_from_rpy(10, 20, 30), Rx @ Ry @ Rz, atol=1e-14)


class TestPose:
    def test_identity_apply(self):
        assert np.array_equal(pose_apply(Pose.identity(), np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])

    def test_translation_only(self):
        assert np.array_equal(pose_apply(Pose([0, 0, 0], [1, 0, 0]), np.zeros(3)), [1.0, 0.0, 0.0])

    def test_quarter_turn(self):
        np.testing.assert_allclose(pose_apply(Pose([0, 0, np.pi / 2], [0, 0, 0]), np.array([1.0, 0, 0])), [0, 1, 0], atol=1e-12)

    def test_compose_with_identity(self):
        T = Pose([0.1, -0.2, 0.3], [1.0, 2.0, 3.0])
        C = pose_compose(Pose.identity(), T)
        np.testing.assert_allclose(C.as_vector(), T.as_vector(), atol=1e-15)

    def test_inverse_identity(self):
        np.testing.assert_allclose(pose_inverse(Pose.identity()).as_vector(), np.zeros(6), atol=0)

    @given(vec3, vec3)
    def test_compose_inverse_is_identity(self, r, t):
        T = Pose(r, t)
        I = pose_compose(T, pose_inverse(T))
        np.testing.assert_allclose(I.as_matrix4(), np.eye(4), atol=1e-10)

    def test_json_round_trip(self):
        T = Pose([0.1, 0.2, -0.3], [4.0, 5.0, 6.0])
        assert np.array_equal(Pose.from_dict(T.to_dict()).as_vector(), T.as_vector())


class TestDistortion:
    def test_zero_coefficients_identity(self):
        m = CameraModel(1, 1, 0, 0)
        np.testing.assert_array_equal(distort(m, np.array([0.1, 0.2])), [0.1, 0.2])

    @given(st.tuples(*[st.floats(-1, 1)] * 4))
    def test_origin_fixed(self, dist):
        m = CameraModel(1, 1, 0, 0, dist=dist)
        assert np.array_equal(distort(m, np.zeros(2)), np.zeros(2))

    def test_radial_polynomial(self):
        # x (1 + k1 r^2) with r^2 = 0.01
        m = CameraModel(1, 1, 0, 0, dist=(-0.1, 0, 0, 0))
        np.testing.assert_allclose(distort(m, np.array([0.1, 0.0])), [0.0999, 0.0], atol=1e-15)

    def test_undistort_zero_coefficients(self):
        m = CameraModel(1, 1, 0, 0)
        np.testing.assert_array_equal(undistort(m, np.array([0.3, -0.4])), [0.3, -0.4])

    def test_undistort_origin(self):
        m = CameraModel(1, 1, 0, 0, dist=(-0.2, 0.05, 0.001, 0.002))
        np.testing.assert_array_equal(undistort(m, np.zeros(2)), np.zeros(2))

    def test_round_trip_seeded(self):
        m = CameraModel(1, 1, 0, 0, dist=(-0.2, 0.05, 0.0, 0.0))
        n = np.random.default_rng(3).uniform(-0.6, 0.6, size=(500, 2))
        assert np.abs(undistort(m, distort(m, n)) - n).max() < 1e-8

    @settings(max_examples=200)
    @given(
        st.tuples(st.floats(-0.3, 0.1), st.floats(-0.05, 0.05), st.floats(-0.002, 0.002), st.floats(-0.002, 0.002)),
        st.floats(-0.7, 0.7),
        st.floats(-0.7, 0.7),
    )
    def test_round_trip_property(self, dist, x, y):
        m = CameraModel(1, 1, 0, 0, dist=dist)
        n = np.array([x, y])
        assert np.abs(undistort(m, distort(m, n)) - n).max() < 1e-8

    def test_outside_validity_radius(self):
        m = CameraModel(1, 1, 0, 0, dist=(-0.1, 0, 0, 0))
        with pytest.raises(OutsideValidityRadius):
            distort(m, np.array([1.2, 1.2]))


class TestProject:
    def test_optical_axis(self, cam1000):
        np.testing.assert_allclose(project(cam1000, Pose.identity(), np.array([0.0, 0.0, 1.0])), [640, 360])

    def test_offset_point(self, cam1000):
        np.testing.assert_allclose(project(cam1000, Pose.identity(), np.array([0.1, 0.0, 1.0])), [740, 360])

    def test_with_radial_distortion(self, cam1000):
        m = cam1000.with_params(dist=(-0.1, 0, 0, 0))
        np.testing.assert_allclose(project(m, Pose.identity(), np.array([0.1, 0.0, 1.0])), [739.9, 360], atol=1e-9)

    def test_matches_independent_projection(self):
        # frozen from OpenCV's cv2.projectPoints with the same K, (k1, k2, p1, p2) and pose
        m = CameraModel(1660.0, 1655.0, 962.0, 538.0, dist=(-0.12, 0.05, 0.0008, -0.0005))
        T = Pose([0.1, -0.2, 0.3], [0.2, -0.1, 3.0])
        P = np.array([[0.3, 0.2, 0.5], [-0.4, 0.1, -0.2], [0.0, 0.0, 0.0]])
        expected = np.array(
            [
                [1115.440104470306, 589.6765390069821],
                [859.5185102929386, 481.76949642624953],
                [1072.5751685596708, 482.8840015329218],
            ]
        )
        np.testing.assert_allclose(project(m, T, P), expected, atol=1e-9)

    def test_behind_camera(self, cam1000):
        with pytest.raises(BehindCamera):
            project(cam1000, Pose.identity(), np.array([0.0, 0.0, -1.0]))

    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0.5, 20), st.floats(0.01, 100))
    def test_scale_invariance(self, x, y, z, lam):
        m = CameraModel(1000, 990, 640, 360, dist=(-0.1, 0.02, 0.001, -0.001))
        p = np.array([x, y, z])
        np.testing.assert_allclose(project(m, Pose.identity(), lam * p), project(m, Pose.identity(), p), atol=1e-8)

    def test_unproject_inverts_project(self):
        m = CameraModel(1000, 990, 640, 360, dist=(-0.1, 0.02, 0.001, -0.001))
        n = np.random.default_rng(0).uniform(-0.5, 0.5, size=(50, 2))
        uv = project(m, Pose.identity(), np.column_stack([n, np.ones(50)]))
        np.testing.assert_allclose(unproject(m, uv), n, atol=1e-9)

    def test_camera_json_round_trip(self):
        m = CameraModel(1000, 990, 640, 360, dist=(-0.1, 0.02, 0.001, -0.001), image_size=(1280, 720))
        assert CameraModel.from_dict(m.to_dict()) == m
