import numpy as np
import pytest

from splatstream.cameras import (
    LOWPASS_PX2,
    Camera,
    look_at,
    project_covariance,
    project_points,
    projection_jacobian,
)
from splatstream.errors import DataError
from splatstream.gaussians import covariance_from_rotation_scale, quat_normalize

from oracles import fd_gradient, project_point_ref, random_rotation


def make_camera(w2c=None, fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100):
    if w2c is None:
        w2c = np.eye(4)
    return Camera(
        world_to_camera=w2c, fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height
    )


def random_camera(rng, **kw):
    rot = random_rotation(rng)
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = rng.normal(size=3)
    return make_camera(w2c=w2c, **kw)


class TestCameraValidation:
    def test_rejects_non_orthonormal_rotation(self):
        w2c = np.eye(4)
        w2c[0, 0] = 2.0
        with pytest.raises(DataError):
            make_camera(w2c=w2c)

    def test_rejects_bad_bottom_row(self):
        w2c = np.eye(4)
        w2c[3, 0] = 0.5
        with pytest.raises(DataError):
            make_camera(w2c=w2c)

    def test_rejects_nonpositive_focal(self):
        with pytest.raises(DataError):
            make_camera(fx=-1.0)

    def test_position_inverts_pose(self, rng):
        cam = random_camera(rng)
        np.testing.assert_allclose(cam.to_camera(cam.position), np.zeros(3), atol=1e-12)


class TestProjectPoints:
    def test_optical_axis(self):
        cam = make_camera()
        pix, depth = project_points(cam, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(pix, [50.0, 50.0])
        assert depth == pytest.approx(1.0)

    def test_linear_pinhole_offset(self):
        cam = make_camera()
        pix, _ = project_points(cam, np.array([0.1, 0.0, 1.0]))
        np.testing.assert_allclose(pix, [60.0, 50.0])

    def test_matches_reference_on_random_poses(self, rng):
        for _ in range(20):
            cam = random_camera(rng)
            p = rng.normal(size=3) + np.array([0, 0, 5.0])
            pix, depth = project_points(cam, p)
            ref_pix, ref_z = project_point_ref(
                cam.world_to_camera, cam.fx, cam.fy, cam.cx, cam.cy, p
            )
            if abs(ref_z) < 1e-6:
                continue
            np.testing.assert_allclose(pix, ref_pix, rtol=1e-12)
            assert depth == pytest.approx(ref_z)

    def test_batched_shape(self, rng):
        cam = random_camera(rng)
        pts = rng.normal(size=(7, 3))
        pix, depth = project_points(cam, pts)
        assert pix.shape == (7, 2)
        assert depth.shape == (7,)


class TestProjectionJacobian:
    def test_on_axis_unit_depth(self):
        cam = make_camera(fx=1.0, fy=1.0)
        jac = projection_jacobian(cam, np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(jac, [[1, 0, 0], [0, 1, 0]])

    def test_depth_doubling_halves_first_columns(self, rng):
        cam = make_camera()
        p = np.array([0.3, -0.2, 1.0])
        j1 = projection_jacobian(cam, p)
        j2 = projection_jacobian(cam, p * np.array([1, 1, 2.0]))
        np.testing.assert_allclose(j2[:, :2], 0.5 * j1[:, :2])

    def test_matches_finite_differences(self, rng):
        cam = make_camera()
        for _ in range(10):
            p_cam = rng.normal(size=3) * 0.5 + np.array([0, 0, 3.0])

            def proj(p, out):
                u = cam.fx * p[0] / p[2] + cam.cx
                v = cam.fy * p[1] / p[2] + cam.cy
                return (u, v)[out]

            jac = projection_jacobian(cam, p_cam)
            for out in range(2):
                num = fd_gradient(lambda p: proj(p, out), p_cam, step=1e-5)
                np.testing.assert_allclose(jac[out], num, rtol=1e-3, atol=1e-9)


class TestProjectCovariance:
    def test_identity_configuration(self):
        cam = make_camera(fx=1.0, fy=1.0)
        cov2d = project_covariance(cam, np.eye(3), np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(cov2d, np.eye(2) * (1.0 + LOWPASS_PX2), atol=1e-12)

    def test_symmetric_and_floored(self, rng):
        for _ in range(20):
            cam = random_camera(rng)
            cov3d = covariance_from_rotation_scale(
                quat_normalize(rng.normal(size=4)), rng.normal(scale=0.5, size=3)
            )
            p_cam = rng.normal(size=3) + np.array([0, 0, 4.0])
            cov2d = project_covariance(cam, cov3d, p_cam)
            np.testing.assert_allclose(cov2d, cov2d.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(cov2d) >= LOWPASS_PX2 - 1e-12)
            assert np.linalg.det(cov2d) > 0

    def test_matches_dense_oracle(self, rng):
        cam = random_camera(rng)
        cov3d = covariance_from_rotation_scale(
            quat_normalize(rng.normal(size=4)), rng.normal(scale=0.5, size=3)
        )
        p_cam = np.array([0.4, -0.3, 2.5])
        x, y, z = p_cam
        jac = np.array(
            [
                [cam.fx / z, 0, -cam.fx * x / z**2],
                [0, cam.fy / z, -cam.fy * y / z**2],
            ]
        )
        expected = jac @ cam.rotation @ cov3d @ cam.rotation.T @ jac.T
        expected += np.eye(2) * LOWPASS_PX2
        np.testing.assert_allclose(
            project_covariance(cam, cov3d, p_cam), expected, rtol=1e-12
        )

    def test_rigid_invariance(self, rng):
        # rotating the scene and composing the camera with the inverse
        # leaves all projected quantities unchanged
        cam = random_camera(rng)
        rot = random_rotation(rng)
        t = rng.normal(size=3)
        rigid = np.eye(4)
        rigid[:3, :3] = rot
        rigid[:3, 3] = t

        cam2 = Camera(
            world_to_camera=cam.world_to_camera @ np.linalg.inv(rigid),
            fx=cam.fx,
            fy=cam.fy,
            cx=cam.cx,
            cy=cam.cy,
            width=cam.width,
            height=cam.height,
        )
        p = rng.normal(size=3) + np.array([0, 0, 5.0])
        p2 = rot @ p + t
        cov3d = covariance_from_rotation_scale(
            quat_normalize(rng.normal(size=4)), rng.normal(scale=0.3, size=3)
        )
        cov3d2 = rot @ cov3d @ rot.T

        pix1, z1 = project_points(cam, p)
        pix2, z2 = project_points(cam2, p2)
        np.testing.assert_allclose(pix1, pix2, atol=1e-6)
        assert z1 == pytest.approx(z2, abs=1e-9)
        c1 = project_covariance(cam, cov3d, cam.to_camera(p))
        c2 = project_covariance(cam2, cov3d2, cam2.to_camera(p2))
        np.testing.assert_allclose(c1, c2, atol=1e-6)


class TestLookAt:
    def test_target_projects_to_principal_point(self, rng):
        eye = np.array([1.0, 2.0, 3.0])
        target = np.array([0.0, 0.5, -1.0])
        cam = look_at(eye, target, np.array([0, 1.0, 0]), 100, 100, 32, 32, 64, 64)
        pix, depth = project_points(cam, target)
        np.testing.assert_allclose(pix, [32.0, 32.0], atol=1e-9)
        assert depth == pytest.approx(np.linalg.norm(target - eye))

    def test_up_maps_to_image_up(self):
        # a point above the target should land above the principal point
        # (smaller v, since image y grows downward)
        eye = np.array([0.0, 0.0, -5.0])
        target = np.zeros(3)
        cam = look_at(eye, target, np.array([0, 1.0, 0]), 100, 100, 32, 32, 64, 64)
        pix, _ = project_points(cam, np.array([0.0, 0.5, 0.0]))
        assert pix[1] < 32.0

    def test_degenerate_up_raises(self):
        with pytest.raises(DataError):
            look_at(
                np.zeros(3), np.array([0, 0, 1.0]), np.array([0, 0, 1.0]),
                100, 100, 32, 32, 64, 64,
            )

    def test_pose_is_rigid(self, rng):
        cam = look_at(
            rng.normal(size=3), rng.normal(size=3), np.array([0, 1.0, 0]),
            80, 90, 32, 32, 64, 64,
        )
        rot = cam.rotation
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0)
