import math

import numpy as np
import pytest

from orbitpcqa.orbit_camera import (
    BadRadius,
    CameraPose,
    CaptureConfig,
    DegeneratePosition,
    OrbitId,
    TooFewFrames,
    capture_radius,
    orbit_positions,
    pose_at,
)


def orbit_residual(orbit, positions, radius):
    """Left-hand minus right-hand side of each orbit's defining equations."""
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    r2 = radius * radius
    if orbit is OrbitId.A:
        return np.abs(x * x + y * y - r2) + np.abs(z)
    if orbit is OrbitId.B:
        return np.abs(y * y + z * z - r2) + np.abs(x)
    return np.abs(x * x + y * y + z * z - r2) + np.abs(x + z)


class TestOrbitPositions:
    def test_orbit_a_quarter_turns(self):
        pos = orbit_positions(OrbitId.A, 2.0, 4)
        assert np.allclose(pos[0], [2, 0, 0], atol=1e-15)
        assert np.allclose(pos[1], [0, 2, 0], atol=1e-15)

    def test_orbit_c_constraints(self):
        pos = orbit_positions(OrbitId.C, 1.0, 16)
        assert np.abs(pos[:, 0] + pos[:, 2]).max() < 1e-12
        assert np.abs((pos ** 2).sum(axis=1) - 1.0).max() < 1e-12

    def test_default_schedule_has_210_frames(self):
        pos = orbit_positions(OrbitId.A, 1.0, 210)
        assert len(pos) == 210
        step = math.degrees(2 * math.pi / 210)
        assert step == pytest.approx(360 / 210)
        assert step == pytest.approx(1.7143, abs=5e-5)

    @pytest.mark.parametrize("orbit", list(OrbitId))
    def test_residuals_all_frames(self, orbit):
        radius = 3.7
        pos = orbit_positions(orbit, radius, 210)
        assert orbit_residual(orbit, pos, radius).max() < 1e-9 * radius

    @pytest.mark.parametrize("orbit", list(OrbitId))
    def test_uniform_spacing_and_closure(self, orbit):
        radius = 2.0
        n = 210
        pos = orbit_positions(orbit, radius, n)
        # consecutive angular spacing uniform: every step subtends 2*pi/n
        chord = np.linalg.norm(np.roll(pos, -1, axis=0) - pos, axis=1)
        expected = 2 * radius * math.sin(math.pi / n)
        assert np.abs(chord - expected).max() < 1e-12
        # wrapping theta to 2*pi lands back on frame 0
        closing = orbit_positions(orbit, radius, n)[0]
        assert np.linalg.norm(closing - pos[0]) < 1e-9 * radius

    @pytest.mark.parametrize("orbit", list(OrbitId))
    def test_distance_to_center_is_radius(self, orbit):
        radius = 5.5
        pos = orbit_positions(orbit, radius, 97)
        dist = np.linalg.norm(pos, axis=1)
        assert np.abs(dist / radius - 1.0).max() < 1e-12

    def test_bad_radius(self):
        with pytest.raises(BadRadius):
            orbit_positions(OrbitId.A, 0.0, 10)
        with pytest.raises(BadRadius):
            orbit_positions(OrbitId.A, -1.0, 10)

    def test_too_few_frames(self):
        with pytest.raises(TooFewFrames):
            orbit_positions(OrbitId.A, 1.0, 2)


class TestPoseAt:
    def test_orbit_a_pose_example(self):
        pose = pose_at(OrbitId.A, np.array([2.0, 0.0, 0.0]), np.zeros(3))
        assert np.allclose(pose.forward, [-1, 0, 0], atol=1e-15)
        assert np.allclose(pose.up, [0, 0, 1], atol=1e-15)

    def test_orbit_b_pose_example(self):
        pose = pose_at(OrbitId.B, np.array([0.0, 3.0, 0.0]), np.zeros(3))
        assert np.allclose(pose.forward, [0, -1, 0], atol=1e-15)
        assert np.allclose(pose.up, [1, 0, 0], atol=1e-15)

    def test_degenerate_position(self):
        with pytest.raises(DegeneratePosition):
            pose_at(OrbitId.A, np.ones(3), np.ones(3))

    @pytest.mark.parametrize("orbit", list(OrbitId))
    def test_all_poses_orthonormal_right_handed(self, orbit):
        center = np.array([0.3, -0.2, 0.9])
        positions = center + orbit_positions(orbit, 4.0, 210)
        for pos in positions:
            pose = pose_at(orbit, pos, center)
            for v in (pose.forward, pose.right, pose.up):
                assert abs(np.linalg.norm(v) - 1.0) < 1e-12
            assert abs(pose.forward @ pose.up) < 1e-12
            assert abs(pose.forward @ pose.right) < 1e-12
            assert abs(pose.right @ pose.up) < 1e-12
            # camera basis (right, up, back) is right-handed: det +1
            frame = np.stack([pose.right, pose.up, -pose.forward])
            assert np.linalg.det(frame) == pytest.approx(1.0, abs=1e-12)
            # forward aims at the center
            aim = (center - pos) / np.linalg.norm(center - pos)
            assert np.allclose(pose.forward, aim, atol=1e-12)


class TestCaptureConfig:
    def test_capture_radius_scaling(self):
        cfg = CaptureConfig()
        assert capture_radius(1.0, cfg) == 2.5
        assert capture_radius(0.5, cfg) == 1.25

    def test_capture_radius_rejects_degenerate(self):
        with pytest.raises(BadRadius):
            capture_radius(0.0, CaptureConfig())

    def test_defaults_fit_rule(self):
        cfg = CaptureConfig()
        half_fov = math.radians(cfg.vertical_fov_degrees) / 2
        subtended = 2 * math.degrees(math.asin(1 / cfg.radius_scale))
        assert subtended < cfg.vertical_fov_degrees
        assert cfg.radius_scale * math.sin(half_fov) > 1

    def test_validation(self):
        with pytest.raises(ValueError):
            CaptureConfig(radius_scale=1.0)
        with pytest.raises(ValueError):
            CaptureConfig(crop_width=600)
        with pytest.raises(TooFewFrames):
            CaptureConfig(frames_per_orbit=2)
        with pytest.raises(ValueError):
            CaptureConfig(splat_size=2)
        with pytest.raises(ValueError):
            CaptureConfig(radius_scale=1.05, vertical_fov_degrees=50)
