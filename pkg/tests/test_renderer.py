import math

import numpy as np
import pytest

import oracles
from conftest import random_cloud
from orbitpcqa.cloud_io import PointCloud, mean_center, bounding_radius
from orbitpcqa.orbit_camera import CaptureConfig, OrbitId, orbit_positions, pose_at
from orbitpcqa.renderer import (
    BadDimensions,
    BadMagic,
    CropTooLarge,
    Frame,
    TruncatedFile,
    VideoSequence,
    capture_sequences,
    center_crop,
    focal_length,
    load_sequence,
    project,
    render_frame,
    resize_bilinear,
    save_sequence,
)

SMALL = CaptureConfig(image_width=64, image_height=64, crop_width=56, crop_height=56,
                      frames_per_orbit=4)


def default_pose(radius=2.5, orbit=OrbitId.A, k=0, n=8, center=np.zeros(3)):
    positions = center + orbit_positions(orbit, radius, n)
    return pose_at(orbit, positions[k], center)


class TestProject:
    def test_center_projects_to_image_center(self):
        center = np.array([1.0, -2.0, 0.5])
        for orbit in OrbitId:
            for k in range(8):
                pose = default_pose(3.0, orbit, k, 8, center)
                px, py, depth = project(center, pose, SMALL)
                assert px == pytest.approx(SMALL.image_width / 2, abs=1e-9)
                assert py == pytest.approx(SMALL.image_height / 2, abs=1e-9)
                assert depth == pytest.approx(3.0, abs=1e-12)

    def test_point_along_right_axis(self):
        pose = default_pose(4.0)
        f = focal_length(SMALL)
        d = 4.0
        point = pose.position + d * pose.forward + 1.0 * pose.right
        px, py, depth = project(point, pose, SMALL)
        assert px == pytest.approx(SMALL.image_width / 2 + f / d, abs=1e-9)
        assert py == pytest.approx(SMALL.image_height / 2, abs=1e-9)

    def test_behind_camera_returns_none(self):
        pose = default_pose(2.0)
        behind = pose.position - pose.forward
        assert project(behind, pose, SMALL) is None

    def test_matrix_oracle_1000_points(self, rng):
        pose = default_pose(3.0, OrbitId.C, 5, 11, center=np.array([0.2, 0.1, -0.3]))
        mat = oracles.projection_matrix_reference(pose, SMALL)
        pts = rng.uniform(-1, 1, size=(1000, 3)) + np.array([0.2, 0.1, -0.3])
        for p in pts:
            res = project(p, pose, SMALL)
            hom = mat @ np.append(p, 1.0)
            if hom[2] <= 1e-9:
                assert res is None
                continue
            assert res is not None
            px, py, depth = res
            assert px == pytest.approx(hom[0] / hom[2], abs=1e-9)
            assert py == pytest.approx(hom[1] / hom[2], abs=1e-9)
            assert depth == pytest.approx(hom[2], abs=1e-9)


class TestRenderFrame:
    def test_single_red_point_centered_splat(self):
        cloud = PointCloud(points=[[0.0, 0.0, 0.0]], colors=[[255, 0, 0]])
        pose = default_pose(2.5)
        frame = render_frame(cloud, pose, SMALL)
        cx, cy = SMALL.image_width // 2, SMALL.image_height // 2
        covered = np.argwhere((frame.pixels == [255, 0, 0]).all(axis=2))
        expected = {(cy + dy, cx + dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)}
        assert set(map(tuple, covered)) == expected
        background = np.array(SMALL.background, dtype=np.uint8)
        untouched = np.ones(frame.pixels.shape[:2], dtype=bool)
        untouched[cy - 1:cy + 2, cx - 1:cx + 2] = False
        assert (frame.pixels[untouched] == background).all()

    def test_determinism(self, rng):
        cloud = random_cloud(rng, count=300)
        pose = default_pose(3.0, OrbitId.B, 2)
        a = render_frame(cloud, pose, SMALL)
        b = render_frame(cloud, pose, SMALL)
        assert np.array_equal(a.pixels, b.pixels)

    def test_coincident_points_lowest_index_wins(self):
        cloud = PointCloud(points=[[0, 0, 0], [0, 0, 0]],
                           colors=[[255, 0, 0], [0, 0, 255]])
        frame = render_frame(cloud, default_pose(2.5), SMALL)
        assert ((frame.pixels == [255, 0, 0]).all(axis=2)).any()
        assert not ((frame.pixels == [0, 0, 255]).all(axis=2)).any()

    def test_nearer_point_on_ray_wins(self):
        pose = default_pose(2.5)
        near = pose.position + 1.0 * pose.forward
        far = pose.position + 2.0 * pose.forward
        cloud = PointCloud(points=[far, near], colors=[[10, 10, 10], [200, 200, 200]])
        frame = render_frame(cloud, pose, SMALL)
        cx, cy = SMALL.image_width // 2, SMALL.image_height // 2
        assert frame.pixels[cy, cx].tolist() == [200, 200, 200]

    def test_fit_rule_keeps_whole_cloud_in_frame(self, rng):
        # the bounding sphere fits the frustum, so no point's splat is ever
        # clipped by the image border and every frame shows the cloud
        background = np.array(SMALL.background, dtype=np.uint8)
        half = SMALL.splat_size // 2
        for trial in range(100):
            cloud = random_cloud(rng, count=40, spread=1.0)
            center = mean_center(cloud)
            radius = bounding_radius(cloud, center)
            orbit = list(OrbitId)[trial % 3]
            positions = center + orbit_positions(orbit, 2.5 * radius, 5)
            pose = pose_at(orbit, positions[trial % 5], center)
            for p in cloud.points:
                res = project(p, pose, SMALL)
                assert res is not None
                px, py, _ = res
                cx, cy = math.floor(px + 0.5), math.floor(py + 0.5)
                assert 0 <= cx - half and cx + half <= SMALL.image_width - 1
                assert 0 <= cy - half and cy + half <= SMALL.image_height - 1
            frame = render_frame(cloud, pose, SMALL)
            assert (frame.pixels != background).any()


class TestCaptureSequences:
    def test_frame_counts(self, rng):
        cloud = random_cloud(rng, count=64)
        seqs = capture_sequences(cloud, SMALL)
        assert [s.orbit for s in seqs] == [OrbitId.A, OrbitId.B, OrbitId.C]
        assert sum(s.frame_count for s in seqs) == 12
        tiny = CaptureConfig(image_width=32, image_height=32, crop_width=32,
                             crop_height=32, frames_per_orbit=3)
        assert sum(s.frame_count for s in capture_sequences(cloud, tiny)) == 9

    def test_center_lands_mid_image_every_frame(self, rng):
        cloud = random_cloud(rng, count=128)
        center = mean_center(cloud)
        radius = 2.5 * bounding_radius(cloud, center)
        for orbit in OrbitId:
            for pos in center + orbit_positions(orbit, radius, SMALL.frames_per_orbit):
                pose = pose_at(orbit, pos, center)
                px, py, _ = project(center, pose, SMALL)
                assert abs(px - SMALL.image_width / 2) < 0.5
                assert abs(py - SMALL.image_height / 2) < 0.5

    def test_capture_determinism(self, rng):
        cloud = random_cloud(rng, count=100)
        a = capture_sequences(cloud, SMALL)
        b = capture_sequences(cloud, SMALL)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.frames, sb.frames)

    def test_coverage_every_frame(self, rng):
        cloud = PointCloud(
            points=rng.uniform(-1, 1, size=(50, 3)),
            colors=np.full((50, 3), 255, dtype=np.uint8),
        )
        background = np.array(SMALL.background, dtype=np.uint8)
        for seq in capture_sequences(cloud, SMALL):
            for i in range(seq.frame_count):
                assert (seq.frames[i] != background).any()

    @pytest.mark.parametrize("orbit", list(OrbitId))
    def test_rotation_equivalence_one_step(self, rng, orbit):
        # rotating the cloud by -theta about the orbit axis and rendering from
        # pose 0 must reproduce rendering the unrotated cloud from pose 1
        from orbitpcqa.orbit_camera import orbit_normal

        cloud = random_cloud(rng, count=200)
        center = mean_center(cloud)
        radius = 2.5 * bounding_radius(cloud, center)
        n = 210
        positions = center + orbit_positions(orbit, radius, n)
        theta = 2 * math.pi / n

        pose0 = pose_at(orbit, positions[0], center)
        pose1 = pose_at(orbit, positions[1], center)
        rotated = PointCloud(
            points=oracles.rotate_about_axis(cloud.points, orbit_normal(orbit),
                                             -theta, center),
            colors=cloud.colors,
        )
        a = render_frame(rotated, pose0, SMALL)
        b = render_frame(cloud, pose1, SMALL)
        assert np.array_equal(a.pixels, b.pixels)


class TestResize:
    def test_identity_dimensions(self, rng):
        frame = Frame(8, 8, rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8))
        out = resize_bilinear(frame, 8, 8)
        assert np.array_equal(out.pixels, frame.pixels)

    def test_checkerboard_average(self):
        pix = np.zeros((2, 2, 3), dtype=np.uint8)
        pix[0, 0] = pix[1, 1] = 255
        out = resize_bilinear(Frame(2, 2, pix), 1, 1)
        assert out.pixels[0, 0].tolist() == [128, 128, 128]

    def test_formula_oracle_random_8x8(self, rng):
        src = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        out = resize_bilinear(Frame(8, 8, src), 5, 3)
        for j in range(3):
            for i in range(5):
                for c in range(3):
                    sx = min(max((i + 0.5) * (8 / 5) - 0.5, 0.0), 7.0)
                    sy = min(max((j + 0.5) * (8 / 3) - 0.5, 0.0), 7.0)
                    x0, y0 = int(math.floor(sx)), int(math.floor(sy))
                    x1, y1 = min(x0 + 1, 7), min(y0 + 1, 7)
                    wx, wy = sx - x0, sy - y0
                    val = ((1 - wy) * ((1 - wx) * src[y0, x0, c] + wx * src[y0, x1, c])
                           + wy * ((1 - wx) * src[y1, x0, c] + wx * src[y1, x1, c]))
                    assert out.pixels[j, i, c] == int(math.floor(val + 0.5))

    def test_bad_dimensions(self, rng):
        frame = Frame(4, 4, rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8))
        with pytest.raises(BadDimensions):
            resize_bilinear(frame, 0, 4)


class TestCenterCrop:
    def test_full_size_identity(self, rng):
        frame = Frame(6, 4, rng.integers(0, 256, size=(4, 6, 3), dtype=np.uint8))
        out = center_crop(frame, 6, 4)
        assert np.array_equal(out.pixels, frame.pixels)

    def test_520_to_448_offset(self):
        pix = np.zeros((520, 520, 3), dtype=np.uint8)
        pix[36, 36] = [1, 2, 3]
        out = center_crop(Frame(520, 520, pix), 448, 448)
        assert out.pixels[0, 0].tolist() == [1, 2, 3]

    def test_crop_composition(self, rng):
        frame = Frame(16, 16, rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
        twice = center_crop(center_crop(frame, 12, 12), 8, 8)
        once = center_crop(frame, 8, 8)
        assert np.array_equal(twice.pixels, once.pixels)

    def test_crop_too_large(self, rng):
        frame = Frame(4, 4, rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8))
        with pytest.raises(CropTooLarge):
            center_crop(frame, 5, 4)


class TestPcvContainer:
    def test_round_trip(self, rng, tmp_path):
        frames = rng.integers(0, 256, size=(4, 6, 5, 3), dtype=np.uint8)
        seq = VideoSequence(orbit=OrbitId.B, frames=frames)
        path = tmp_path / "seq.pcv"
        save_sequence(seq, path)
        loaded = load_sequence(path)
        assert loaded.orbit == OrbitId.B
        assert np.array_equal(loaded.frames, seq.frames)
        # bit-exact on disk: second save yields identical bytes
        path2 = tmp_path / "again.pcv"
        save_sequence(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_fields(self, rng, tmp_path):
        frames = rng.integers(0, 256, size=(3, 7, 9, 3), dtype=np.uint8)
        path = tmp_path / "seq.pcv"
        save_sequence(VideoSequence(orbit=OrbitId.C, frames=frames), path)
        raw = path.read_bytes()
        assert raw[:4] == b"PCVS"
        import struct
        version, width, height, count = struct.unpack_from("<IIII", raw, 4)
        assert (version, width, height, count) == (1, 9, 7, 3)
        assert raw[20] == OrbitId.C.value

    def test_bad_magic(self, rng, tmp_path):
        path = tmp_path / "bad.pcv"
        frames = rng.integers(0, 256, size=(1, 2, 2, 3), dtype=np.uint8)
        save_sequence(VideoSequence(orbit=OrbitId.A, frames=frames), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagic):
            load_sequence(path)

    def test_truncated(self, rng, tmp_path):
        path = tmp_path / "short.pcv"
        frames = rng.integers(0, 256, size=(2, 4, 4, 3), dtype=np.uint8)
        save_sequence(VideoSequence(orbit=OrbitId.A, frames=frames), path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) - 10])
        with pytest.raises(TruncatedFile):
            load_sequence(path)
