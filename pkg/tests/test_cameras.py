import numpy as np
import pytest

from drc.cameras import (
    Camera,
    Ray,
    load_camera,
    look_at_extrinsics,
    perspective_camera,
    pixel_rays,
    pixel_to_ray,
    project,
    save_camera,
)
from drc.errors import FormatError


def identity_perspective(f=1.0, size=8):
    return Camera("perspective", size, size, (f, f, size / 2, size / 2),
                  np.eye(3), np.zeros(3))


def identity_orthographic(s=0.1, size=8):
    return Camera("orthographic", size, size, (s, s, size / 2, size / 2),
                  np.eye(3), np.zeros(3))


class TestPixelToRay:
    def test_principal_ray(self):
        cam = identity_perspective()
        ray = pixel_to_ray(cam, 4.0, 4.0)
        assert np.allclose(ray.origin, 0.0)
        assert np.allclose(ray.direction, [0, 0, 1])

    def test_unit_offset_direction(self):
        cam = identity_perspective(f=1.0)
        ray = pixel_to_ray(cam, 5.0, 4.0)  # u - u0 = 1, v = v0
        assert np.allclose(ray.direction, np.array([1, 0, 1]) / np.sqrt(2))

    def test_orthographic_offset(self):
        cam = identity_orthographic(s=0.1)
        ray = pixel_to_ray(cam, 6.0, 4.0)  # u - u0 = 2
        assert np.allclose(ray.origin, [0.2, 0, 0])
        assert np.allclose(ray.direction, [0, 0, 1])

    def test_perspective_rays_share_origin(self):
        cam = perspective_camera((1.0, 2.0, 3.0), (0, 0, 0), 50.0, 16, 16)
        origins, dirs = pixel_rays(cam, np.arange(16.0), np.arange(16.0))
        assert np.allclose(origins, origins[0])
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_orthographic_rays_share_direction(self):
        rot, t = look_at_extrinsics((2.0, 1.0, 2.0), (0, 0, 0))
        cam = Camera("orthographic", 16, 16, (0.05, 0.05, 8.0, 8.0), rot, t)
        origins, dirs = pixel_rays(cam, np.arange(16.0), np.arange(16.0))
        assert np.allclose(dirs, dirs[0])
        assert not np.allclose(origins[0], origins[1])

    @pytest.mark.parametrize("model", ["perspective", "orthographic"])
    def test_projection_roundtrip(self, model):
        rng = np.random.default_rng(0)
        rot, t = look_at_extrinsics((1.5, -0.7, 2.2), (0.1, 0.0, -0.2))
        intr = (70.0, 65.0, 31.5, 33.0) if model == "perspective" else (0.02, 0.03, 32.0, 32.0)
        cam = Camera(model, 64, 64, intr, rot, t)
        for _ in range(50):
            u, v = rng.uniform(0, 64, 2)
            origins, dirs = pixel_rays(cam, np.array([u]), np.array([v]))
            point = origins[0] + rng.uniform(0.5, 3.0) * dirs[0]
            uv = project(cam, point)
            assert np.allclose(uv, [u, v], atol=1e-6)


class TestValidation:
    def test_non_orthonormal_rotation_rejected(self):
        bad = np.eye(3)
        bad[0, 0] = 1.0 + 1e-6
        with pytest.raises(ValueError, match="orthonormal"):
            Camera("perspective", 8, 8, (1, 1, 4, 4), bad, np.zeros(3))

    def test_reflection_rejected(self):
        bad = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError, match="determinant"):
            Camera("perspective", 8, 8, (1, 1, 4, 4), bad, np.zeros(3))

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError, match="model"):
            Camera("fisheye", 8, 8, (1, 1, 4, 4), np.eye(3), np.zeros(3))

    def test_non_unit_ray_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            Ray(np.zeros(3), np.array([1.0, 1.0, 0.0]))


class TestCameraFiles:
    def test_roundtrip_exact(self, tmp_path):
        cam = perspective_camera((0.3, 1.2, -2.0), (0, 0.1, 0), 47.5, 80, 60)
        save_camera(tmp_path / "cam.txt", cam)
        loaded = load_camera(tmp_path / "cam.txt")
        assert loaded.model == cam.model
        assert (loaded.width, loaded.height) == (cam.width, cam.height)
        assert loaded.intrinsics == cam.intrinsics
        assert np.array_equal(loaded.rotation, cam.rotation)
        assert np.array_equal(loaded.translation, cam.translation)

    def test_orthographic_roundtrip(self, tmp_path):
        rot, t = look_at_extrinsics((0.0, 1.0, 2.0), (0, 0, 0))
        cam = Camera("orthographic", 40, 30, (0.02, 0.025, 20.0, 15.0), rot, t)
        save_camera(tmp_path / "cam.txt", cam)
        loaded = load_camera(tmp_path / "cam.txt")
        assert loaded.model == "orthographic"
        assert loaded.intrinsics == cam.intrinsics
        assert np.array_equal(loaded.rotation, cam.rotation)

    def test_unknown_model_string_rejected(self, tmp_path):
        cam = identity_perspective()
        save_camera(tmp_path / "cam.txt", cam)
        text = (tmp_path / "cam.txt").read_text().replace("perspective", "pinhole")
        (tmp_path / "cam.txt").write_text(text)
        with pytest.raises(FormatError, match="model"):
            load_camera(tmp_path / "cam.txt")

    def test_unknown_field_rejected(self, tmp_path):
        cam = identity_perspective()
        save_camera(tmp_path / "cam.txt", cam)
        with open(tmp_path / "cam.txt", "a") as fh:
            fh.write("distortion 0.1\n")
        with pytest.raises(FormatError, match="unknown camera field"):
            load_camera(tmp_path / "cam.txt")

    def test_missing_field_rejected(self, tmp_path):
        cam = identity_perspective()
        save_camera(tmp_path / "cam.txt", cam)
        lines = (tmp_path / "cam.txt").read_text().splitlines()
        (tmp_path / "cam.txt").write_text("\n".join(l for l in lines if not l.startswith("rotation")))
        with pytest.raises(FormatError, match="missing"):
            load_camera(tmp_path / "cam.txt")
