"""Image I/O, dataset manifests, grid splits, and the synthetic-scene oracle."""

import json

import numpy as np
import pytest

from nelf.data import (CheckerTexture, ScenePlane, SineTexture, SyntheticScene,
                       builtin_scene, from_uint8, generate_synthetic_dataset,
                       load_image, load_manifest, load_scene_spec,
                       ray_color_oracle, rays_color_oracle, rgb8, save_image,
                       save_manifest, subsample_grid, to_uint8)
from nelf.errors import (ConfigError, InconsistentResolution, InvalidManifest,
                         InvalidPose, InvalidStride, MissingFile)
from nelf.geometry import Ray, pixel_grid, ray_directions, unit


class TestImageIO:
    def test_quantization_rule(self):
        img = np.array([[[0.0, 1.0, 0.5], [-0.2, 1.3, 0.4999]]])
        raw = to_uint8(img)
        np.testing.assert_array_equal(raw[0, 0], [0, 255, 128])
        np.testing.assert_array_equal(raw[0, 1], [0, 255, 127])

    def test_eight_bit_grid_points_round_trip_exactly(self):
        img = np.arange(256, dtype=np.float64).reshape(16, 16)[..., None].repeat(3, -1) / 255.0
        np.testing.assert_array_equal(from_uint8(to_uint8(img)), img)

    def test_png_round_trip_error_is_at_most_half_a_step(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(9, 7, 3))
        path = tmp_path / "x.png"
        save_image(img, path)
        back = load_image(path)
        assert np.max(np.abs(back - img)) <= 0.5 / 255.0 + 1e-12

    def test_ppm_round_trip_is_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        img = from_uint8(rng.integers(0, 256, size=(5, 8, 3), dtype=np.uint8))
        path = tmp_path / "x.ppm"
        save_image(img, path)
        np.testing.assert_array_equal(load_image(path), img)

    def test_ppm_and_png_store_identical_pixels(self, tmp_path):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(6, 6, 3))
        save_image(img, tmp_path / "a.png")
        save_image(img, tmp_path / "a.ppm")
        np.testing.assert_array_equal(load_image(tmp_path / "a.png"),
                                      load_image(tmp_path / "a.ppm"))

    def test_ppm_reader_skips_comments(self, tmp_path):
        payload = bytes([10, 20, 30, 40, 50, 60])
        (tmp_path / "c.ppm").write_bytes(b"P6\n# a comment\n2 1\n255\n" + payload)
        img = load_image(tmp_path / "c.ppm")
        np.testing.assert_array_equal(to_uint8(img).ravel(), list(payload))

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(MissingFile):
            load_image(tmp_path / "absent.png")


class TestManifest:
    def write_dataset(self, tmp_path, rows=2, cols=2, size=4, **extra):
        scene = builtin_scene("two-plane-checker")
        generate_synthetic_dataset(scene, rows, cols, size, size, 0.3, 8.0, tmp_path)
        if extra:
            doc = json.loads((tmp_path / "manifest.json").read_text())
            doc.update(extra)
            (tmp_path / "manifest.json").write_text(json.dumps(doc))
        return tmp_path

    def test_grid_positions_are_centered(self, tmp_path):
        self.write_dataset(tmp_path, rows=3, cols=3)
        m = load_manifest(tmp_path)
        centers = np.stack([v.pose.position for v in m.views])
        np.testing.assert_allclose(centers.mean(axis=0), [0.0, 0.0, 0.0], atol=1e-12)
        v0 = next(v for v in m.views if (v.row, v.col) == (0, 0))
        np.testing.assert_allclose(v0.pose.position, [-0.3, -0.3, 0.0], atol=1e-12)

    def test_accepts_directory_or_file_path(self, tmp_path):
        self.write_dataset(tmp_path)
        a = load_manifest(tmp_path)
        b = load_manifest(tmp_path / "manifest.json")
        assert len(a.views) == len(b.views) == 4

    def test_save_load_round_trip_preserves_poses(self, tmp_path):
        self.write_dataset(tmp_path, rows=2, cols=3)
        m = load_manifest(tmp_path)
        save_manifest(m, tmp_path / "copy.json")
        m2 = load_manifest(tmp_path / "copy.json")
        assert m2.st_depth == m.st_depth
        assert m2.uv_depth == m.uv_depth
        for a, b in zip(m.views, m2.views):
            np.testing.assert_array_equal(a.pose.position, b.pose.position)
            np.testing.assert_array_equal(a.pose.rotation, b.pose.rotation)

    def test_uv_depth_is_optional(self, tmp_path):
        self.write_dataset(tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc.pop("uv_depth")
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        assert load_manifest(tmp_path).uv_depth is None

    def test_rejects_uv_depth_equal_to_st_depth(self, tmp_path):
        self.write_dataset(tmp_path, uv_depth=4.0)
        with pytest.raises(InvalidManifest):
            load_manifest(tmp_path)

    def test_missing_required_key_names_it(self, tmp_path):
        self.write_dataset(tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        del doc["st_depth"]
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(InvalidManifest, match="st_depth"):
            load_manifest(tmp_path)

    def test_rejects_wrong_version(self, tmp_path):
        self.write_dataset(tmp_path, version=2)
        with pytest.raises(InvalidManifest, match="version"):
            load_manifest(tmp_path)

    def test_rejects_view_count_mismatch(self, tmp_path):
        self.write_dataset(tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc["views"] = doc["views"][:3]
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(InvalidManifest):
            load_manifest(tmp_path)

    def test_rejects_bad_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{not json")
        with pytest.raises(InvalidManifest):
            load_manifest(tmp_path)

    def test_rejects_bad_rotation(self, tmp_path):
        self.write_dataset(tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc["views"][0]["rotation"] = [[2, 0, 0], [0, 1, 0], [0, 0, 1]]
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(InvalidPose):
            load_manifest(tmp_path)

    def test_missing_image_file_raises(self, tmp_path):
        self.write_dataset(tmp_path)
        (tmp_path / "images" / "view_00_01.png").unlink()
        with pytest.raises(MissingFile):
            load_manifest(tmp_path)

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(MissingFile):
            load_manifest(tmp_path / "nothing")

    def test_load_images_checks_resolution(self, tmp_path):
        self.write_dataset(tmp_path)
        save_image(np.zeros((2, 2, 3)), tmp_path / "images" / "view_00_00.png")
        m = load_manifest(tmp_path)
        with pytest.raises(InconsistentResolution):
            m.load_images()


class TestSubsampleGrid:
    def make_grid(self, tmp_path, n):
        scene = builtin_scene("two-plane-checker")
        generate_synthetic_dataset(scene, n, n, 2, 2, 0.1, 4.0, tmp_path)
        return load_manifest(tmp_path)

    def test_seventeen_grid_stride_four(self, tmp_path):
        m = self.make_grid(tmp_path, 17)
        train, test = subsample_grid(m, 4)
        assert len(train.views) == 25
        assert len(test.views) == 264
        assert train.grid_rows == train.grid_cols == 5
        np.testing.assert_allclose(train.spacing, m.spacing * 4)
        assert test.layout == "list"

    def test_split_is_a_partition(self, tmp_path):
        m = self.make_grid(tmp_path, 5)
        train, test = subsample_grid(m, 2)
        keys = sorted((v.row, v.col) for v in train.views + test.views)
        assert keys == sorted((v.row, v.col) for v in m.views)
        assert not set((v.row, v.col) for v in train.views) \
            & set((v.row, v.col) for v in test.views)

    def test_stride_one_keeps_everything(self, tmp_path):
        m = self.make_grid(tmp_path, 3)
        train, test = subsample_grid(m, 1)
        assert len(train.views) == 9
        assert len(test.views) == 0

    def test_training_poses_are_unchanged(self, tmp_path):
        m = self.make_grid(tmp_path, 5)
        train, _ = subsample_grid(m, 2)
        by_key = {(v.row, v.col): v for v in m.views}
        for v in train.views:
            np.testing.assert_array_equal(v.pose.position, by_key[(v.row, v.col)].pose.position)

    def test_rejects_non_dividing_stride(self, tmp_path):
        m = self.make_grid(tmp_path, 4)
        with pytest.raises(InvalidStride):
            subsample_grid(m, 2)  # (4-1) % 2 != 0

    def test_rejects_nonpositive_stride(self, tmp_path):
        m = self.make_grid(tmp_path, 3)
        with pytest.raises(InvalidStride):
            subsample_grid(m, 0)


class TestTextures:
    def test_checker_cell_containing_origin_uses_color_a(self):
        tex = CheckerTexture(0.4, rgb8(255, 255, 255), rgb8(0, 0, 0))
        np.testing.assert_array_equal(tex.sample(np.array(0.01), np.array(0.01)),
                                      rgb8(255, 255, 255))

    def test_checker_alternates_between_adjacent_cells(self):
        tex = CheckerTexture(1.0, rgb8(255, 0, 0), rgb8(0, 255, 0))
        a = tex.sample(np.array(0.5), np.array(0.5))
        b = tex.sample(np.array(1.5), np.array(0.5))
        c = tex.sample(np.array(1.5), np.array(1.5))
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_smooth_checker_keeps_cell_centers_exact(self):
        tex = CheckerTexture(1.0, rgb8(255, 255, 255), rgb8(0, 0, 0), edge_width=0.3)
        np.testing.assert_array_equal(tex.sample(np.array(0.5), np.array(0.5)),
                                      rgb8(255, 255, 255))
        np.testing.assert_array_equal(tex.sample(np.array(1.5), np.array(0.5)),
                                      rgb8(0, 0, 0))

    def test_smooth_checker_blends_midway_on_a_border(self):
        tex = CheckerTexture(1.0, rgb8(255, 255, 255), rgb8(0, 0, 0), edge_width=0.3)
        np.testing.assert_allclose(tex.sample(np.array(1.0), np.array(0.5)),
                                   [0.5, 0.5, 0.5], atol=1e-12)

    def test_smooth_checker_transition_is_monotone_and_banded(self):
        tex = CheckerTexture(1.0, rgb8(0, 0, 0), rgb8(255, 255, 255), edge_width=0.2)
        x = np.linspace(0.5, 1.5, 201)
        v = tex.sample(x, np.full_like(x, 0.5))[:, 0]
        assert np.all(np.diff(v) >= -1e-12)
        np.testing.assert_array_equal(v[x <= 0.9 - 1e-9], 0.0)
        np.testing.assert_array_equal(v[x >= 1.1 + 1e-9], 1.0)

    def test_zero_edge_width_matches_the_hard_checker(self):
        hard = CheckerTexture(0.7, rgb8(10, 200, 30), rgb8(240, 5, 90))
        soft = CheckerTexture(0.7, rgb8(10, 200, 30), rgb8(240, 5, 90), edge_width=0.0)
        rng = np.random.default_rng(11)
        x, y = rng.uniform(-5, 5, size=(2, 500))
        np.testing.assert_array_equal(hard.sample(x, y), soft.sample(x, y))

    def test_sine_range_and_period(self):
        tex = SineTexture(1.0, 0.0, 0.0, rgb8(0, 0, 0), rgb8(255, 255, 255))
        x = np.linspace(-2, 2, 101)
        vals = tex.sample(x, np.zeros_like(x))
        assert vals.min() >= 0.0
        assert vals.max() <= 1.0
        np.testing.assert_allclose(tex.sample(np.array(0.3), np.array(0.0)),
                                   tex.sample(np.array(1.3), np.array(0.0)), atol=1e-12)


class TestSceneOracle:
    def test_miss_returns_background(self):
        scene = builtin_scene("two-plane-checker")
        color = ray_color_oracle(scene, Ray(np.zeros(3), unit(np.array([20.0, 0.0, 1.0]))))
        np.testing.assert_array_equal(color, scene.background)

    def test_axis_ray_hits_front_plane_color_a(self):
        # The front checker cell containing (0+, 0+) carries color_a.
        scene = builtin_scene("two-plane-checker")
        color = ray_color_oracle(scene, Ray(np.array([0.01, 0.01, 0.0]),
                                            np.array([0.0, 0.0, 1.0])))
        np.testing.assert_array_equal(color, rgb8(255, 255, 255))

    def test_nearer_plane_occludes_farther(self):
        near = ScenePlane(z=1.0, x_range=(-1, 1), y_range=(-1, 1),
                          texture=CheckerTexture(10.0, rgb8(255, 0, 0), rgb8(255, 0, 0)))
        far = ScenePlane(z=2.0, x_range=(-1, 1), y_range=(-1, 1),
                         texture=CheckerTexture(10.0, rgb8(0, 255, 0), rgb8(0, 255, 0)))
        # Plane order in the tuple must not matter.
        for planes in ((near, far), (far, near)):
            scene = SyntheticScene("occl", planes, rgb8(0, 0, 255), 1.0)
            color = ray_color_oracle(scene, Ray(np.array([0.2, 0.2, 0.0]),
                                                np.array([0.0, 0.0, 1.0])))
            np.testing.assert_array_equal(color, rgb8(255, 0, 0))

    def test_hits_behind_the_origin_are_ignored(self):
        plane = ScenePlane(z=-1.0, x_range=(-9, 9), y_range=(-9, 9),
                           texture=CheckerTexture(1.0, rgb8(255, 0, 0), rgb8(255, 0, 0)))
        scene = SyntheticScene("behind", (plane,), rgb8(0, 0, 0), 1.0)
        color = ray_color_oracle(scene, Ray(np.zeros(3), np.array([0.0, 0.0, 1.0])))
        np.testing.assert_array_equal(color, rgb8(0, 0, 0))

    def test_batch_matches_scalar(self):
        scene = builtin_scene("two-plane-checker")
        rng = np.random.default_rng(4)
        dirs = unit(rng.normal(size=(32, 3)) + np.array([0.0, 0.0, 3.0]))
        origins = np.tile(np.array([0.0, 0.0, 0.0]), (32, 1))
        batch = rays_color_oracle(scene, origins, dirs)
        for i in range(32):
            np.testing.assert_array_equal(batch[i],
                                          ray_color_oracle(scene, Ray(origins[i], dirs[i])))

    def test_rejects_empty_plane_extent(self):
        with pytest.raises(ConfigError):
            SyntheticScene("bad", (ScenePlane(1.0, (1.0, 1.0), (0.0, 1.0),
                                              CheckerTexture(1.0, rgb8(0, 0, 0),
                                                             rgb8(0, 0, 0))),),
                           rgb8(0, 0, 0), 1.0)

    def test_unknown_builtin_name(self):
        with pytest.raises(ConfigError):
            builtin_scene("no-such-scene")


class TestSceneSpecFiles:
    def test_load_scene_spec(self, tmp_path):
        doc = {
            "name": "custom",
            "background": [0.1, 0.2, 0.3],
            "st_depth": 5.0,
            "planes": [
                {"z": 5.0, "x_range": [-1, 1], "y_range": [-1, 1],
                 "texture": {"kind": "checker", "cell_size": 0.5,
                             "color_a": [1, 1, 1], "color_b": [0, 0, 0]}},
                {"z": 7.0, "x_range": [-3, 3], "y_range": [-3, 3],
                 "texture": {"kind": "sine", "freq_x": 1.0, "freq_y": 0.5,
                             "color_lo": [0, 0, 0], "color_hi": [1, 1, 1]}},
            ],
        }
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        scene = load_scene_spec(path)
        assert scene.name == "custom"
        assert len(scene.planes) == 2
        assert scene.st_depth == 5.0
        assert scene.uv_depth is None
        assert isinstance(scene.planes[0].texture, CheckerTexture)
        assert isinstance(scene.planes[1].texture, SineTexture)

    def test_scene_spec_carries_uv_depth_and_edge_width(self, tmp_path):
        doc = {
            "st_depth": 5.0,
            "uv_depth": 3.5,
            "planes": [{"z": 5.0, "x_range": [-1, 1], "y_range": [-1, 1],
                        "texture": {"kind": "checker", "cell_size": 0.5,
                                    "edge_width": 0.1,
                                    "color_a": [1, 1, 1], "color_b": [0, 0, 0]}}],
        }
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(doc))
        scene = load_scene_spec(path)
        assert scene.uv_depth == 3.5
        assert scene.planes[0].texture.edge_width == 0.1

    def test_rejects_empty_scenes_and_bad_textures(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps({"planes": []}))
        with pytest.raises(ConfigError):
            load_scene_spec(path)
        path.write_text(json.dumps({"planes": [
            {"z": 1.0, "x_range": [-1, 1], "y_range": [-1, 1],
             "texture": {"kind": "noise"}}]}))
        with pytest.raises(ConfigError):
            load_scene_spec(path)


class TestGeneratedDatasets:
    def test_dataset_pixels_match_the_oracle(self, tmp_path):
        scene = builtin_scene("two-plane-checker")
        m = generate_synthetic_dataset(scene, 2, 2, 8, 8, 0.3, 8.0, tmp_path)
        loaded = load_manifest(tmp_path)
        view = loaded.views[3]
        img = load_image(loaded.image_path(view))
        px, py = pixel_grid(view.pose)
        dirs = ray_directions(view.pose, px, py).reshape(-1, 3)
        origins = np.broadcast_to(view.pose.position, dirs.shape)
        expect = rays_color_oracle(scene, origins, dirs).reshape(8, 8, 3)
        # Scene palette sits exactly on the 8-bit grid, so PNG storage is lossless.
        np.testing.assert_array_equal(img, expect)
        assert m.st_depth == scene.st_depth

    def test_regeneration_is_byte_identical(self, tmp_path):
        scene = builtin_scene("sine-card")
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_synthetic_dataset(scene, 2, 2, 6, 6, 0.2, 6.0, a_dir)
        generate_synthetic_dataset(scene, 2, 2, 6, 6, 0.2, 6.0, b_dir)
        for rel in ("manifest.json", "images/view_00_00.png", "images/view_01_01.png"):
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes()
