import numpy as np
import pytest

from graspme.geometry import Camera, CameraIntrinsics, Pose, look_at
from graspme.render import (
    RenderSettings,
    annotate_keypoints,
    annotate_scene,
    apply_simple_swap,
    bbox_from_mask,
    pixel_index,
    rasterize,
    scene_triangles,
    shade,
)
from graspme.scene import GenerationConfig, Light, Scene, SceneObject, generate_scene, scene_rng
from graspme.shapes import Cuboid, ObjectTemplate, manifold_for_primitive

from raycast import exact_keypoint_verdicts, keypoint_verdicts, oracle_id_buffer


def top_down_camera(size=64, height=1.0):
    k = CameraIntrinsics(size * 2.0, size * 2.0, size / 2.0, size / 2.0, size, size)
    return Camera(k, look_at((0, 0, height), (0, 0, 0), up=(0, 1, 0)))


def make_object(shape, translation, instance_id, color=(0.8, 0.2, 0.2)):
    template = ObjectTemplate("cuboid", shape, manifold_for_primitive(shape), 2)
    return SceneObject(template, shape, Pose(np.eye(3), translation), color, instance_id)


def make_scene(objects, camera=None, light=None):
    light = light or Light((0.0, 0.0, 3.0), 1.0, 0.3)
    return Scene(tuple(objects), (0.5, 0.5, 0.5), (1.0, 1.0), light, camera or top_down_camera())


class TestRasterize:
    def test_empty_scene_is_all_table(self):
        buffers = rasterize(make_scene([]))
        assert buffers.shape == (64, 64)
        assert (buffers.instance_id == 0).all()
        assert np.allclose(buffers.depth, 1.0)

    def test_background_outside_table(self):
        cam = top_down_camera(height=5.0)  # table covers only the centre of the frame
        buffers = rasterize(make_scene([], cam), RenderSettings(background=(7, 8, 9)))
        assert np.isinf(buffers.depth[0, 0]) and tuple(buffers.rgb[0, 0]) == (7, 8, 9)
        assert buffers.depth[32, 32] == pytest.approx(5.0)

    def test_centred_cuboid_top_down(self):
        box = Cuboid(0.2, 0.1, 0.05)
        buffers = rasterize(make_scene([make_object(box, (0, 0, 0.025), 1)]))
        assert buffers.instance_id[32, 32] == 1
        assert buffers.depth[32, 32] == pytest.approx(0.95)
        # focal 128 px at depth 0.95: 0.2 m spans ~27 px, 0.1 m ~13.5 px
        x, y, w, h = bbox_from_mask(buffers.instance_id, 1)
        assert w + 1 == pytest.approx(0.2 * 128 / 0.95, abs=1.5)
        assert h + 1 == pytest.approx(0.1 * 128 / 0.95, abs=1.5)
        assert x + w / 2 == pytest.approx(31.5, abs=1) and y + h / 2 == pytest.approx(31.5, abs=1)

    def test_occlusion(self):
        low = make_object(Cuboid(0.2, 0.1, 0.05), (0, 0, 0.025), 1)
        high = make_object(Cuboid(0.1, 0.1, 0.05), (0, 0, 0.3), 2)
        scene = make_scene([low, high])
        buffers = rasterize(scene)
        assert buffers.instance_id[32, 32] == 2
        assert buffers.depth[32, 32] == pytest.approx(0.675)
        assert (buffers.instance_id == 1).any()  # ends still peek out
        # the low cuboid's keypoints sit under the high one
        assert [v for *_, v in annotate_keypoints(scene, buffers, low)] == [1, 1]

    def test_depth_tie_goes_to_lower_id(self):
        a = make_object(Cuboid(0.1, 0.1, 0.05), (0, 0, 0.025), 1)
        b = make_object(Cuboid(0.1, 0.1, 0.05), (0, 0, 0.025), 2)
        buffers = rasterize(make_scene([b, a]))
        assert buffers.instance_id[32, 32] == 1

    def test_near_plane_clipping(self):
        cam = top_down_camera(height=0.04)  # camera inside the cuboid's height
        obj = make_object(Cuboid(0.2, 0.1, 0.05), (0, 0, 0.025), 1)
        buffers = rasterize(make_scene([obj], cam))
        assert np.isfinite(buffers.depth).all() and (buffers.depth >= 1e-3).all()

    def test_matches_ray_oracle(self, small_config, simple_templates, complex_templates):
        for templates in (simple_templates, complex_templates):
            for i in range(10):
                scene = generate_scene(scene_rng(11, i), small_config, templates)
                buffers = rasterize(scene)
                ids, depth = oracle_id_buffer(scene)
                assert (ids == buffers.instance_id).mean() >= 0.995
                hit = np.isfinite(depth)
                assert np.allclose(buffers.depth[hit], depth[hit], rtol=1e-6)

    def test_triangle_order(self, simple_templates, small_config):
        scene = generate_scene(scene_rng(0, 0), small_config, simple_templates)
        ids = scene_triangles(scene).ids
        assert ids[0] == ids[1] == 0 and (np.diff(ids) >= 0).all()


class TestShade:
    def test_pure_ambient_gives_base_colour(self):
        obj = make_object(Cuboid(0.2, 0.1, 0.05), (0, 0, 0.025), 1, color=(0.2, 0.4, 0.6))
        scene = make_scene([obj], light=Light((1.0, 1.0, 3.0), 0.0, 1.0))
        colors = shade(scene_triangles(scene), scene.camera.eye, scene.light)
        assert (colors[2:] == np.rint(np.array([0.2, 0.4, 0.6]) * 255)).all()

    def test_bounded_by_ambient_and_full(self, simple_templates):
        scene = generate_scene(scene_rng(1, 0), GenerationConfig(), simple_templates)
        soup = scene_triangles(scene)
        colors = shade(soup, scene.camera.eye, scene.light).astype(float)
        lo = np.floor(soup.colors * scene.light.ambient * 255) - 1
        hi = np.ceil(np.minimum(soup.colors * (scene.light.ambient + scene.light.intensity), 1) * 255) + 1
        assert (colors >= lo).all() and (colors <= hi).all()

    def test_winding_independent(self):
        obj = make_object(Cuboid(0.2, 0.1, 0.05), (0, 0, 0.025), 1)
        scene = make_scene([obj])
        soup = scene_triangles(scene)
        flipped = type(soup)(soup.vertices[:, ::-1].copy(), soup.ids, soup.colors)
        assert (shade(soup, scene.camera.eye, scene.light) == shade(flipped, scene.camera.eye, scene.light)).all()


class TestBboxFromMask:
    def test_rectangle(self):
        buf = np.zeros((10, 12), dtype=np.int32)
        buf[4:8, 3:11] = 5
        assert bbox_from_mask(buf, 5) == (3, 4, 7, 3)

    def test_single_pixel(self):
        buf = np.zeros((10, 10), dtype=np.int32)
        buf[5, 5] = 1
        assert bbox_from_mask(buf, 1) == (5, 5, 0, 0)

    def test_absent(self):
        assert bbox_from_mask(np.zeros((4, 4), dtype=np.int32), 1) is None


class TestKeypoints:
    def test_pixel_index_rounding(self):
        assert [pixel_index(c) for c in (0.0, 0.49, 0.5, 0.99, 1.0, -0.01)] == [0, 0, 0, 0, 1, -1]

    def test_swap(self):
        a, b = (1.0, 2.0, 1), (3.0, 4.0, 2)
        assert apply_simple_swap([a, b]) == [b, a]
        assert apply_simple_swap([b, a]) == [b, a]
        assert apply_simple_swap([(1, 1, 2), (2, 2, 2)]) == [(1, 1, 2), (2, 2, 2)]
        assert apply_simple_swap([(1, 1, 1), (2, 2, 1)]) == [(1, 1, 1), (2, 2, 1)]
        with pytest.raises(ValueError):
            apply_simple_swap([a])

    def test_out_of_frame_is_occluded(self):
        obj = make_object(Cuboid(0.2, 0.1, 0.05), (0.5, 0, 0.025), 1)
        cam = top_down_camera()
        scene = make_scene([obj], cam)
        buffers = rasterize(scene)
        kps = annotate_keypoints(scene, buffers, obj)
        assert kps[1][0] > 64 and kps[1][2] == 1

    def test_visibility_matches_oracle(self, small_config, simple_templates, complex_templates):
        for templates in (simple_templates, complex_templates):
            for i in range(20):
                scene = generate_scene(scene_rng(21, i), small_config, templates)
                buffers = rasterize(scene)
                for obj in scene.objects:
                    flags = [v for *_, v in annotate_keypoints(scene, buffers, obj)]
                    expected = keypoint_verdicts(scene, obj, buffers.shape)
                    assert flags[:len(expected)] == [2 if e else 1 for e in expected]
                    assert all(f == 0 for f in flags[len(expected):])

    def test_exact_ray_disagreements_are_edge_cases(self, small_config, complex_templates):
        for i in range(20):
            scene = generate_scene(scene_rng(22, i), small_config, complex_templates)
            buffers = rasterize(scene)
            for obj in scene.objects:
                flags = np.array([v == 2 for *_, v in annotate_keypoints(scene, buffers, obj)])
                exact, edge = exact_keypoint_verdicts(scene, obj, buffers.shape)
                assert not ((flags[:len(exact)] != exact) & ~edge).any()


class TestAnnotateScene:
    def test_partition_and_bbox(self, small_config, complex_templates):
        for i in range(10):
            scene = generate_scene(scene_rng(31, i), small_config, complex_templates)
            buffers = rasterize(scene)
            anns = annotate_scene(scene, buffers)
            ids = [a.instance_id for a in anns]
            assert ids == sorted(ids)
            assert set(ids) == set(np.unique(buffers.instance_id)) - {0}
            total = np.zeros(buffers.shape, dtype=int)
            for a in anns:
                total += a.mask
                assert a.bbox == bbox_from_mask(buffers.instance_id, a.instance_id)
                assert a.area > 0 and len(a.keypoints) == scene.object_by_id(a.instance_id).K
            assert total.max() <= 1 and total.sum() == (buffers.instance_id > 0).sum()

    def test_simple_swap_applied(self, small_config, simple_templates):
        for i in range(30):
            scene = generate_scene(scene_rng(32, i), small_config, simple_templates)
            for a in annotate_scene(scene, rasterize(scene)):
                assert not (a.keypoints[0][2] != 2 and a.keypoints[1][2] == 2)
