"""
Test the rasterizer, shading, depth normalization, silhouettes and image files
"""

import math

import numpy as np
import pytest

from mufen.errors import InvalidArgumentError, UnsupportedProjectionError
from mufen.geometry import CameraPose, HandMesh, Perspective, ViewId, synth_hand
from mufen.render import (
    DirectionalLight,
    LightRig,
    Material,
    normalize_depth,
    quantize,
    rasterize,
    read_pgm16,
    read_ppm,
    render_depth,
    render_view,
    shade,
    silhouette,
    silhouette_area,
    write_pgm16,
    write_png,
    write_ppm,
)


def big_triangle(z=0.0):
    return HandMesh(vertices=[[-1, -1, z], [3, -1, z], [-1, 3, z]], faces=[[0, 1, 2]])


def test_quantize_rounds_halves_up():
    assert quantize(np.array([0.0, 0.5, 1.0, 1.7, -0.2])).tolist() == [0, 128, 255, 255, 0]


def test_screen_filling_triangle_has_constant_depth(camera):
    fb = rasterize(big_triangle(), camera, 32)
    assert fb.covered.all()
    assert np.allclose(fb.depth, 2.0, atol=1e-12)


def test_overlap_keeps_the_nearer_triangle(camera, make_quad):
    near = make_quad(-0.1, -0.1, 0.05, 0.05, z=-1.0)
    far = make_quad(-0.05, -0.05, 0.1, 0.1, z=0.0)
    both = HandMesh(
        vertices=np.vstack([near.vertices, far.vertices]),
        faces=np.vstack([near.faces, far.faces + 4]),
    )
    fb = rasterize(both, camera, 64)
    # pixel (32, 32) is inside both squares
    assert fb.depth[32, 32] == pytest.approx(1.0, abs=1e-12)
    assert fb.depth[40, 40] == pytest.approx(2.0, abs=1e-12)


def test_mesh_behind_perspective_camera_is_empty():
    camera = CameraPose((0.0, 0.0, -5.0), Perspective())
    fb = rasterize(big_triangle(), camera, 16)
    assert not fb.covered.any()
    assert (fb.rgb == 0).all()


def test_empty_mesh_renders_background(camera):
    empty = HandMesh(vertices=np.zeros((0, 3)), faces=np.zeros((0, 3), dtype=int))
    fb = rasterize(empty, camera, 16)
    assert fb.coverage == 0.0
    assert (render_depth(empty, camera, 16) == 0.0).all()


def test_resolution_minimum(camera):
    with pytest.raises(InvalidArgumentError):
        rasterize(big_triangle(), camera, 4)


def test_rasterization_is_identical_across_workers(open_hand, camera):
    one = render_view(open_hand, camera, ViewId.FRONT, 96, workers=1)
    many = render_view(open_hand, camera, ViewId.FRONT, 96, workers=4)
    assert np.array_equal(one.rgb, many.rgb)
    assert np.array_equal(one.depth, many.depth)
    again = render_view(open_hand, camera, ViewId.FRONT, 96, workers=1)
    assert np.array_equal(one.rgb, again.rgb)


def test_ambient_only_shading(camera):
    geom = rasterize(big_triangle(), camera, 16)
    rgb = shade(geom, LightRig.ambient_only(), Material()).rgb
    assert (rgb == [77, 77, 69]).all()


def test_saturated_shading_and_background(camera, make_quad):
    geom = rasterize(make_quad(-0.05, -0.05, 0.05, 0.05), camera, 32)
    rgb = shade(geom, LightRig.ambient_only((1.0, 1.0, 1.0)), Material()).rgb
    assert (rgb[geom.covered] == [255, 255, 230]).all()
    assert (rgb[~geom.covered] == 0).all()


def test_adding_a_light_never_darkens(open_hand, camera):
    base = LightRig()
    brighter = LightRig(directional=base.directional + (DirectionalLight((0.0, -1.0, 0.0), (0.3, 0.3, 0.3)),))
    a = render_view(open_hand, camera, ViewId.FRONT, 64, lights=base).rgb.astype(int)
    b = render_view(open_hand, camera, ViewId.FRONT, 64, lights=brighter).rgb.astype(int)
    assert (b >= a).all()


def test_side_views_get_the_compensation_light():
    rig = LightRig()
    assert rig.for_view(ViewId.FRONT) is rig
    assert len(rig.for_view(ViewId.LEFT).directional) == len(rig.directional) + 1
    for view in ViewId:
        added = rig.for_view(view).directional[len(rig.directional):]
        assert added == ((LightRig.COMPENSATION,) if view.is_side else ())
    assert LightRig.COMPENSATION.direction == (0.0, 0.0, -1.0)


def test_left_hand_material_and_fixed_parameters():
    assert np.allclose(Material.for_hand("left").albedo, [0.9, 1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        Material(metallic=0.5)


def test_light_rig_rejects_non_unit_direction():
    with pytest.raises(InvalidArgumentError):
        LightRig(directional=(DirectionalLight((0.0, 0.0, -2.0)),))


def test_normalize_depth():
    depth = np.array([[1.0, 2.0], [3.0, np.inf]])
    out = normalize_depth(depth)
    assert out.tolist() == [[1.0, 0.5], [0.0, 0.0]]
    flat = normalize_depth(np.array([[2.0, np.inf], [2.0, 2.0]]))
    assert flat.tolist() == [[1.0, 0.0], [1.0, 1.0]]


def test_half_frame_quad_area(camera, make_quad):
    quad = make_quad(-0.2, -0.2, 0.2, 0.0)
    area = silhouette_area(quad, ViewId.FRONT, camera, 64)
    assert area == pytest.approx(0.5, abs=1.0 / 64)


def test_edge_on_quad_area(camera, make_quad):
    quad = make_quad(-0.2, -0.2, 0.2, 0.0)
    assert silhouette_area(quad, ViewId.LEFT, camera, 64) <= 2.0 / 64


def test_silhouette_area_needs_weak_perspective(open_hand):
    with pytest.raises(UnsupportedProjectionError):
        silhouette_area(open_hand, ViewId.FRONT, CameraPose(projection=Perspective()), 32)


@pytest.mark.parametrize("view", [ViewId.FRONT, ViewId.LEFT, ViewId.TOP])
def test_opposite_silhouettes_are_mirrors(view, camera):
    hand = synth_hand(11, [0.1, 0.5, 0.2, 0.9, 0.4])
    a = silhouette(hand, view, camera, 128)
    b = silhouette(hand, view.partner, camera, 128)
    mirrored = np.fliplr(b) if view is not ViewId.TOP else np.flipud(b)
    mismatch = np.count_nonzero(a != mirrored) / max(np.count_nonzero(a), 1)
    assert mismatch <= 0.005


@pytest.mark.slow
def test_mirror_areas_and_resolution_convergence(camera):
    rng = np.random.default_rng(2024)
    for seed in range(50):
        hand = synth_hand(seed, rng.uniform(0.0, 1.0, 5))
        for view in (ViewId.FRONT, ViewId.LEFT, ViewId.TOP):
            a = silhouette_area(hand, view, camera, 512)
            b = silhouette_area(hand, view.partner, camera, 512)
            assert abs(a - b) <= 0.005 * max(a, b)
        fine = silhouette_area(hand, ViewId.FRONT, camera, 1024)
        coarse = silhouette_area(hand, ViewId.FRONT, camera, 512)
        assert abs(coarse - fine) < 0.01 * fine


def test_ppm_and_pgm_files(tmp_path, open_hand, camera):
    fb = render_view(open_hand, camera, ViewId.FRONT, 48)
    ppm, pgm = tmp_path / "front.ppm", tmp_path / "front.pgm"
    write_ppm(ppm, fb.rgb)
    depth = normalize_depth(fb.depth)
    write_pgm16(pgm, depth)

    assert ppm.read_bytes().startswith(b"P6\n48 48\n255\n")
    assert pgm.read_bytes().startswith(b"P5\n48 48\n65535\n")
    assert np.array_equal(read_ppm(ppm), fb.rgb)
    expected = np.floor(depth * 65535.0 + 0.5) / 65535.0
    assert np.allclose(read_pgm16(pgm), expected, atol=0.0)
    assert (read_pgm16(pgm)[~fb.covered] == 0.0).all()


def test_netpbm_headers_with_comments(tmp_path):
    ppm = tmp_path / "commented.ppm"
    ppm.write_bytes(b"P6\n# written by hand\n2 1\n255\n" + bytes([255, 0, 0, 0, 128, 255]))
    assert read_ppm(ppm).tolist() == [[[255, 0, 0], [0, 128, 255]]]

    pgm = tmp_path / "commented.pgm"
    pgm.write_bytes(b"P5\n2 1\n# depth\n65535\n" + bytes([0xFF, 0xFF, 0x00, 0x00]))
    assert read_pgm16(pgm).tolist() == [[1.0, 0.0]]


def test_netpbm_errors_are_invalid_arguments(tmp_path, open_hand, camera):
    garbage = tmp_path / "garbage.ppm"
    garbage.write_bytes(b"not an image at all")
    with pytest.raises(InvalidArgumentError):
        read_ppm(garbage)

    pgm = tmp_path / "depth.pgm"
    write_pgm16(pgm, np.zeros((4, 4)))
    with pytest.raises(InvalidArgumentError):
        read_ppm(pgm)

    ppm = tmp_path / "front.ppm"
    write_ppm(ppm, render_view(open_hand, camera, ViewId.FRONT, 16).rgb)
    truncated = tmp_path / "truncated.ppm"
    truncated.write_bytes(ppm.read_bytes()[:-100])
    with pytest.raises(InvalidArgumentError):
        read_ppm(truncated)


def test_png_export(tmp_path, open_hand, camera):
    from PIL import Image

    fb = render_view(open_hand, camera, ViewId.FRONT, 32)
    path = tmp_path / "front.png"
    write_png(path, fb.rgb)
    assert np.array_equal(np.asarray(Image.open(path)), fb.rgb)


def test_perspective_render_covers_the_hand(open_hand):
    camera = CameraPose((0.0, 0.0, 0.5), Perspective(yfov=math.radians(60)))
    fb = render_view(open_hand, camera, ViewId.FRONT, 64)
    assert 0.0 < fb.coverage < 1.0
