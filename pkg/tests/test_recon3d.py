import logging

import numpy as np
import pytest

from octadepth.metrics import chamfer
from octadepth.phantom import Branch, PhantomConfig, PhantomScene, make_sample, rasterize
from octadepth.raster import BinaryMask, DepthMap, Image2D
from octadepth.recon3d import (PointCloud3, ReconConfig, TubeMesh, encode_ply, encode_polydata,
                               export_ply, lift_centerline, load_ply_points, parse_ply,
                               reconstruct, resample_segment, transport_frames, triangle_normals,
                               tube_mesh)
from octadepth.spatial import KDTree
from octadepth.vesselgraph import Node, Segment, VesselGraph, rasterize_graph

SCALE = 3 / 512


def one_pixel_graph(x, y):
    return VesselGraph([Node(0, x, y, "endpoint"), Node(1, x, y, "endpoint")],
                       [Segment(0, 0, 1, np.array([[x, y]]))])


def test_pixel_to_world_examples():
    depth = DepthMap.full(np.full((300, 300), 0.5))
    cfg = ReconConfig(sx=SCALE, sy=SCALE, sz=0.5)
    polys, cloud, filled = lift_centerline(one_pixel_graph(256, 128), depth, cfg)
    np.testing.assert_allclose(cloud.points[0], [1.5, 0.75, 0.25], rtol=0, atol=1e-15)
    polys, _, _ = lift_centerline(one_pixel_graph(0, 0), DepthMap.full(np.zeros((4, 4))), cfg)
    np.testing.assert_array_equal(polys[0][0], [0, 0, 0])
    assert filled == 0


def test_for_shape_default_field_of_view():
    cfg = ReconConfig().for_shape((64, 128))
    assert cfg.sx == 3 / 128 and cfg.sy == 3 / 64
    with pytest.raises(ValueError):
        ReconConfig(sz=0)
    with pytest.raises(ValueError):
        ReconConfig(sides=2)


def test_resample_examples():
    seg = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    out = resample_segment(seg, 0.25)
    assert len(out) == 5
    np.testing.assert_array_equal(out[0], seg[0])
    np.testing.assert_array_equal(out[-1], seg[-1])
    np.testing.assert_array_equal(resample_segment(seg, 5.0), seg)
    single = np.array([[1.0, 2, 3]])
    np.testing.assert_array_equal(resample_segment(single, 0.1), single)


def test_resample_length_and_spacing(rng):
    t = np.linspace(0, 2, 40)
    poly = np.column_stack([5 * np.cos(t), 5 * np.sin(t), t])
    out = resample_segment(poly, 0.2)
    seglen = lambda p: np.linalg.norm(np.diff(p, axis=0), axis=1)  # noqa: E731
    assert seglen(out).sum() == pytest.approx(seglen(poly).sum(), rel=0.01)
    assert seglen(out).max() <= 0.2 + 1e-12


def test_tube_counts():
    m = tube_mesh([[0, 0, 0], [1, 0, 0]], 0.2, sides=8, caps=False)
    assert len(m.vertices) == 16 and len(m.triangles) == 16
    m = tube_mesh([[0, 0, 0], [1, 0, 0], [2, 1, 0]], 0.2, sides=6, caps=True)
    assert len(m.vertices) == 3 * 6 + 2 and len(m.triangles) == 2 * 6 * 2 + 2 * 6


def test_straight_tube_is_cylinder():
    pts = np.column_stack([np.linspace(0, 3, 7), np.full(7, 0.5), np.full(7, -1.0)])
    m = tube_mesh(pts, 0.3, sides=12, caps=False)
    d = np.hypot(m.vertices[:, 1] - 0.5, m.vertices[:, 2] + 1.0)
    np.testing.assert_allclose(d, 0.3, atol=1e-6)


def test_bend_has_no_flipped_triangles():
    a = np.linspace(0, np.pi / 2, 20)
    pts = np.column_stack([np.cos(a) * 5, np.sin(a) * 5, np.zeros(20)])
    m = tube_mesh(pts, 0.5, sides=8, caps=True)
    n = triangle_normals(m)
    side = 2 * 8 * 19
    centroid = m.vertices[m.triangles[:side]].mean(axis=1)
    # side walls face away from the nearest axis point
    _, idx = KDTree(pts).query(centroid)
    assert np.all(np.einsum("ij,ij->i", n[:side], centroid - pts[idx]) > 0)
    # caps face backwards at the start and forwards at the end
    tan, _ = transport_frames(pts)
    assert np.all(n[side:side + 8] @ tan[0] < 0)
    assert np.all(n[side + 8:] @ tan[-1] > 0)


def test_transport_frames_orthonormal_no_twist():
    pts = np.column_stack([np.linspace(0, 5, 10), np.zeros(10), np.zeros(10)])
    tan, nor = transport_frames(pts)
    np.testing.assert_allclose(np.einsum("ij,ij->i", tan, nor), 0, atol=1e-12)
    np.testing.assert_allclose(nor, np.repeat(nor[:1], 10, axis=0), atol=1e-12)


def test_mesh_integrity_euler():
    m = tube_mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0.5], [2, 2, 0]], 0.1, sides=8, caps=True)
    assert m.triangles.min() >= 0 and m.triangles.max() < len(m.vertices)
    assert np.all(np.isfinite(m.vertices))
    edges = {tuple(sorted(e)) for t in m.triangles
             for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
    assert len(m.vertices) - len(edges) + len(m.triangles) == 2


def test_tube_errors_and_collapse():
    with pytest.raises(ValueError):
        tube_mesh([[0, 0, 0], [0, 0, 0]], 0.1)
    with pytest.raises(ValueError):
        tube_mesh([[0, 0, 0], [1, 0, 0]], 0.0)
    m = tube_mesh([[0, 0, 0], [0, 0, 0], [1, 0, 0]], 0.1, sides=4, caps=False)
    assert len(m.vertices) == 8


def test_ply_golden_triangle(golden):
    tri = TubeMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]), None)
    assert encode_ply(tri) == (golden / "triangle.ply").read_bytes()


def test_polydata_golden(golden):
    lines = [np.array([[0, 0, 0], [1, 0, 0], [2, 0.5, 0.25]]),
             np.array([[0, 1, 0], [0, 2, 0.125]])]
    assert encode_polydata(lines) == (golden / "two_lines.vtk").read_bytes()


def test_ply_round_trip_and_empty(tmp_path, rng):
    pts = rng.uniform(-10, 10, (50, 3))
    r = rng.uniform(0.1, 1, 50)
    export_ply(PointCloud3(pts, r), tmp_path / "c.ply")
    xyz, rad, faces = parse_ply((tmp_path / "c.ply").read_bytes())
    np.testing.assert_allclose(xyz, pts, atol=5e-7 + 1e-12)
    np.testing.assert_allclose(rad, r, atol=5e-7 + 1e-12)
    assert faces.shape == (0, 3)
    empty = encode_ply(PointCloud3()).decode()
    assert "element vertex 0" in empty and empty.endswith("end_header\n")
    m = tube_mesh([[0, 0, 0], [1, 0, 0]], 0.2)
    _, _, f = parse_ply(encode_ply(m))
    np.testing.assert_array_equal(f, m.triangles)
    np.testing.assert_allclose(load_ply_points(tmp_path / "c.ply"), pts, atol=5e-7 + 1e-12)


def test_export_unwritable(tmp_path):
    with pytest.raises(OSError):
        export_ply(PointCloud3(), tmp_path / "missing" / "x.ply")


def straight_scene(z=0.5):
    xs = np.linspace(8, 56, 49)
    pts = np.column_stack([xs, np.full(49, 32.0), np.full(49, z)])
    return PhantomScene([Branch(pts, np.full(49, 2.5))], 0, (64, 64),
                        PhantomConfig(canvas=(64, 64)))


def test_straight_vessel_round_trip():
    s = rasterize(straight_scene(), noise_level=0.0)
    res = reconstruct(s.seg_gt, s.depth_gt)
    flat = lambda p: p * [1, 1, 0]  # noqa: E731
    d, _ = KDTree(flat(s.centerline_gt)).query(flat(res.cloud.points))
    assert d.max() / res.config.sx <= 1.0
    assert np.abs(res.cloud.points[:, 2] / res.config.sz - 0.5).max() <= 0.02


def test_reconstruct_deterministic_and_scale_equivariant():
    s = make_sample(3, PhantomConfig(canvas=(128, 128)))
    a = reconstruct(s.seg_gt, s.depth_gt)
    b = reconstruct(s.seg_gt, s.depth_gt)
    assert encode_ply(a.mesh) == encode_ply(b.mesh)
    assert encode_polydata(a.polylines) == encode_polydata(b.polylines)
    c = a.config
    big = reconstruct(s.seg_gt, s.depth_gt, ReconConfig(sx=2 * c.sx, sy=2 * c.sy, sz=2 * c.sz))
    np.testing.assert_allclose(big.cloud.points, 2 * a.cloud.points, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(big.mesh.vertices, 2 * a.mesh.vertices, rtol=1e-12, atol=1e-14)


def test_monotone_depth_mapping():
    s = make_sample(2, PhantomConfig(canvas=(128, 128)))
    res = reconstruct(s.seg_gt, s.depth_gt)
    seg = res.graph.segments[0]
    x, y = seg.pixels[len(seg.pixels) // 2]
    before = lift_centerline(res.graph, s.depth_gt, res.config)[0][0]
    d = s.depth_gt.image.data.copy()
    d[y, x] = min(d[y, x] + 0.1, 1.0)
    after = lift_centerline(res.graph, DepthMap(Image2D(d), s.depth_gt.valid), res.config)[0][0]
    hit = (before[:, 0] == x * res.config.sx) & (before[:, 1] == y * res.config.sy)
    assert hit.any() and np.all(after[hit, 2] > before[hit, 2])
    np.testing.assert_array_equal(after[~hit], before[~hit])


@pytest.mark.parametrize("seed", [4, 6, 15])
def test_xy_projection_covers_skeleton(seed):
    s = make_sample(seed, PhantomConfig(canvas=(256, 256)))
    res = reconstruct(s.seg_gt, s.depth_gt)
    ys, xs = np.nonzero(res.skeleton.bits)
    sk = np.column_stack([xs, ys, np.zeros(len(xs))]).astype(float)
    rc = res.cloud.points / [res.config.sx, res.config.sy, 1.0]
    rc[:, 2] = 0
    d, _ = KDTree(rc).query(sk)
    kept = rasterize_graph(res.graph, s.seg_gt.shape)[ys, xs].astype(bool)
    assert d[kept].max() <= 0.5 + 1e-9
    # pixels dropped with pruned spurs touch a kept pixel
    from scipy import ndimage

    grown = ndimage.binary_dilation(rasterize_graph(res.graph, s.seg_gt.shape),
                                    structure=np.ones((3, 3)))
    assert grown[ys, xs].all()
    assert d.max() <= np.sqrt(2) + 0.5


def test_constant_depth_constant_z():
    s = make_sample(1, PhantomConfig(canvas=(128, 128)))
    flat = DepthMap(Image2D(np.where(s.seg_gt.bits, 0.4, 0.0)), s.seg_gt)
    res = reconstruct(s.seg_gt, flat)
    np.testing.assert_allclose(res.cloud.points[:, 2], 0.4 * res.config.sz, rtol=0, atol=1e-15)


def test_invalid_depth_filled_with_warning(caplog):
    s = make_sample(1, PhantomConfig(canvas=(128, 128)))
    valid = s.seg_gt.bits.copy()
    ys, xs = np.nonzero(valid)
    valid[ys[::3], xs[::3]] = 0
    d = DepthMap(s.depth_gt.image, BinaryMask(valid))
    with caplog.at_level(logging.WARNING):
        res = reconstruct(s.seg_gt, d)
    assert res.filled > 0 and "filled" in caplog.text


def test_empty_segmentation(caplog):
    with caplog.at_level(logging.WARNING):
        res = reconstruct(np.zeros((32, 32), np.uint8), DepthMap.full(np.zeros((32, 32))))
    assert len(res.cloud) == 0 and len(res.mesh.triangles) == 0 and "empty" in caplog.text
    with pytest.raises(ValueError):
        reconstruct(np.zeros((32, 32), np.uint8), DepthMap.full(np.zeros((16, 16))))


def test_round_trip_small_suite():
    for seed in range(3):
        s = make_sample(seed, PhantomConfig(canvas=(256, 256)))
        res = reconstruct(s.seg_gt, s.depth_gt)
        assert chamfer(res.cloud, s.centerline_gt) / res.config.sx <= 2.0
