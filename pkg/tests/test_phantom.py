import json

import numpy as np
import pytest

from octadepth.phantom import (Branch, PhantomConfig, PhantomScene, generate_tree, make_sample,
                               rasterize)


def test_determinism():
    a, b = make_sample(3), make_sample(3)
    np.testing.assert_array_equal(a.angiogram.data, b.angiogram.data)
    np.testing.assert_array_equal(a.depth_gt.image.data, b.depth_gt.image.data)
    np.testing.assert_array_equal(a.centerline_gt, b.centerline_gt)


def test_degenerate_single_branch():
    s = generate_tree(0, PhantomConfig(depth_levels=1, branch_prob=0.0))
    assert len(s.branches) == 1


def test_seed7_branch_count_golden(golden):
    ref = json.loads((golden / "phantom_seed7.json").read_text())
    s = generate_tree(7)
    assert len(s.branches) == ref["n_branches"]
    assert [list(t) for t in s.topology()] == ref["topology"]


@pytest.mark.parametrize("seed", [0, 7, 11])
def test_canvas_scaling_keeps_topology(seed):
    small = generate_tree(seed, PhantomConfig(canvas=(256, 256)))
    big = generate_tree(seed, PhantomConfig(canvas=(512, 512)))
    assert small.topology() == big.topology()


def _line_scene(z_values, canvas=(40, 40)):
    branches = []
    xs = np.linspace(5, 34, 30)
    for i, z in enumerate(z_values):
        if i == 0:
            pts = np.column_stack([xs, np.full(30, 20.0), np.full(30, z)])
        else:
            pts = np.column_stack([np.full(30, 20.0), xs, np.full(30, z)])
        branches.append(Branch(pts, np.full(30, 2.0)))
    return PhantomScene(branches, 0, canvas)


def test_constant_z_branch():
    s = rasterize(_line_scene([0.5]), noise_level=0.0)
    v = s.seg_gt.bits == 1
    assert v.any()
    np.testing.assert_array_equal(s.depth_gt.image.data[v], 0.5)


def test_crossing_takes_nearest():
    s = rasterize(_line_scene([0.3, 0.7]), noise_level=0.0)
    assert s.depth_gt.image.data[20, 20] == 0.3


def test_zero_noise_angiogram_equals_seg():
    s = make_sample(2, PhantomConfig(canvas=(128, 128)), noise_level=0.0)
    np.testing.assert_array_equal(s.angiogram.data, s.seg_gt.bits)


def test_coverage_consistency_and_ranges():
    s = make_sample(4, PhantomConfig(canvas=(128, 128)))
    np.testing.assert_array_equal(s.seg_gt.bits, s.depth_gt.valid.bits)
    assert 0 <= s.angiogram.data.min() and s.angiogram.data.max() <= 1
    d = s.depth_gt.image.data[s.seg_gt.bits == 1]
    assert 0 <= d.min() and d.max() <= 1


def test_monotone_occlusion():
    base = _line_scene([0.3, 0.5])
    lo = rasterize(base, 0.0).depth_gt.image.data
    deeper = _line_scene([0.3, 0.6])
    hi = rasterize(deeper, 0.0).depth_gt.image.data
    assert np.all(hi >= lo)


def test_centerline_in_mm():
    s = make_sample(1)
    sc = generate_tree(1)
    pts = np.concatenate([b.points for b in sc.branches])
    np.testing.assert_allclose(s.centerline_gt, pts * [3 / 512, 3 / 512, 0.5])


def test_config_validation():
    with pytest.raises(ValueError):
        PhantomConfig(radius_root=0.5)
    with pytest.raises(ValueError):
        PhantomConfig(branch_prob=1.5)
