import math

import numpy as np
import pytest

from sthoid.features import (EmbeddingTable, FeatureConfig, FeatureGrid, Skeleton, SkeletonTrajectory,
                             assign_skeletons, behavior_descriptor, body_part_boxes, f_loc, motion_feature,
                             roi_align, roi_pool_frame, semantic_feature, toi_pool)
from sthoid.geometry import Trajectory, TrajectorySpan
from sthoid.pairing import co_occurrent_pairs, split_candidate_segments

from conftest import still_trajectory


def skeleton_in(box, visible=1.0):
    x, y, w, h = box
    rng = np.random.default_rng(0)
    joints = np.column_stack([x + rng.uniform(0.1, 0.9, 17) * w, y + rng.uniform(0.1, 0.9, 17) * h])
    joints[0] = (x + 0.1 * w, y + 0.1 * h)
    joints[1] = (x + 0.9 * w, y + 0.9 * h)
    return Skeleton(joints, np.full(17, visible))


def grid(frame, values, fw=100.0, fh=100.0):
    return FeatureGrid(frame, np.asarray(values, dtype=np.float64), fw, fh)


def segment(n=10, human=(10, 10, 30, 60), obj=(50, 30, 20, 20), category="cup"):
    h = still_trajectory(human, 0, n - 1)
    o = still_trajectory(obj, 0, n - 1, category)
    return split_candidate_segments(co_occurrent_pairs([h, o])[0], n)[0]


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton(np.zeros((16, 2)), np.ones(16))
    with pytest.raises(ValueError):
        Skeleton(np.zeros((17, 2)), np.full(17, 1.5))


def test_assign_skeleton_inside_box():
    h = still_trajectory((10, 10, 40, 80), 0, 4)
    (st,) = assign_skeletons({2: [skeleton_in((10, 10, 40, 80))]}, [h])
    assert list(st.skeletons) == [2]


def test_assign_skeleton_with_no_overlap_is_dropped():
    h = still_trajectory((10, 10, 40, 80), 0, 4)
    (st,) = assign_skeletons({2: [skeleton_in((200, 200, 40, 80))]}, [h])
    assert st.skeletons == {}


def test_assign_skeleton_goes_to_best_overlap():
    sk = skeleton_in((0, 0, 40, 80))
    box = sk.bbox()
    good = still_trajectory(box, 0, 0)
    shifted = still_trajectory((box.x + 0.6 * box.w, box.y, box.w, box.h), 0, 0)
    a, b = assign_skeletons({0: [sk]}, [shifted, good])
    assert a.skeletons == {} and list(b.skeletons) == [0]


def test_one_skeleton_per_trajectory_per_frame():
    box = (0, 0, 40, 80)
    near, far = skeleton_in(box), skeleton_in((10, 0, 40, 80))
    (st,) = assign_skeletons({0: [far, near]}, [still_trajectory(near.bbox(), 0, 0)])
    assert st.skeletons[0] is near


def test_body_part_box_examples():
    host = (0, 0, 100, 100)
    joints = np.full((17, 2), 50.0)
    vis = np.ones(17)
    vis[3] = 0.1
    boxes = body_part_boxes(Skeleton(joints, vis), host, r=0.2, min_visibility=0.3)
    np.testing.assert_allclose(boxes[0], [40, 40, 20, 20])
    np.testing.assert_allclose(boxes[3], host)
    corner = np.zeros((17, 2))
    clipped = body_part_boxes(Skeleton(corner, np.ones(17)), host, 0.2, 0.3, frame_size=(100, 100))
    np.testing.assert_allclose(clipped[0], [0, 0, 10, 10])
    assert np.all(clipped[:, 2:] > 0)
    np.testing.assert_allclose(body_part_boxes(None, host), np.tile(host, (17, 1)))


def test_roi_pool_of_constant_grid_is_constant():
    out = roi_pool_frame(grid(0, np.full((3, 5, 4), 2.5)), (13, 7, 40, 61), out=7)
    assert out.shape == (3, 7, 7)
    np.testing.assert_allclose(out, 2.5, atol=1e-9)


def test_roi_pool_full_frame_reads_cells():
    values = np.arange(2 * 4 * 6, dtype=float).reshape(2, 4, 6)
    out = roi_align(values, [(0, 0, 60, 40)], 60, 40, out=4)
    assert out.shape == (1, 2, 4, 4)
    square = np.arange(16, dtype=float).reshape(1, 4, 4)
    np.testing.assert_allclose(roi_align(square, [(0, 0, 8, 8)], 8, 8, out=4)[0], square)


def test_roi_pool_right_half_of_two_cells():
    out = roi_pool_frame(grid(0, [[[0.0, 1.0]]], fw=2, fh=1), (1, 0, 1, 1), out=3)
    assert np.all(out >= 0.5)


def test_roi_pool_rejects_box_outside_frame():
    with pytest.raises(ValueError):
        roi_pool_frame(grid(0, np.zeros((1, 2, 2))), (200, 200, 5, 5))


def test_toi_pool_examples():
    rng = np.random.default_rng(0)
    a, b = grid(0, rng.uniform(size=(2, 4, 4))), grid(1, rng.uniform(size=(2, 4, 4)))
    box = (10, 10, 50, 50)
    single = toi_pool([a], [box])
    np.testing.assert_allclose(single, roi_pool_frame(a, box).mean(axis=(1, 2)))
    pooled = np.maximum(roi_pool_frame(a, box), roi_pool_frame(b, box)).mean(axis=(1, 2))
    np.testing.assert_allclose(toi_pool([a, b], [box, box]), pooled)
    np.testing.assert_array_equal(toi_pool([grid(0, np.zeros((3, 4, 4)))], [box]), 0)
    with pytest.raises(ValueError):
        toi_pool([], [])


def test_toi_pool_ignores_frame_order_and_duplicates():
    rng = np.random.default_rng(1)
    gs = [grid(k, rng.uniform(size=(3, 5, 5))) for k in range(4)]
    boxes = [tuple(rng.uniform(0, 40, 2)) + (30.0, 30.0) for _ in gs]
    base = toi_pool(gs, boxes)
    np.testing.assert_array_equal(toi_pool(gs[::-1], boxes[::-1]), base)
    np.testing.assert_array_equal(toi_pool(gs + gs[:1], boxes + boxes[:1]), base)


def test_behavior_descriptor_shape_and_constant_grid():
    seg = segment()
    grids = [grid(f, np.full((8, 6, 6), 0.7)) for f in range(10)]
    f_a = behavior_descriptor(seg, None, grids)
    assert f_a.shape == (17 * 8,)
    np.testing.assert_allclose(f_a, 0.7)


def test_behavior_descriptor_without_skeletons_repeats_host_pooling():
    seg = segment()
    rng = np.random.default_rng(2)
    grids = [grid(f, rng.uniform(size=(4, 6, 6))) for f in range(10)]
    f_a = behavior_descriptor(seg, None, grids).reshape(17, 4)
    host = toi_pool(grids, list(seg.human_boxes))
    np.testing.assert_allclose(f_a, np.tile(host, (17, 1)))


def test_behavior_descriptor_follows_joint_order():
    seg = segment()
    rng = np.random.default_rng(3)
    grids = [grid(f, rng.uniform(size=(4, 8, 8))) for f in range(10)]
    sk = Skeleton(np.column_stack([rng.uniform(12, 38, 17), rng.uniform(12, 68, 17)]), np.ones(17))
    perm = rng.permutation(17)
    sk_perm = Skeleton(sk.joints[perm], sk.visibility[perm])
    host = seg.pair.human
    a = behavior_descriptor(seg, SkeletonTrajectory(host, {f: sk for f in range(10)}), grids).reshape(17, 4)
    b = behavior_descriptor(seg, SkeletonTrajectory(host, {f: sk_perm for f in range(10)}), grids).reshape(17, 4)
    np.testing.assert_allclose(b, a[perm])


def test_behavior_descriptor_checks_frame_alignment():
    seg = segment()
    with pytest.raises(ValueError):
        behavior_descriptor(seg, None, [grid(f + 1, np.zeros((1, 2, 2))) for f in range(10)])
    with pytest.raises(ValueError):
        behavior_descriptor(seg, None, [grid(0, np.zeros((1, 2, 2)))])


def test_f_loc_examples():
    np.testing.assert_array_equal(f_loc((3, 4, 5, 6), (3, 4, 5, 6)), np.zeros(5))
    np.testing.assert_allclose(f_loc((10, 10, 20, 20), (20, 10, 10, 20)), [-0.5, 0, math.log(2), 0, math.log(2)])
    with pytest.raises(ValueError):
        f_loc((10, 10, 20, 20), (20, 10, 0, 20))


def test_f_loc_log_terms_negate_under_swap():
    rng = np.random.default_rng(4)
    for _ in range(100):
        h, o = rng.uniform(1, 50, 4), rng.uniform(1, 50, 4)
        np.testing.assert_allclose(f_loc(o, h)[2:], -f_loc(h, o)[2:], atol=1e-12)


def test_motion_feature_examples():
    seg = segment()
    f = motion_feature(seg)
    assert f.shape == (15,)
    np.testing.assert_array_equal(f[5:10], f[:5])
    np.testing.assert_array_equal(f[10:], 0)

    h = still_trajectory((10, 10, 20, 20), 0, 9)
    boxes = np.tile([10.0, 10, 20, 20], (10, 1))
    boxes[-1, 0] = 20
    o = Trajectory(0, boxes, "cup")
    drift = motion_feature(split_candidate_segments(co_occurrent_pairs([h, o])[0], 10)[0])
    np.testing.assert_allclose(drift[10:], [-0.5, 0, 0, 0, 0])


def test_motion_feature_needs_two_frames():
    seg = segment(n=10)
    span = TrajectorySpan(seg.span.begin, seg.span.begin)
    short = type(seg)(seg.pair, span, seg.human_boxes[:1], seg.object_boxes[:1])
    with pytest.raises(ValueError):
        motion_feature(short)


def test_semantic_feature_examples():
    table = EmbeddingTable({"human": [1.0, 2.0], "dog": [3.0, 4.0], "cat": [5.0, 6.0]})
    assert semantic_feature("human", "dog", table).shape == (4,)
    a, b = semantic_feature("human", "dog", table), semantic_feature("human", "cat", table)
    np.testing.assert_array_equal(a[:2], b[:2])
    assert not np.array_equal(a[2:], b[2:])
    with pytest.raises(KeyError, match="zebra"):
        semantic_feature("human", "zebra", table)


def test_embedding_table_rejects_mixed_dimensions():
    with pytest.raises(ValueError):
        EmbeddingTable({"a": [1.0], "b": [1.0, 2.0]})


def test_feature_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(part_ratio=1.5)
    with pytest.raises(ValueError):
        FeatureConfig(num_parts=18)
