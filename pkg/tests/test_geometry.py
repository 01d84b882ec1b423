"""Point/box primitives. The farthest-point sampler is checked against an
independent brute-force greedy oracle over many random instances."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsvg.geometry import (Box3D, GeometryError, ObjectProposal, PointCloud,
                           ViewMeta, ball_group, count_distractors,
                           farthest_point_sample, rotate_box, select_view,
                           synthesize_views)


# -- oracle: greedy farthest-point selection, O(N^2 k), no shared code -------

def fps_oracle(xyz: np.ndarray, k: int, start: int = 0) -> list[int]:
    n = len(xyz)
    chosen = [start]
    while len(chosen) < k:
        # recompute min distance to the chosen set from scratch each round
        best_i, best_d = None, -1.0
        for i in range(n):
            di = min(((xyz[i] - xyz[c]) ** 2).sum() for c in chosen)
            if di > best_d:
                best_i, best_d = i, di
        chosen.append(best_i)
    return chosen


def test_fps_matches_oracle_small_cases():
    r = np.random.default_rng(3)
    for trial in range(40):
        n = int(r.integers(1, 40))
        k = int(r.integers(1, n + 1))
        xyz = r.standard_normal((n, 3))
        got = farthest_point_sample(xyz, k)
        assert got.tolist() == fps_oracle(xyz, k)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 48))
def test_fps_matches_oracle_property(seed, n):
    r = np.random.default_rng(seed)
    xyz = r.standard_normal((n, 3))
    k = int(r.integers(1, n + 1))
    assert farthest_point_sample(xyz, k).tolist() == fps_oracle(xyz, k)


def test_fps_tie_breaks_to_lowest_index():
    # three copies of the same far point: the first copy must win
    xyz = np.array([[0.0, 0, 0], [5.0, 0, 0], [5.0, 0, 0], [5.0, 0, 0]])
    assert farthest_point_sample(xyz, 2).tolist() == [0, 1]


def test_fps_duplicate_points_repeat_the_argmax():
    # all-zero distances: the greedy rule keeps returning the lowest index,
    # matching the oracle (indices may repeat, the point set is what matters)
    xyz = np.zeros((3, 3))
    assert farthest_point_sample(xyz, 3).tolist() == fps_oracle(xyz, 3) == [0, 0, 0]


def test_fps_validates_k():
    with pytest.raises(GeometryError):
        farthest_point_sample(np.zeros((4, 3)), 5)
    with pytest.raises(GeometryError):
        farthest_point_sample(np.zeros((4, 3)), 0)


def test_fps_accepts_point_cloud():
    pts = np.concatenate([np.eye(3) * 4, np.full((3, 3), 0.5)], axis=1)
    pc = PointCloud(pts)
    got = farthest_point_sample(pc, 2)
    assert got.tolist() == fps_oracle(pts[:, :3], 2)


# -- grouping -----------------------------------------------------------------

def test_ball_group_nearest_first_and_capped():
    pts = np.zeros((5, 6))
    pts[:, 0] = [0.0, 0.1, 0.2, 0.9, 3.0]
    pc = PointCloud(pts)
    groups = ball_group(pc, centers=np.array([[0.0, 0.0, 0.0]]), radius=1.0,
                        max_neighbors=3)
    assert groups[0].tolist() == [0, 1, 2]  # 0.9 dropped by the cap, 3.0 by radius


def test_ball_group_empty_ball_falls_back_to_nearest():
    pts = np.zeros((3, 6))
    pts[:, 0] = [5.0, 7.0, 6.0]
    groups = ball_group(PointCloud(pts), centers=np.zeros((1, 3)), radius=0.5,
                        max_neighbors=4)
    assert groups[0].tolist() == [0]


def test_ball_group_requires_positive_radius():
    with pytest.raises(GeometryError):
        ball_group(PointCloud(np.zeros((2, 6))), np.zeros((1, 3)), 0.0, 4)


# -- boxes ---------------------------------------------------------------------

def test_rotate_box_quarter_turn():
    box = Box3D(np.array([1.0, 0.0, 0.5]), np.array([2.0, 1.0, 1.0]), 0.3)
    out = rotate_box(box, np.pi / 2)
    np.testing.assert_allclose(out.center, [0.0, 1.0, 0.5], atol=1e-12)
    assert out.yaw == pytest.approx(0.3 + np.pi / 2)
    np.testing.assert_allclose(out.size, box.size)


def test_rotate_box_full_turn_is_identity():
    box = Box3D(np.array([0.4, -1.2, 0.3]), np.ones(3), 1.0)
    out = box
    for _ in range(4):
        out = rotate_box(out, np.pi / 2)
    np.testing.assert_allclose(out.center, box.center, atol=1e-12)
    assert out.yaw % (2 * np.pi) == pytest.approx(box.yaw % (2 * np.pi))


# -- views ----------------------------------------------------------------------

def _views(counts_by_view):
    return [ViewMeta(view_id=v, visible=dict(c)) for v, c in counts_by_view]


def test_select_view_max_coverage_breaks_ties_low():
    views = _views([(2, {7: 5}), (0, {7: 5}), (1, {7: 3})])
    assert select_view(7, views) == 0


def test_select_view_unseen_object_still_returns_a_view():
    views = _views([(0, {}), (1, {})])
    assert select_view(3, views) == 0


def test_select_view_random_draws_only_nonzero(rng):
    views = _views([(0, {1: 0}), (1, {1: 2}), (2, {1: 9})])
    seen = {select_view(1, views, mode="random", rng=rng) for _ in range(50)}
    assert seen == {1, 2}


def test_select_view_random_requires_rng():
    with pytest.raises(GeometryError):
        select_view(0, _views([(0, {0: 1})]), mode="random")


def test_synthesize_views_counts_are_consistent(rng):
    pts = rng.standard_normal((30, 3))
    objs = [ObjectProposal(object_id=i,
                           cloud=PointCloud(np.concatenate(
                               [pts + 2 * i, np.full((30, 3), 0.5)], axis=1)),
                           box=Box3D(np.array([2.0 * i, 0, 0]), np.ones(3), 0.0),
                           class_name="chair")
            for i in range(3)]
    views = synthesize_views(objs, num_views=4)
    assert [v.view_id for v in views] == [0, 1, 2, 3]
    for v in views:
        assert set(v.visible) <= {0, 1, 2}
        assert all(c >= 0 for c in v.visible.values())
    # each object visible somewhere
    for i in range(3):
        assert any(v.visible.get(i, 0) > 0 for v in views)


def test_count_distractors():
    objs = [ObjectProposal(object_id=i, cloud=PointCloud(np.zeros((1, 6))),
                           box=Box3D(np.zeros(3), np.ones(3), 0.0),
                           class_name=c)
            for i, c in enumerate(["chair", "chair", "table", "chair"])]
    assert count_distractors(objs, 0) == 2
    assert count_distractors(objs, 2) == 0


def test_point_cloud_validation():
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((0, 6)))
    with pytest.raises(GeometryError):
        PointCloud(np.zeros((4, 3)))
    bad = np.zeros((2, 6))
    bad[0, 3] = 1.5  # color channel out of range
    with pytest.raises(GeometryError):
        PointCloud(bad)
