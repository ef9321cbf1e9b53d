import numpy as np
import pytest

from traildiff import autodiff as ad
from traildiff.errors import InvalidArgument, InvalidState
from traildiff.goals import (
    Box,
    Circle,
    KeyframeSet,
    SdfMap,
    composite_goal,
    goal_term,
    keyframe_goal,
    load_world,
    obstacle_goal,
    save_world,
    sdf_eval,
    trajectory_goal,
    ObstacleGoal,
    KeyframeGoal,
    TrajectoryGoal,
)
from traildiff.seq import ABS, NORM, REL, RAW, TrajSeq


def traj(ground, frame=ABS, space=RAW):
    g = np.asarray(ground, dtype=np.float64)
    return TrajSeq(np.vstack([np.zeros(g.shape[1]), g]), frame=frame, space=space)


# -- trajectory goal ----------------------------------------------------------

def test_trajectory_goal_zero_at_reference():
    z = traj(np.random.default_rng(0).standard_normal((2, 9)))
    assert trajectory_goal(z, z, p=1) == 0.0
    assert trajectory_goal(z, z, p=2) == 0.0


def test_trajectory_goal_single_frame_345():
    z = traj([[3.0], [4.0]])
    ref = traj([[0.0], [0.0]])
    assert trajectory_goal(z, ref, p=2) == pytest.approx(5.0, abs=1e-15)
    assert trajectory_goal(z, ref, p=1) == pytest.approx(7.0, abs=1e-15)


def test_trajectory_goal_sums_per_frame_norms():
    # frames (3,4) and (0,2): p=2 -> 5 + 2, p=1 -> 7 + 2
    z = traj([[3.0, 0.0], [4.0, 2.0]])
    ref = traj(np.zeros((2, 2)))
    assert trajectory_goal(z, ref, p=2) == pytest.approx(7.0)
    assert trajectory_goal(z, ref, p=1) == pytest.approx(9.0)


def test_trajectory_goal_length_mismatch():
    with pytest.raises(InvalidArgument, match="length"):
        trajectory_goal(traj(np.zeros((2, 4))), traj(np.zeros((2, 5))))


def test_trajectory_goal_rejects_wrong_tags():
    with pytest.raises(InvalidState):
        trajectory_goal(traj(np.zeros((2, 4)), space=NORM), traj(np.zeros((2, 4))))
    with pytest.raises(InvalidState):
        trajectory_goal(traj(np.zeros((2, 4)), frame=REL), traj(np.zeros((2, 4))))


def test_trajectory_goal_bad_p():
    with pytest.raises(InvalidArgument, match="p must be"):
        trajectory_goal(traj(np.zeros((2, 3))), traj(np.zeros((2, 3))), p=3)


# -- keyframe goal ------------------------------------------------------------

def test_keyframe_goal_hit_exactly_is_zero():
    z = traj([[0.0, 1.0, 2.0, 3.0], [0.0, -1.0, -2.0, -3.0]])
    keys = KeyframeSet.from_pairs([(1, (1.0, -1.0)), (3, (3.0, -3.0))])
    assert keyframe_goal(z, keys) == 0.0


def test_keyframe_goal_examples():
    z = traj(np.zeros((2, 5)))
    one = KeyframeSet.from_pairs([(2, (1.0, 0.0))])
    assert keyframe_goal(z, one, p=1) == pytest.approx(1.0)
    two = KeyframeSet.from_pairs([(0, (1.0, 0.0)), (4, (0.0, 2.0))])
    assert keyframe_goal(z, two, p=1) == pytest.approx(3.0)


def test_keyframe_goal_ignores_unkeyed_frames():
    rng = np.random.default_rng(3)
    z = traj(rng.standard_normal((2, 8)))
    keys = KeyframeSet.from_pairs([(2, (0.0, 0.0))])
    g = KeyframeGoal(keys=keys, p=2).grad(z)
    assert np.all(g[:, [0, 1, 3, 4, 5, 6, 7]] == 0.0)
    assert np.any(g[:, 2] != 0.0)


def test_keyframe_goal_out_of_range():
    keys = KeyframeSet.from_pairs([(7, (0.0, 0.0))])
    with pytest.raises(InvalidArgument, match="outside"):
        keyframe_goal(traj(np.zeros((2, 5))), keys)


def test_keyframe_set_validation():
    with pytest.raises(InvalidArgument, match="strictly increasing"):
        KeyframeSet.from_pairs([(3, (0, 0)), (3, (1, 1))])
    with pytest.raises(InvalidArgument, match="strictly increasing"):
        KeyframeSet.from_pairs([(4, (0, 0)), (2, (1, 1))])
    with pytest.raises(InvalidArgument, match="strictly increasing"):
        KeyframeSet.from_pairs([(-1, (0, 0))])
    with pytest.raises(InvalidArgument, match="locations"):
        KeyframeSet(np.array([1, 2]), np.zeros((3, 2)))


def test_keyframe_mask():
    keys = KeyframeSet.from_pairs([(0, (0, 0)), (3, (0, 0))])
    m = keys.mask(5)
    assert m.tolist() == [1.0, 0.0, 0.0, 1.0, 0.0]
    with pytest.raises(InvalidArgument):
        keys.mask(3)


# -- SDF primitives -----------------------------------------------------------

def test_circle_sdf_examples():
    m = SdfMap((Circle((0.0, 0.0), 1.0),))
    v, g = sdf_eval(m, (2.0, 0.0))
    assert v == pytest.approx(1.0, abs=1e-15)
    assert g == pytest.approx([1.0, 0.0], abs=1e-15)
    v, g = sdf_eval(m, (0.5, 0.0))
    assert v == pytest.approx(-0.5, abs=1e-15)
    assert g == pytest.approx([1.0, 0.0], abs=1e-15)


def test_circle_gradient_is_unit_radial():
    m = SdfMap((Circle((1.0, -2.0), 0.7),))
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rng.standard_normal(2) * 3
        v, g = sdf_eval(m, p)
        assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-12)
        d = p - np.array([1.0, -2.0])
        assert v == pytest.approx(np.linalg.norm(d) - 0.7, abs=1e-12)


def test_box_sdf_regions():
    m = SdfMap((Box((-1.0, -2.0), (1.0, 2.0)),))
    # outside along +x face
    v, g = sdf_eval(m, (3.0, 0.0))
    assert v == pytest.approx(2.0)
    assert g == pytest.approx([1.0, 0.0])
    # outside near a corner: diagonal distance
    v, g = sdf_eval(m, (2.0, 3.0))
    assert v == pytest.approx(np.sqrt(2.0))
    assert g == pytest.approx([1 / np.sqrt(2), 1 / np.sqrt(2)])
    # inside: negative distance to nearest face, gradient along that axis
    v, g = sdf_eval(m, (0.5, 0.0))
    assert v == pytest.approx(-0.5)
    assert g == pytest.approx([1.0, 0.0])
    v, g = sdf_eval(m, (-0.5, 0.0))
    assert g == pytest.approx([-1.0, 0.0])
    v, g = sdf_eval(m, (0.0, 1.5))
    assert v == pytest.approx(-0.5)
    assert g == pytest.approx([0.0, 1.0])


def test_union_takes_min():
    a = Circle((0.0, 0.0), 1.0)
    b = Circle((4.0, 0.0), 1.0)
    m = SdfMap((a, b))
    v, g = sdf_eval(m, (3.2, 0.0))
    # closer to b
    assert v == pytest.approx(-0.2)
    va, _ = sdf_eval(SdfMap((a,)), (3.2, 0.0))
    vb, _ = sdf_eval(SdfMap((b,)), (3.2, 0.0))
    assert v == min(va, vb)
    assert g == pytest.approx([-1.0, 0.0])


def test_sdf_sign_convention_mixed_world():
    m = SdfMap((Circle((0.0, 0.0), 1.0), Box((2.0, -1.0), (4.0, 1.0))))
    assert sdf_eval(m, (0.0, 0.0))[0] < 0      # inside circle
    assert sdf_eval(m, (3.0, 0.0))[0] < 0      # inside box
    assert sdf_eval(m, (1.5, 0.0))[0] > 0      # between them
    assert sdf_eval(m, (1.0, 0.0))[0] == pytest.approx(0.0, abs=1e-15)


def test_sdf_lipschitz():
    m = SdfMap((Circle((0.5, 0.5), 1.2), Box((-3.0, -3.0), (-1.0, -0.5))))
    rng = np.random.default_rng(7)
    pts = rng.uniform(-5, 5, size=(200, 2))
    vals = np.array([sdf_eval(m, p)[0] for p in pts])
    for _ in range(500):
        i, j = rng.integers(0, 200, 2)
        assert abs(vals[i] - vals[j]) <= np.linalg.norm(pts[i] - pts[j]) + 1e-12


def test_primitive_validation():
    with pytest.raises(InvalidArgument, match="radius"):
        Circle((0, 0), 0.0)
    with pytest.raises(InvalidArgument, match="lo < hi"):
        Box((1.0, 0.0), (0.0, 1.0))
    with pytest.raises(InvalidArgument, match="primitive"):
        SdfMap(("wall",))


def test_empty_map_is_all_clear():
    v, g = sdf_eval(SdfMap(()), (0.0, 0.0))
    assert v == np.inf
    assert g.tolist() == [0.0, 0.0]


# -- obstacle goal ------------------------------------------------------------

def world():
    return SdfMap((Circle((0.0, 0.0), 1.0),))


def test_obstacle_goal_saturated_constant_zero_grad():
    # all frames far away: value -M*c_safe, gradient exactly zero
    xs = np.linspace(5.0, 9.0, 6)
    z = traj(np.vstack([xs, np.zeros(6)]))
    assert obstacle_goal(z, world(), 0.5) == pytest.approx(-6 * 0.5)
    g = ObstacleGoal(sdf_map=world(), c_safe=0.5).grad(z)
    assert np.all(g == 0.0)


def test_obstacle_goal_partial_saturation():
    # one frame at SDF 0.1, remaining 4 saturated: -0.1 - 4*0.5
    xs = np.array([1.1, 6.0, 7.0, 8.0, 9.0])
    z = traj(np.vstack([xs, np.zeros(5)]))
    assert obstacle_goal(z, world(), 0.5) == pytest.approx(-0.1 - 4 * 0.5)


def test_obstacle_goal_inside_contributes_positive():
    z = traj(np.array([[0.5], [0.0]]))  # SDF -0.5
    assert obstacle_goal(z, world(), 0.5) == pytest.approx(0.5)


def test_obstacle_goal_grad_matches_clip_contract():
    # gradient zero where SDF >= c_safe, -grad(SDF) where active
    xs = np.array([1.2, 1.5001, 0.5, 3.0])
    z = traj(np.vstack([xs, np.zeros(4)]))
    g = ObstacleGoal(sdf_map=world(), c_safe=0.5).grad(z)
    assert g[:, 1].tolist() == [0.0, 0.0]
    assert g[:, 3].tolist() == [0.0, 0.0]
    assert g[0, 0] == pytest.approx(-1.0)  # active: pushes +x outward, cost falls
    assert g[0, 2] == pytest.approx(-1.0)
    # exactly at the clip bound: no gradient (matches clip_max convention)
    z_edge = traj(np.array([[1.5], [0.0]]))
    g_edge = ObstacleGoal(sdf_map=world(), c_safe=0.5).grad(z_edge)
    assert np.all(g_edge == 0.0)


def test_obstacle_goal_c_safe_validation():
    with pytest.raises(InvalidArgument, match="c_safe"):
        obstacle_goal(traj(np.zeros((2, 3))), world(), 0.0)


# -- composite ----------------------------------------------------------------

def test_composite_single_identity():
    ref = np.zeros((2, 4))
    inner = TrajectoryGoal(ref=ref, p=2)
    comp = composite_goal([inner])
    z = traj(np.random.default_rng(5).standard_normal((2, 4)))
    assert comp.value(z) == inner.value(z)
    assert np.array_equal(comp.grad(z), inner.grad(z))


def test_composite_zero_weight_ignores():
    ref = np.zeros((2, 4))
    a = TrajectoryGoal(ref=ref, p=2)
    b = ObstacleGoal(sdf_map=world(), c_safe=0.5)
    comp = composite_goal([a, b], [1.0, 0.0])
    z = traj(np.random.default_rng(6).standard_normal((2, 4)))
    assert comp.value(z) == pytest.approx(a.value(z), rel=1e-15)
    np.testing.assert_allclose(comp.grad(z), a.grad(z), atol=0)


def test_composite_linearity():
    rng = np.random.default_rng(9)
    ref = rng.standard_normal((2, 6))
    keys = KeyframeSet.from_pairs([(1, (0.3, -0.2)), (4, (1.0, 1.0))])
    goals = [TrajectoryGoal(ref=ref, p=1),
             KeyframeGoal(keys=keys, p=2),
             ObstacleGoal(sdf_map=world(), c_safe=0.4)]
    w = (0.7, 2.0, 1.3)
    comp = composite_goal(goals, w)
    for _ in range(10):
        z = traj(rng.standard_normal((2, 6)) * 2)
        expect = sum(wi * gi.value(z) for gi, wi in zip(goals, w))
        assert comp.value(z) == pytest.approx(expect, abs=1e-12)


def test_composite_length_mismatch():
    with pytest.raises(InvalidArgument, match="weights"):
        composite_goal([TrajectoryGoal(ref=np.zeros((2, 3)))], [1.0, 2.0])


# -- gradients vs finite differences ------------------------------------------

def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_grad(goal, ground, rel=1e-6):
    num = fd_grad(lambda arr: goal.value(arr), ground)
    ana = goal.grad(ground)
    scale = max(np.abs(num).max(), 1.0)
    np.testing.assert_allclose(ana, num, atol=rel * scale, rtol=rel)


def test_fd_trajectory_goal_p2():
    rng = np.random.default_rng(11)
    goal = TrajectoryGoal(ref=rng.standard_normal((2, 7)), p=2)
    check_grad(goal, rng.standard_normal((2, 7)))


def test_fd_trajectory_goal_p1_away_from_kinks():
    rng = np.random.default_rng(12)
    ref = rng.standard_normal((2, 7))
    goal = TrajectoryGoal(ref=ref, p=1)
    ground = ref + np.where(rng.standard_normal((2, 7)) > 0, 1.0, -1.0) * 0.3
    check_grad(goal, ground)


def test_fd_keyframe_goal():
    rng = np.random.default_rng(13)
    keys = KeyframeSet.from_pairs([(0, (1.0, 0.0)), (3, (-0.5, 2.0))])
    goal = KeyframeGoal(keys=keys, p=2)
    check_grad(goal, rng.standard_normal((2, 5)) + 3.0)  # away from exact hits


def test_fd_obstacle_goal_mixed_regions():
    # frames outside, inside, and saturated; none near boundary/medial axis
    m = SdfMap((Circle((0.0, 0.0), 1.0), Box((3.0, -1.0), (5.0, 1.0))))
    goal = ObstacleGoal(sdf_map=m, c_safe=0.5)
    ground = np.array([[1.3, 0.4, 3.5, 8.0],
                       [0.0, 0.1, 0.2, 0.0]])
    check_grad(goal, ground)


def test_fd_composite():
    rng = np.random.default_rng(14)
    comp = composite_goal(
        [TrajectoryGoal(ref=rng.standard_normal((2, 6)), p=2),
         ObstacleGoal(sdf_map=world(), c_safe=0.6)],
        [1.5, 0.8])
    check_grad(comp, rng.standard_normal((2, 6)) * 2 + 4.0)


# -- batched evaluation --------------------------------------------------------

def test_goals_sum_over_batch():
    rng = np.random.default_rng(15)
    batch = rng.standard_normal((3, 2, 6)) + 2.0
    ref = rng.standard_normal((2, 6))
    goal = TrajectoryGoal(ref=ref, p=1)
    total = goal.value(batch)
    assert total == pytest.approx(sum(goal.value(batch[i]) for i in range(3)))
    g = goal.grad(batch)
    assert g.shape == batch.shape
    for i in range(3):
        np.testing.assert_allclose(g[i], goal.grad(batch[i]), atol=0)


def test_obstacle_goal_batched_matches_loop():
    rng = np.random.default_rng(16)
    batch = rng.uniform(-3, 3, size=(4, 2, 5))
    goal = ObstacleGoal(sdf_map=world(), c_safe=0.5)
    assert goal.value(batch) == pytest.approx(
        sum(goal.value(batch[i]) for i in range(4)), rel=1e-14)
    g = goal.grad(batch)
    for i in range(4):
        np.testing.assert_allclose(g[i], goal.grad(batch[i]), atol=0)


def test_ground_shape_validation():
    with pytest.raises(InvalidArgument, match="ground"):
        TrajectoryGoal(ref=np.zeros((2, 4))).value(np.zeros((3, 4)))


# -- autodiff integration ------------------------------------------------------

def test_goal_term_records_gradient():
    rng = np.random.default_rng(17)
    ref = rng.standard_normal((2, 6))
    goal = TrajectoryGoal(ref=ref, p=2)
    ground = rng.standard_normal((2, 6))
    x = ad.param(ground)
    with ad.Tape() as tape:
        loss = goal_term(goal, x)
    ad.backward(tape, loss)
    assert loss.data == pytest.approx(goal.value(ground))
    np.testing.assert_allclose(x.grad, goal.grad(ground), atol=1e-14)


def test_goal_term_scales_through_graph():
    rng = np.random.default_rng(18)
    goal = ObstacleGoal(sdf_map=world(), c_safe=0.5)
    ground = rng.uniform(-2, 2, size=(2, 5))
    x = ad.param(ground)
    with ad.Tape() as tape:
        loss = ad.scale(goal_term(goal, x), 3.0)
    ad.backward(tape, loss)
    np.testing.assert_allclose(x.grad, 3.0 * goal.grad(ground), atol=1e-14)


# -- world file ----------------------------------------------------------------

def test_world_round_trip(tmp_path):
    m = SdfMap((Circle((0.25, -1.5), 0.75), Box((-2.0, -2.0), (2.0, -1.0))))
    keys = KeyframeSet.from_pairs([(0, (0.0, 0.0)), (40, (3.5, -0.125))])
    path = tmp_path / "w.world"
    save_world(path, m, keys)
    m2, k2 = load_world(path)
    assert m2 == m
    np.testing.assert_array_equal(k2.frames, keys.frames)
    np.testing.assert_array_equal(k2.locations, keys.locations)


def test_world_file_comments_and_blanks(tmp_path):
    p = tmp_path / "w.world"
    p.write_text(
        "# scenario 3\n"
        "traildiff-world 1\n"
        "\n"
        "circle 0 0 1   # the roundabout\n"
        "key 5 2.0 3.0\n")
    m, keys = load_world(p)
    assert m.primitives == (Circle((0.0, 0.0), 1.0),)
    assert keys.frames.tolist() == [5]


def test_world_file_errors(tmp_path):
    p = tmp_path / "w.world"
    p.write_text("traildiff-world 2\ncircle 0 0 1\n")
    with pytest.raises(InvalidArgument, match="version"):
        load_world(p)
    p.write_text("circle 0 0 1\n")
    with pytest.raises(InvalidArgument, match="header"):
        load_world(p)
    p.write_text("traildiff-world 1\ntriangle 0 0 1\n")
    with pytest.raises(InvalidArgument, match="bad record"):
        load_world(p)
    p.write_text("traildiff-world 1\ncircle 0 zero 1\n")
    with pytest.raises(InvalidArgument, match="bad record"):
        load_world(p)
    p.write_text("traildiff-world 1\ncircle 0 0\n")
    with pytest.raises(InvalidArgument, match="bad record"):
        load_world(p)
    p.write_text("")
    with pytest.raises(InvalidArgument, match="empty"):
        load_world(p)
