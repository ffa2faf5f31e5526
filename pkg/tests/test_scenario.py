import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subspace_tbd.errors import GenerationFailedError
from subspace_tbd.scenario import (BirthModel, MicArray, MotionModel, RoomConfig,
                                   activity_from_intervals, active_segments,
                                   build_perimeter_array, generate_truth, ncv_propagate,
                                   two_target_activity, sample_birth)


def test_perimeter_array_forty(room):
    mics = build_perimeter_array(room, 40)
    assert len(mics) == 40
    np.testing.assert_allclose(mics.positions[0], [0.0, 0.0])
    np.testing.assert_allclose(mics.positions[10], [3.0, 0.0])
    # spacing 12 m / 40
    np.testing.assert_allclose(mics.positions[1], [0.3, 0.0])


def test_perimeter_array_corners(room):
    mics = build_perimeter_array(room, 4)
    np.testing.assert_allclose(mics.positions, [[0, 0], [3, 0], [3, 3], [0, 3]])


def test_perimeter_array_single(room):
    np.testing.assert_allclose(build_perimeter_array(room, 1).positions, [[0.0, 0.0]])


def test_perimeter_array_rejects_zero(room):
    with pytest.raises(ValueError):
        build_perimeter_array(room, 0)


def _arc_length(p, room):
    x, y = p
    w, h = room.width, room.height
    if y == 0.0 and x < w:
        return x
    if x == w and y < h:
        return w + y
    if y == h and x > 0:
        return w + h + (w - x)
    return 2 * w + h + (h - y)


@settings(max_examples=60, deadline=None)
@given(w=st.floats(0.5, 10.0), h=st.floats(0.5, 10.0), m=st.integers(1, 97))
def test_perimeter_array_invariants(w, h, m):
    room = RoomConfig(w, h)
    pos = build_perimeter_array(room, m).positions
    on_edge = (np.isclose(pos[:, 0], 0) | np.isclose(pos[:, 0], w)
               | np.isclose(pos[:, 1], 0) | np.isclose(pos[:, 1], h))
    assert on_edge.all()
    s = np.array([_arc_length(p, room) for p in pos])
    np.testing.assert_allclose(np.diff(s), room.perimeter / m, rtol=1e-9, atol=1e-9)


def test_mic_array_validation():
    with pytest.raises(ValueError):
        MicArray(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        MicArray(np.array([[0.0, 0.0], [0.0, 0.0]]))


def test_ncv_examples():
    m = MotionModel(dt=0.128, q=0.09)
    np.testing.assert_allclose(ncv_propagate([0, 0, 1, 0], m), [0.128, 0, 1, 0])
    np.testing.assert_allclose(ncv_propagate([1, 2, 0, 0], MotionModel(dt=3.7)), [1, 2, 0, 0])
    out = ncv_propagate([0, 0, 0, 0], m, noise=[1.0, 0.0])
    np.testing.assert_allclose(out, [7.3728e-4, 0.0, 0.01152, 0.0], rtol=1e-12)


def test_ncv_matches_matrix_form(rng):
    m = MotionModel(dt=0.2, q=0.5)
    x = rng.standard_normal((7, 4))
    u = rng.standard_normal((7, 2))
    expected = x @ m.A.T + (m.q * u) @ m.B.T
    np.testing.assert_allclose(ncv_propagate(x, m, u), expected, rtol=1e-13, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10),
       s1=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       s2=st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_ncv_noiseless_linear(a, b, s1, s2):
    m = MotionModel()
    s1, s2 = np.array(s1), np.array(s2)
    lhs = ncv_propagate(a * s1 + b * s2, m)
    rhs = a * ncv_propagate(s1, m) + b * ncv_propagate(s2, m)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_birth_zero_velocity(room, rng):
    s = sample_birth(BirthModel(room, 0.0), rng, 100)
    assert np.all(s[:, 2:] == 0.0)


def test_birth_moments(room):
    s = sample_birth(BirthModel(room, 0.5), np.random.default_rng(7), 100_000)
    assert np.all(np.abs(s[:, :2].mean(axis=0) - 1.5) < 0.02)
    assert 0.49 <= s[:, 2].std() <= 0.51
    assert room.contains(s[:, :2]).all()


def test_activity_helpers():
    act = two_target_activity()
    assert act.shape == (200, 2)
    assert act[:, 0].all() and not act[:100, 1].any() and act[100:, 1].all()
    assert active_segments(act[:, 1]) == [(100, 200)]
    assert active_segments([1, 1, 0, 1]) == [(0, 2), (3, 4)]
    with pytest.raises(ValueError):
        activity_from_intervals(5, [[(3, 7)]])


def test_truth_in_room_and_reproducible(room):
    act = two_target_activity()
    truth = generate_truth(room, act, MotionModel(), BirthModel(room), np.random.default_rng(3))
    valid = act.astype(bool)
    assert room.contains(truth[..., :2])[valid].all()
    again = generate_truth(room, act, MotionModel(), BirthModel(room), np.random.default_rng(3))
    assert np.array_equal(truth, again)
    # surviving frames follow the motion model up to noise entering through B
    m = MotionModel()
    drift = truth[1:100, 0, :2] - (truth[:99, 0, :2] + m.dt * truth[:99, 0, 2:])
    dv = truth[1:100, 0, 2:] - truth[:99, 0, 2:]
    np.testing.assert_allclose(drift, 0.5 * m.dt * dv, atol=1e-12)


def test_truth_second_slot_is_fresh_birth(room):
    act = two_target_activity()
    truth = generate_truth(room, act, MotionModel(), BirthModel(room), np.random.default_rng(3))
    # placeholder before birth is zero and the birth state is not a continuation
    assert np.all(truth[:100, 1] == 0.0)
    assert room.contains(truth[100, 1, :2])


def test_truth_all_invalid(room, rng):
    act = np.zeros((10, 2), dtype=np.uint8)
    truth = generate_truth(room, act, MotionModel(), BirthModel(room), rng)
    assert truth.shape == (10, 2, 4)


def test_truth_static_center(room, rng):
    tiny = RoomConfig(1e-9, 1e-9)
    act = np.ones((20, 1), dtype=np.uint8)
    truth = generate_truth(tiny, act, MotionModel(q=0.0), BirthModel(tiny, 0.0), rng,
                           max_attempts=1)
    np.testing.assert_allclose(truth[:, 0, 2:], 0.0)
    assert np.all(truth[:, 0, :2] == truth[0, 0, :2])


def test_truth_generation_failed(room, rng):
    act = np.ones((200, 1), dtype=np.uint8)
    with pytest.raises(GenerationFailedError):
        generate_truth(room, act, MotionModel(q=50.0), BirthModel(room, 50.0), rng,
                       max_attempts=3)
    with pytest.raises(ValueError):
        generate_truth(room, act, MotionModel(), BirthModel(room), rng, max_attempts=0)
