import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldekf.drone import (
    ACC,
    GRAVITY,
    N_STATE,
    VEL,
    YAW,
    YAW_RATE,
    DroneState,
    ImuSample,
    NoiseDensities,
    build_input,
    build_Q,
    process_model,
    propagate,
    rotation,
    transition_matrix,
    window_mean,
    wrap_angle,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_wrap_angle_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    assert wrap_angle(2 * np.pi + 0.25) == pytest.approx(0.25)
    np.testing.assert_allclose(wrap_angle(np.array([-3 * np.pi / 2, 3 * np.pi / 2])), [np.pi / 2, -np.pi / 2])


@given(st.floats(-100, 100))
def test_wrap_angle_range_and_equivalence(theta):
    w = wrap_angle(theta)
    assert -np.pi < w <= np.pi
    assert np.cos(w) == pytest.approx(np.cos(theta), abs=1e-9)
    assert np.sin(w) == pytest.approx(np.sin(theta), abs=1e-9)


def test_transition_matrix_structure():
    dt = 0.1
    A = transition_matrix(dt)
    expect = np.zeros((N_STATE, N_STATE))
    for j in range(3):
        expect[j, j] = 1.0
        expect[j, 3 + j] = dt
        expect[3 + j, 3 + j] = 1.0
        expect[3 + j, 6 + j] = dt
    expect[9, 9] = 1.0
    expect[9, 10] = dt
    np.testing.assert_array_equal(A, expect)


def test_transition_matrix_rejects_negative_dt():
    with pytest.raises(ValueError):
        transition_matrix(-1.0)


def test_constant_acceleration_kinematics():
    dt, steps = 0.05, 40
    p0, v0, a = np.array([1.0, -2.0, 30.0]), np.array([0.5, 0.0, -0.1]), np.array([0.2, -0.3, 0.05])
    x = np.concatenate([p0, v0, a, [0.1, 0.02]])
    u = np.zeros(N_STATE)
    u[ACC] = a
    u[YAW_RATE] = 0.02
    for _ in range(steps):
        x = propagate(x, u, dt)
    k = steps
    np.testing.assert_allclose(x[VEL], v0 + k * a * dt, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(x[:3], p0 + k * v0 * dt + a * dt**2 * k * (k - 1) / 2, rtol=1e-12, atol=1e-13)
    assert x[YAW] == pytest.approx(0.1 + k * 0.02 * dt, rel=1e-12)
    assert x[YAW_RATE] == 0.02


def test_propagate_wraps_yaw():
    x = np.zeros(N_STATE)
    x[YAW], x[YAW_RATE] = 3.1, 1.0
    u = np.zeros(N_STATE)
    u[YAW_RATE] = 1.0
    out = propagate(x, u, 0.1)
    assert out[YAW] == pytest.approx(3.2 - 2 * np.pi)


def test_build_q_example():
    Q = build_Q(NoiseDensities(sigma_a=0.016, g_a=0.002), 1 / 15, floor=False)
    d = np.diag(Q)
    np.testing.assert_allclose(d[VEL], 0.016**2 / 15, rtol=1e-15)
    assert d[YAW_RATE] == pytest.approx(0.002**2 / 15, rel=1e-15)
    assert np.count_nonzero(Q) == 4


def test_build_q_floor_makes_definite():
    Q = build_Q(NoiseDensities(), 1 / 15)
    assert np.linalg.eigvalsh(Q).min() > 0
    raw = build_Q(NoiseDensities(), 1 / 15, floor=False)
    assert np.abs(Q - raw).max() <= 1e-12 * max(raw.max(), 1 / 15) * (1 + 1e-9)


def test_build_q_rejects_bad_dt():
    with pytest.raises(ValueError):
        build_Q(NoiseDensities(), 0.0)


def test_noise_densities_reject_negative():
    with pytest.raises(ValueError, match="sigma_a"):
        NoiseDensities(sigma_a=-1.0)


def test_process_model_matches_propagate(rng):
    pm = process_model(NoiseDensities(), 0.1)
    x, u = rng.standard_normal(N_STATE), rng.standard_normal(N_STATE)
    np.testing.assert_allclose(pm.f(x, u), propagate(x, u, 0.1))
    np.testing.assert_array_equal(pm.F(x), transition_matrix(0.1))


@given(finite, finite, finite, st.floats(-10, 10), st.floats(-5, 5))
def test_drone_state_round_trip(x, y, z, theta, r):
    s = DroneState([x, y, z], [1, 2, 3], [0, 0, 0.5], theta, r)
    v = s.to_vector()
    assert v.shape == (N_STATE,)
    np.testing.assert_array_equal(DroneState.from_vector(v).to_vector(), v)
    assert -np.pi < v[YAW] <= np.pi


def test_rotation_is_counterclockwise():
    np.testing.assert_allclose(rotation(np.pi / 2) @ [1.0, 0.0], [0.0, 1.0], atol=1e-15)


def test_window_mean_linear_signal_exact():
    t = np.linspace(0.01, 0.1, 10)
    v = 3.0 * t + 1.0
    # held constant outside the samples; integrate that piecewise-linear signal by hand
    t0, t1 = 0.0, 0.1
    inner = ((3.0 * t[-1] + 1.0) + (3.0 * t[0] + 1.0)) / 2 * (t[-1] - t[0])
    expect = (inner + (3.0 * t[0] + 1.0) * (t[0] - t0)) / (t1 - t0)
    assert window_mean(t, v, t0, t1)[0] == pytest.approx(expect, rel=1e-13)


def test_window_mean_single_sample_and_empty():
    assert window_mean(np.array([0.5]), np.array([[2.0, 3.0]]), 0.0, 1.0).tolist() == [2.0, 3.0]
    with pytest.raises(ValueError):
        window_mean(np.array([0.1, 0.2]), np.ones(2), 0.3, 0.3)


def test_build_input_rotates_and_removes_gravity():
    t = np.linspace(0.01, 0.1, 10)
    win = {"t": t, "accel": np.tile([1.0, 0.0, GRAVITY + 0.5], (10, 1)), "gyro_z": np.full(10, 0.3)}
    res = build_input(win, np.pi / 2, 0.0, 0.1)
    assert not res.stale and res.count == 10
    np.testing.assert_allclose(res.u[ACC], [0.0, 1.0, 0.5], atol=1e-12)
    assert res.u[YAW_RATE] == pytest.approx(0.3)
    assert np.count_nonzero(res.u[[0, 1, 2, 3, 4, 5, YAW]]) == 0


def test_build_input_accepts_sample_objects():
    samples = [ImuSample(0.05, np.array([0.0, 2.0, GRAVITY]), 0.1)]
    res = build_input(samples, 0.0, 0.0, 0.1)
    np.testing.assert_allclose(res.u[ACC], [0.0, 2.0, 0.0], atol=1e-12)


def test_build_input_stale_window():
    win = {"t": np.array([0.5]), "accel": np.zeros((1, 3)), "gyro_z": np.zeros(1)}
    res = build_input(win, 0.0, 0.0, 0.1)
    assert res.stale and res.count == 0
    assert not res.u.any()


def test_build_input_rejects_unordered_timestamps():
    win = {"t": np.array([0.02, 0.01]), "accel": np.zeros((2, 3)), "gyro_z": np.zeros(2)}
    with pytest.raises(ValueError, match="increasing"):
        build_input(win, 0.0, 0.0, 0.1)


def test_build_input_per_sample_yaw_source():
    t = np.array([0.05, 0.1])
    win = {"t": t, "accel": np.array([[1.0, 0.0, GRAVITY]] * 2), "gyro_z": np.zeros(2)}
    res = build_input(win, 0.0, 0.0, 0.1, yaw_source=np.array([np.pi / 2, np.pi / 2]))
    np.testing.assert_allclose(res.u[ACC], [0.0, 1.0, 0.0], atol=1e-12)
