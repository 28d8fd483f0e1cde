import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldekf.drone import N_STATE, NoiseDensities, process_model, transition_matrix
from fieldekf.errors import DivergenceError, GridMismatchError, SingularSpectrumError
from fieldekf.fields import FieldGrid, ImageField, JacobianField
from fieldekf.filter import (
    FilterState,
    IllConditionedWarning,
    LinearFieldModel,
    ProcessModel,
    floor_covariance,
    gain_basis_spectral,
    gain_basis_white,
    gain_field,
    gram_matrix,
    gram_matrix_white,
    innovation,
    posterior_covariance,
    predict_covariance,
    predict_state,
    step,
    update_state,
    update_with_gain,
)
from fieldekf.spectral import StationaryKernel, gaussian_kernel

from conftest import random_spd
from oracles import circulant_covariance, rel, stacked_kf_step


def _linear_problem(rng, n=4, dims=(6, 5), pitch=(1.0, 1.0)):
    grid = FieldGrid(dims, pitch)
    A = np.eye(n) + 0.05 * rng.standard_normal((n, n))
    Q = random_spd(rng, n, 0.01)
    G = rng.standard_normal(dims + (1, n))
    y = rng.standard_normal(dims + (1,))
    return grid, A, Q, G, y


# -- prediction ---------------------------------------------------------------

def test_predict_identity_model():
    model = ProcessModel(lambda x, u: x + u, lambda x: np.eye(2), np.eye(2))
    s = FilterState(np.array([1.0, 2.0]), np.eye(2))
    np.testing.assert_array_equal(predict_state(s, model), [1.0, 2.0])


def test_predict_drone_velocity_moves_position():
    proc = process_model(NoiseDensities(), 1 / 15)
    x = np.zeros(N_STATE)
    x[3] = 15.0
    x_new = predict_state(FilterState(x, np.eye(N_STATE)), proc)
    np.testing.assert_allclose(x_new[:3], [1.0, 0.0, 0.0], atol=1e-14)


def test_predict_drone_matches_dense_matvec(rng):
    dt = 1 / 15
    proc = process_model(NoiseDensities(), dt)
    x = rng.standard_normal(N_STATE) * 0.1
    u = np.zeros(N_STATE)
    u[6:9] = rng.standard_normal(3)
    u[10] = 0.1
    expect = transition_matrix(dt) @ x + u
    np.testing.assert_allclose(predict_state(FilterState(x, np.eye(N_STATE)), proc, u), expect, rtol=1e-14)


def test_predict_nonfinite_raises_divergence():
    model = ProcessModel(lambda x, u: x * np.inf, lambda x: np.eye(2), np.eye(2))
    with pytest.raises(DivergenceError, match="entry 0"):
        predict_state(FilterState(np.ones(2), np.eye(2), k=4), model)


def test_predict_covariance_cases(rng):
    P = random_spd(rng, 3)
    ident = ProcessModel(lambda x, u: x, lambda x: np.eye(3), np.eye(3))
    np.testing.assert_allclose(predict_covariance(FilterState(np.zeros(3), P), ident), P + np.eye(3))
    Q = random_spd(rng, 3)
    zero = ProcessModel(lambda x, u: 0 * x, lambda x: np.zeros((3, 3)), Q)
    np.testing.assert_allclose(predict_covariance(FilterState(np.zeros(3), P), zero), Q, rtol=1e-14)


def test_predict_covariance_drone_oracle(rng):
    proc = process_model(NoiseDensities(), 1 / 15)
    P = random_spd(rng, N_STATE)
    F = transition_matrix(1 / 15)
    expect = F @ P @ F.T + proc.Q
    assert rel(predict_covariance(FilterState(np.zeros(N_STATE), P), proc), expect) < 1e-12


def test_floor_covariance_only_when_needed():
    Q = np.diag([1.0, 0.0, 2.0])
    out = floor_covariance(Q, dt=0.5)
    np.testing.assert_allclose(np.diag(out), [1 + 2e-12, 2e-12, 2 + 2e-12])
    D = np.diag([1.0, 2.0])
    assert np.array_equal(floor_covariance(D), D)


# -- gram matrices and gain bases -------------------------------------------

def test_gram_white_zero_field():
    g = FieldGrid((3, 3))
    J = JacobianField(g, np.zeros((3, 3, 1, 2)), n=2)
    np.testing.assert_array_equal(gram_matrix_white(J, 1.0), np.zeros((2, 2)))


def test_gram_white_single_pixel():
    g = FieldGrid((1, 1))
    J = JacobianField(g, np.array([1.0, 0.0]).reshape(1, 1, 1, 2), n=2)
    np.testing.assert_array_equal(gram_matrix_white(J, 1.0), [[1.0, 0.0], [0.0, 0.0]])


def test_gram_white_matches_stacked_oracle(rng):
    dims, pitch = (5, 7), (0.5, 0.2)
    g = FieldGrid(dims, pitch)
    m, n = 2, 3
    G = rng.standard_normal(dims + (m, n))
    Sigma = random_spd(rng, m)
    H = G.reshape(-1, n)
    Rdisc = np.kron(np.eye(dims[0] * dims[1]), Sigma / g.cell_area)
    expect = H.T @ np.linalg.solve(Rdisc, H)
    got = gram_matrix_white(JacobianField(g, G, n=n), Sigma)
    assert rel(got, expect) < 1e-12


def test_gram_white_singular_sigma():
    J = JacobianField(FieldGrid((2, 2)), np.ones((2, 2, 2, 1)), n=1)
    with pytest.raises(SingularSpectrumError):
        gram_matrix_white(J, np.zeros((2, 2)))


def test_gram_general_single_pixel_arithmetic():
    g = FieldGrid((1, 1), pitch=(0.5, 0.5))
    J = JacobianField(g, np.array([2.0, 3.0]).reshape(1, 1, 1, 2), n=2)
    from fieldekf.filter import GainBasis

    basis = GainBasis(g, 2, np.arange(2), phi=np.array([1.0, 0.0]).reshape(1, 1, 2, 1))
    np.testing.assert_allclose(gram_matrix(basis, J), [[0.5, 0.75], [0.0, 0.0]])


def test_gram_zero_phi():
    g = FieldGrid((3, 3))
    J = JacobianField(g, np.ones((3, 3, 1, 2)), n=2)
    from fieldekf.filter import GainBasis

    basis = GainBasis(g, 2, np.arange(2), phi=np.zeros((3, 3, 2, 1)))
    np.testing.assert_array_equal(gram_matrix(basis, J), np.zeros((2, 2)))


def test_gram_grid_mismatch():
    J = JacobianField(FieldGrid((3, 3)), np.ones((3, 3, 1, 2)), n=2)
    basis = gain_basis_white(JacobianField(FieldGrid((3, 4)), np.ones((3, 4, 1, 2)), n=2), 1.0)
    with pytest.raises(GridMismatchError):
        gram_matrix(basis, J)


def test_spectral_basis_white_sigma_two(rng):
    g = FieldGrid((8, 8))
    G = rng.standard_normal((8, 8, 1, 2))
    J = JacobianField(g, G, n=2)
    basis = gain_basis_spectral(J, StationaryKernel.white(2.0))
    np.testing.assert_allclose(basis.compact(), G.transpose(0, 1, 3, 2) / 2.0, atol=1e-12)


def test_spectral_basis_zero_field():
    g = FieldGrid((8, 8))
    J = JacobianField(g, np.zeros((8, 8, 1, 3)), n=3)
    basis = gain_basis_spectral(J, gaussian_kernel(1.0, radius=3))
    assert np.abs(basis.compact()).max() == 0.0


def test_spectral_basis_gaussian_impulse_matches_dense_solve():
    dims = (16, 16)
    g = FieldGrid(dims)
    kernel = gaussian_kernel(1.0, radius=4)
    G = np.zeros(dims + (1, 1))
    G[5, 9, 0, 0] = 1.0
    phi = gain_basis_spectral(JacobianField(g, G, n=1), kernel).compact()[:, :, 0, 0]
    # discrete model: pixel covariance R_disc, phi = (1/A) R_disc^-1 G
    R = circulant_covariance(kernel.values[:, :, 0, 0], dims)
    expect = np.linalg.solve(R, G.reshape(-1)).reshape(dims) / g.cell_area
    assert rel(phi, expect) < 1e-6


def test_spectral_gram_equals_stacked_oracle_for_correlated_noise(rng):
    dims = (12, 10)
    g = FieldGrid(dims)
    kernel = gaussian_kernel(0.8, variance=0.3, radius=3)
    G = rng.standard_normal(dims + (1, 2))
    J = JacobianField(g, G, n=2)
    S = gram_matrix(gain_basis_spectral(J, kernel), J)
    R = circulant_covariance(kernel.values[:, :, 0, 0], dims)
    H = G.reshape(-1, 2)
    assert rel(S, H.T @ np.linalg.solve(R, H)) < 1e-6


def test_spectral_singular_spectrum_reports_frequency():
    J = JacobianField(FieldGrid((8, 8)), np.ones((8, 8, 1, 1)), n=1)
    with pytest.raises(SingularSpectrumError) as info:
        gain_basis_spectral(J, StationaryKernel(values=np.zeros((3, 3))))
    assert info.value.worst_frequency is not None


def test_white_and_spectral_paths_agree(rng):
    g = FieldGrid((16, 12), pitch=(0.5, 0.5))
    J = JacobianField(g, rng.standard_normal((16, 12, 1, 4)), n=4)
    sigma = 0.01
    white = gain_basis_white(J, sigma)
    spectral = gain_basis_spectral(J, StationaryKernel.white(sigma))
    assert np.abs(white.compact() - spectral.compact()).max() <= 1e-12 * np.abs(white.compact()).max()
    assert rel(gram_matrix(spectral, J), gram_matrix_white(J, sigma)) < 1e-10


def test_gram_state_index_mismatch():
    g = FieldGrid((2, 2))
    J1 = JacobianField(g, np.ones((2, 2, 1, 2)), n=4, state_index=[0, 1])
    J2 = JacobianField(g, np.ones((2, 2, 1, 2)), n=4, state_index=[2, 3])
    with pytest.raises(GridMismatchError):
        gram_matrix(gain_basis_white(J1, 1.0), J2)


# -- covariance update -------------------------------------------------------

def test_posterior_no_information(rng):
    P = random_spd(rng, 4)
    np.testing.assert_allclose(posterior_covariance(P, np.zeros((4, 4))), P, rtol=1e-14)


def test_posterior_scalar_identity():
    np.testing.assert_allclose(posterior_covariance(np.eye(3), np.eye(3)), 0.5 * np.eye(3), rtol=1e-15)


def test_posterior_matches_information_form(rng):
    P = random_spd(rng, 5)
    B = rng.standard_normal((5, 3))
    S = B @ B.T
    expect = np.linalg.inv(np.linalg.inv(P) + S)
    assert rel(posterior_covariance(P, S), expect) < 1e-10


def test_posterior_flags_ill_conditioning():
    P = np.diag([1e8, 1.0])
    S = np.diag([1e8, 0.0])
    state = FilterState(np.zeros(2), np.eye(2))
    with pytest.warns(IllConditionedWarning):
        out = posterior_covariance(P, S, state)
    assert state.ill_conditioned
    assert np.all(np.isfinite(out))


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**32 - 1))
def test_posterior_properties(n, seed):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, n)
    B = rng.standard_normal((n, n))
    S = B @ B.T
    Pk = posterior_covariance(P, S)
    assert np.abs(Pk - Pk.T).max() < 1e-9
    assert np.linalg.eigvalsh(Pk).min() > 0
    # Loewner order: P_prior - P_k is PSD
    assert np.linalg.eigvalsh(P - Pk).min() > -1e-9 * np.abs(P).max()
    resid = np.linalg.inv(Pk) - np.linalg.inv(P) - S
    assert np.linalg.norm(resid) <= 1e-8 * max(np.linalg.norm(S), 1e-12) + 1e-12


# -- innovation and update ----------------------------------------------------

def test_innovation_cases(rng):
    g = FieldGrid((4, 4))
    pred = ImageField(g, rng.random((4, 4)))
    z, bad = innovation(pred, pred)
    assert np.abs(z.data).max() == 0 and bad == 0
    z, _ = innovation(pred.with_data(pred.data + 0.3), pred)
    np.testing.assert_allclose(z.data, 0.3)
    meas = ImageField(g, rng.random((4, 4)))
    z, _ = innovation(meas, pred)
    np.testing.assert_array_equal(z.data, meas.data - pred.data)


def test_innovation_zeroes_invalid_pixels(rng):
    g = FieldGrid((3, 3))
    valid = np.ones((3, 3), bool)
    valid[0, :] = False
    pred = ImageField(g, rng.random((3, 3)), valid)
    z, bad = innovation(ImageField(g, rng.random((3, 3))), pred)
    assert bad == 3
    assert np.all(z.data[0] == 0)


def test_innovation_grid_mismatch():
    with pytest.raises(GridMismatchError):
        innovation(ImageField.zeros(FieldGrid((2, 2))), ImageField.zeros(FieldGrid((2, 3))))


def test_update_fixed_points_and_linearity(rng):
    g = FieldGrid((6, 6), pitch=(0.5, 0.5))
    J = JacobianField(g, rng.standard_normal((6, 6, 1, 3)), n=3)
    basis = gain_basis_white(J, 0.1)
    P = random_spd(rng, 3)
    x = rng.standard_normal(3)
    zero = ImageField.zeros(g)
    assert np.array_equal(update_state(x, P, basis, zero), x)
    assert np.array_equal(update_state(x, np.zeros((3, 3)), basis, ImageField(g, rng.random((6, 6)))), x)
    z1 = ImageField(g, rng.standard_normal((6, 6)))
    z2 = ImageField(g, rng.standard_normal((6, 6)))
    d12 = update_state(x, P, basis, z1.with_data(z1.data + z2.data)) - x
    d1 = update_state(x, P, basis, z1) - x
    d2 = update_state(x, P, basis, z2) - x
    np.testing.assert_allclose(d12, d1 + d2, rtol=1e-12, atol=1e-12)


def test_factored_update_equals_materialized_gain(rng):
    g = FieldGrid((5, 4))
    J = JacobianField(g, rng.standard_normal((5, 4, 1, 2)), n=5, state_index=[0, 3])
    basis = gain_basis_white(J, 0.2)
    P = random_spd(rng, 5)
    z = ImageField(g, rng.standard_normal((5, 4)))
    x = rng.standard_normal(5)
    a = update_state(x, P, basis, z)
    b = update_with_gain(x, gain_field(P, basis), z)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_update_nonfinite_raises(rng):
    g = FieldGrid((2, 2))
    J = JacobianField(g, np.ones((2, 2, 1, 1)), n=1)
    z = ImageField(g, np.full((2, 2), np.nan))
    with pytest.raises(DivergenceError):
        update_state(np.zeros(1), np.eye(1), gain_basis_white(J, 1.0), z, k=3)


# -- full steps ----------------------------------------------------------------

def test_step_matches_stacked_kalman_filter(rng):
    grid, A, Q, G, y = _linear_problem(rng, dims=(6, 5), pitch=(0.5, 0.4))
    process = ProcessModel.linear(A, Q)
    meas = LinearFieldModel(grid, G, y)
    sigma = 0.05
    x = rng.standard_normal(4)
    P = random_spd(rng, 4)
    state = FilterState(x, P)
    H = G.reshape(-1, 4)
    R = (sigma / grid.cell_area) * np.eye(H.shape[0])
    xo, Po = x.copy(), P.copy()
    for _ in range(5):
        u = rng.standard_normal(4) * 0.1
        z = rng.standard_normal(grid.dims + (1,))
        state = step(state, process, meas, StationaryKernel.white(sigma), ImageField(grid, z), u=u)
        xo, Po = stacked_kf_step(xo, Po, A, process.Q, u, H, y.reshape(-1), z.reshape(-1), R)
        assert rel(state.x_hat, xo) < 1e-10
        assert rel(state.P, Po) < 1e-10


def test_step_with_correlated_noise_matches_stacked_filter(rng):
    grid, A, Q, G, y = _linear_problem(rng, n=3, dims=(10, 8))
    kernel = gaussian_kernel(0.7, variance=0.2, radius=2)
    process = ProcessModel.linear(A, Q)
    meas = LinearFieldModel(grid, G, y)
    x, P = rng.standard_normal(3), random_spd(rng, 3)
    z = rng.standard_normal(grid.dims + (1,))
    new = step(FilterState(x, P), process, meas, kernel, ImageField(grid, z))
    R = circulant_covariance(kernel.values[:, :, 0, 0], grid.dims)
    xo, Po = stacked_kf_step(x, P, A, process.Q, np.zeros(3), G.reshape(-1, 3), y.reshape(-1), z.reshape(-1), R)
    assert rel(new.x_hat, xo) < 1e-6
    assert rel(new.P, Po) < 1e-6


def test_step_zero_jacobian_is_pure_prediction(rng):
    grid, A, Q, _, y = _linear_problem(rng)
    G = np.zeros(grid.dims + (1, 4))
    process = ProcessModel.linear(A, Q)
    x, P = rng.standard_normal(4), random_spd(rng, 4)
    out = step(FilterState(x, P), process, LinearFieldModel(grid, G, y), StationaryKernel.white(0.1),
               ImageField(grid, rng.random(grid.dims)))
    np.testing.assert_array_equal(out.x_hat, A @ x)
    np.testing.assert_allclose(out.P, A @ P @ A.T + process.Q, rtol=1e-14)


def test_step_retains_prior_quantities(rng):
    grid, A, Q, G, y = _linear_problem(rng)
    process = ProcessModel.linear(A, Q)
    meas = LinearFieldModel(grid, G, y)
    x, P = rng.standard_normal(4), random_spd(rng, 4)
    out = step(FilterState(x, P, k=7), process, meas, StationaryKernel.white(0.1), ImageField(grid, rng.random(grid.dims)))
    assert out.k == 8
    np.testing.assert_allclose(out.x_prior, A @ x)
    np.testing.assert_allclose(out.P_prior, A @ P @ A.T + process.Q)
    assert out.S.shape == (4, 4)


def test_step_zero_innovation_fixed_point(rng):
    grid, A, Q, G, y = _linear_problem(rng)
    process = ProcessModel.linear(A, Q)
    meas = LinearFieldModel(grid, G, y)
    x, P = rng.standard_normal(4), random_spd(rng, 4)
    predicted, _ = meas.evaluate(A @ x)
    out = step(FilterState(x, P), process, meas, StationaryKernel.white(0.1), predicted)
    assert np.abs(out.x_hat - A @ x).max() <= 1e-12


def test_step_attaches_time_index_on_divergence(rng):
    grid, A, Q, G, y = _linear_problem(rng)
    process = ProcessModel.linear(A, Q)
    meas = LinearFieldModel(grid, G, y)
    bad = ImageField(grid, np.full(grid.dims, np.inf))
    with pytest.raises(DivergenceError) as info, warnings.catch_warnings():
        warnings.simplefilter("ignore")
        step(FilterState(np.zeros(4), np.eye(4), k=11), process, meas, StationaryKernel.white(0.1), bad)
    assert info.value.k == 12


def test_parallel_step_agrees_with_deterministic(rng):
    grid, A, Q, G, y = _linear_problem(rng, dims=(20, 20))
    process = ProcessModel.linear(A, Q)
    meas = LinearFieldModel(grid, G, y)
    x, P = rng.standard_normal(4), random_spd(rng, 4)
    z = ImageField(grid, rng.standard_normal(grid.dims))
    a = step(FilterState(x, P), process, meas, StationaryKernel.white(0.1), z, workers=1)
    b = step(FilterState(x, P), process, meas, StationaryKernel.white(0.1), z, workers=4)
    assert rel(b.x_hat, a.x_hat) < 1e-10 and rel(b.P, a.P) < 1e-10


def test_filter_state_rejects_bad_shapes():
    with pytest.raises(ValueError):
        FilterState(np.zeros(3), np.eye(2))


def test_filter_state_symmetrizes():
    P = np.array([[2.0, 1.0], [0.0, 2.0]])
    s = FilterState(np.zeros(2), P)
    np.testing.assert_array_equal(s.P, s.P.T)
