import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldekf import kernels
from fieldekf.camera import (
    DEFAULT_FOCAL,
    CameraIntrinsics,
    CameraMeasurementModel,
    GaussianBumps,
    MapModel,
    PreprocessConfig,
    coord_jacobian,
    equalize_histogram,
    gaussian_blur,
    match_histogram,
    normalize_minmax,
    preprocess,
    render_and_jacobian,
    rotation_and_derivative,
    world_from_image,
    world_from_sensor,
)
from fieldekf.drone import N_STATE, YAW
from fieldekf.errors import TerrainError
from fieldekf.fields import FieldGrid, ImageField
from fieldekf.simulator import generate_map

INTR = CameraIntrinsics(rows=24, cols=32)
STATE_COLUMNS = [0, 1, 2, YAW]


@pytest.fixture(scope="module")
def bump_map():
    return generate_map(40, extent=40.0, pitch=0.1, seed=1, quantize=False)


def state(x=20.0, y=20.0, z=20.0, yaw=0.3):
    s = np.zeros(N_STATE)
    s[:3] = x, y, z
    s[YAW] = yaw
    return s


def flat_map(extent=100.0, elevation=None):
    n = int(extent) + 1
    img = np.full((n, n), 0.5)
    return MapModel(img, (1.0, 1.0), elevation=elevation)


# -- geometry ------------------------------------------------------------------

def test_intrinsics_defaults():
    intr = CameraIntrinsics()
    assert (intr.rows, intr.cols, intr.focal) == (512, 612, 6e-3)
    assert intr.sensor_pitch == pytest.approx(6.1e-3 / 612)
    assert intr.principal == (255.5, 305.5)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(focal=0.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(rows=4, cols=4, principal=(10.0, 1.0))


def test_world_from_image_principal_point_is_below_camera():
    p, outside = world_from_image(state(30, 40, 25), INTR.principal, INTR, flat_map())
    np.testing.assert_allclose(p, [30.0, 40.0])
    assert not outside


def test_world_from_image_one_column_right():
    m = flat_map()
    r0, c0 = INTR.principal
    p, _ = world_from_image(state(30, 40, 25, yaw=0.0), (r0, c0 + 1), INTR, m)
    np.testing.assert_allclose(p, [30.0 + INTR.sensor_pitch * 25 / INTR.focal, 40.0], rtol=1e-14)
    # a quarter turn counter-clockwise sends the image column axis north
    p, _ = world_from_image(state(30, 40, 25, yaw=np.pi / 2), (r0, c0 + 1), INTR, m)
    np.testing.assert_allclose(p, [30.0, 40.0 + INTR.sensor_pitch * 25 / INTR.focal], rtol=1e-14)


@given(st.floats(1.0, 200.0), st.floats(-np.pi, np.pi))
def test_footprint_scales_with_height(h, yaw):
    m = flat_map(500.0)
    corner = (0.0, 0.0)
    p1, _ = world_from_image(state(250, 250, h, yaw), corner, INTR, m)
    p2, _ = world_from_image(state(250, 250, 2 * h, yaw), corner, INTR, m)
    np.testing.assert_allclose(p2 - 250, 2 * (p1 - 250), rtol=1e-12, atol=1e-9)


def test_world_from_sensor_flags_off_map_points():
    p, outside = world_from_sensor(state(1, 1, 50), np.array([[-1e-3, -1e-3], [0.0, 0.0]]), DEFAULT_FOCAL, flat_map())
    assert outside.tolist() == [True, False]


def test_camera_below_terrain_raises():
    elev = np.full((101, 101), 30.0)
    with pytest.raises(TerrainError):
        world_from_sensor(state(50, 50, 20), np.zeros(2), DEFAULT_FOCAL, flat_map(elevation=elev))


def test_rotation_derivative_matches_finite_difference():
    th, h = 0.7, 1e-7
    R, dR = rotation_and_derivative(th)
    fd = (rotation_and_derivative(th + h)[0] - rotation_and_derivative(th - h)[0]) / (2 * h)
    np.testing.assert_allclose(dR, fd, atol=1e-8)
    np.testing.assert_allclose(R @ R.T, np.eye(2), atol=1e-15)


@pytest.mark.parametrize("with_elevation", [False, True])
def test_coord_jacobian_matches_finite_difference(with_elevation):
    xs = np.arange(101.0)
    elev = np.tile(0.1 * xs + 2.0, (101, 1)) + 0.05 * xs[:, None] if with_elevation else None
    m = flat_map(elevation=elev)
    x = state(40.3, 55.7, 35.0, 0.9)
    i = np.array([1.2e-3, -2.1e-3])
    J = coord_jacobian(x, i, DEFAULT_FOCAL, m)
    for j in range(N_STATE):
        d = np.zeros(N_STATE)
        d[j] = 1e-5
        fd = (world_from_sensor(x + d, i, DEFAULT_FOCAL, m)[0] - world_from_sensor(x - d, i, DEFAULT_FOCAL, m)[0]) / 2e-5
        np.testing.assert_allclose(J[:, j], fd, atol=1e-7)
    assert not J[:, [3, 4, 5, 6, 7, 8, 10]].any()


# -- rendering -------------------------------------------------------------------

def _fd_image_jacobian(x, m, evaluate, h=1e-6):
    cols = []
    for j in STATE_COLUMNS:
        d = np.zeros(N_STATE)
        d[j] = h
        cols.append((evaluate(x + d) - evaluate(x - d)) / (2 * h))
    return np.stack(cols, axis=-1)


def test_analytic_jacobian_matches_finite_difference(bump_map):
    m = bump_map.with_mode("analytic")
    x = state()
    img, jac = render_and_jacobian(x, INTR, m)
    fd = _fd_image_jacobian(x, m, lambda s: render_and_jacobian(s, INTR, m)[0].scalar)
    G = jac.values[:, :, 0, :]
    assert img.valid.all()
    assert np.abs(G - fd).max() <= 1e-5 * np.abs(G).max()


def test_raster_render_agrees_with_analytic(bump_map):
    x = state()
    img_r, jac_r = render_and_jacobian(x, INTR, bump_map)
    img_a, jac_a = render_and_jacobian(x, INTR, bump_map.with_mode("analytic"))
    assert np.abs(img_r.scalar - img_a.scalar).max() <= 1e-3
    Ga, Gr = jac_a.values, jac_r.values
    assert np.abs(Gr - Ga).max() <= 1e-2 * np.abs(Ga).max()


def test_jacobian_columns_only_pose():
    _, jac = render_and_jacobian(state(), INTR, flat_map())
    assert jac.state_index.tolist() == STATE_COLUMNS
    assert jac.dense().shape == (24, 32, 1, N_STATE)


@pytest.mark.skipif(len(kernels.available_backends()) < 2, reason="compiled kernels not built")
def test_backends_render_identically(bump_map):
    x = state(18.0, 22.5, 15.0, -1.1)
    a_img, a_jac = render_and_jacobian(x, INTR, bump_map, backend="compiled")
    b_img, b_jac = render_and_jacobian(x, INTR, bump_map, backend="python")
    np.testing.assert_allclose(a_img.scalar, b_img.scalar, atol=1e-12)
    np.testing.assert_allclose(a_jac.values, b_jac.values, atol=1e-10)
    assert np.array_equal(a_img.valid, b_img.valid)


def test_off_map_pixels_are_invalid_with_zero_jacobian(bump_map):
    img, jac = render_and_jacobian(state(1.0, 20.0, 20.0, 0.0), INTR, bump_map)
    assert not img.valid.all() and img.valid.any()
    assert not jac.values[~img.valid].any()
    assert not img.scalar[~img.valid].any()


def test_measurement_model_jacobian_is_derivative_of_blurred_prediction(bump_map):
    m = bump_map.with_mode("analytic")
    model = CameraMeasurementModel(INTR, m, PreprocessConfig(blur_sigma=1.0))
    x = state()
    img, jac = model.evaluate(x)
    fd = _fd_image_jacobian(x, m, lambda s: model.evaluate(s)[0].scalar)
    G = jac.values[:, :, 0, :]
    assert np.abs(G - fd).max() <= 1e-5 * np.abs(G).max()


def test_measurement_model_erodes_validity_near_map_edge(bump_map):
    model = CameraMeasurementModel(INTR, bump_map, PreprocessConfig(blur_sigma=1.0))
    raw, _ = render_and_jacobian(state(1.0, 20.0, 20.0, 0.0), INTR, bump_map)
    img, jac = model.evaluate(state(1.0, 20.0, 20.0, 0.0))
    assert img.valid.sum() < raw.valid.sum()
    assert np.array_equal(img.valid, jac.valid)


def test_map_model_validation():
    with pytest.raises(ValueError):
        MapModel(np.full((4, 4), 1.5), (1.0, 1.0))
    with pytest.raises(ValueError):
        MapModel(np.zeros(4), (1.0, 1.0))
    with pytest.raises(ValueError):
        MapModel(np.zeros((4, 4)), (1.0, 1.0), mode="analytic")
    with pytest.raises(ValueError):
        MapModel(np.zeros((4, 4)), (1.0, 1.0), elevation=np.zeros((3, 3)))


def test_map_extent_and_query_corners():
    m = MapModel(np.array([[0.0, 1.0], [0.5, 0.25]]), (2.0, 3.0), origin=(10.0, 5.0))
    assert m.extent == (3.0, 2.0)
    val, _, inside = m.query(np.array([5.0, 8.0, 5.0, 20.0]), np.array([10.0, 10.0, 12.0, 10.0]))
    np.testing.assert_allclose(val, [0.0, 1.0, 0.5, 0.0])
    assert inside.tolist() == [True, True, True, False]


def test_gaussian_bumps_gradient_matches_finite_difference():
    b = GaussianBumps([[0.0, 0.0], [1.0, 2.0]], [1.0, 0.5], [1.0, -0.4], offset=0.1, gain=2.0)
    x, y, h = 0.3, 1.1, 1e-6
    _, g = b.evaluate(x, y)
    fx = (b.evaluate(x + h, y)[0] - b.evaluate(x - h, y)[0]) / (2 * h)
    fy = (b.evaluate(x, y + h)[0] - b.evaluate(x, y - h)[0]) / (2 * h)
    np.testing.assert_allclose(g, [fx, fy], rtol=1e-7)


# -- preprocessing ------------------------------------------------------------------

def test_blur_preserves_constant_and_mass(rng):
    np.testing.assert_allclose(gaussian_blur(np.full((9, 9), 0.3), 1.5), 0.3)
    img = np.zeros((41, 41))
    img[20, 20] = 1.0
    out = gaussian_blur(img, 1.0)
    assert out.sum() == pytest.approx(1.0)
    assert out[20, 24] > 0 and out[20, 25] == 0  # radius 4 sigma
    assert gaussian_blur(img, 0.0) is img


def test_normalize_minmax_maps_to_unit_interval(rng):
    img = rng.uniform(0.2, 0.7, (10, 10))
    out = normalize_minmax(img)
    assert out.min() == 0.0 and out.max() == 1.0
    assert normalize_minmax(np.full((3, 3), 0.4)).tolist() == np.full((3, 3), 0.4).tolist()


def test_equalize_flattens_histogram(rng):
    img = rng.beta(2.0, 8.0, (200, 200))
    out = equalize_histogram(img)
    hist, _ = np.histogram(out, bins=10, range=(0, 1))
    assert np.abs(hist / out.size - 0.1).max() < 0.02


def test_match_histogram_to_self_is_near_identity(rng):
    img = rng.uniform(0, 1, (64, 64))
    out = match_histogram(img, img)
    assert np.abs(out - img).max() <= 1.0 / 256 + 1e-12


def test_match_histogram_moves_toward_reference(rng):
    img = rng.uniform(0.0, 0.5, (64, 64))
    ref = rng.uniform(0.5, 1.0, (64, 64))
    out = match_histogram(img, ref)
    assert abs(out.mean() - ref.mean()) < 0.01


def test_preprocess_leaves_invalid_pixels_untouched(rng):
    grid = FieldGrid((8, 8))
    data = rng.uniform(0.2, 0.6, (8, 8))
    valid = np.ones((8, 8), bool)
    valid[0] = False
    out = preprocess(ImageField(grid, data, valid), PreprocessConfig(blur_sigma=0.0, normalize=True))
    np.testing.assert_array_equal(out.scalar[0], data[0])
    assert out.scalar[valid].min() == 0.0 and out.scalar[valid].max() == 1.0
