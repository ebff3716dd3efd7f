import numpy as np
import pytest
from scipy.stats import chi2
# custom fxs
from scripts.geom import rot_exp
from scripts.magmodel import (ArrayGeometry, PoseDelta, SIGMA_MIN, anchor_set_from_points, build_model,
                              eval_field, field_jacobian_stack, fit_theta, make_anchors, phi, phi_stack,
                              residual_variance, stacked_phi, transport_jacobians, transport_matrix,
                              transport_theta, uniform_theta)
from scripts.utils.errors import DegenerateAnchorError, DegenerateGeometryError

FD_STEP = 1e-5


def cloud_geometry(rng, n=40, half_width=0.2):
    """ non-planar array, enough anchors for the higher orders """
    return ArrayGeometry(positions=rng.uniform(-half_width, half_width, (n, 3)), name="cloud")


def fd_field_jacobian(model, theta, points, h=FD_STEP):
    """ central differences of M(r; theta), shape (n, 3, 3) with [n, i, j] = dM_i/dr_j """
    out = np.empty((points.shape[0], 3, 3))
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        plus = phi_stack(model, points + step) @ theta
        minus = phi_stack(model, points - step) @ theta
        out[:, :, j] = (plus - minus) / (2 * h)
    return out


def inverse_delta(psi):
    return PoseDelta(dp=-rot_exp(psi.dphi).T @ psi.dp, dphi=-psi.dphi)


# ----- BASIS ----------------------------------------------------------------#
@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_dimension_identities(order):
    model = build_model(order)
    assert model.kappa == order ** 2 + 4 * order + 3
    assert model.L == (order + 4) * (order + 3) * (order + 2) // 6 - 1
    assert np.linalg.matrix_rank(model.D) == model.L - model.kappa


@pytest.mark.parametrize("order", [1, 2, 3])
def test_null_space_basis(order):
    model = build_model(order)
    np.testing.assert_allclose(model.D @ model.Dperp, 0.0, atol=1e-10)
    np.testing.assert_allclose(model.Dperp.T @ model.Dperp, np.eye(model.kappa), atol=1e-12)


def test_basis_is_deterministic():
    a, b = build_model(2), build_model(2)
    np.testing.assert_array_equal(a.Dperp, b.Dperp)
    np.testing.assert_array_equal(a.exponents[:3], np.eye(3, dtype=int))


def test_rejects_order_below_one():
    with pytest.raises(ValueError):
        build_model(0)


def test_phi_at_origin_is_uniform_field_only():
    model = build_model(1)
    Phi = phi(model, np.zeros(3))
    np.testing.assert_allclose(Phi[:, :3], np.eye(3), atol=1e-15)
    np.testing.assert_allclose(Phi[:, 3:], 0.0, atol=1e-15)


def test_uniform_and_zero_fields(rng):
    model = build_model(2)
    m = np.array([15.0, -3.0, -40.0])
    theta = uniform_theta(model, m)
    for r in rng.uniform(-1, 1, (10, 3)):
        np.testing.assert_allclose(eval_field(model, theta, r), m, atol=1e-12)
        np.testing.assert_array_equal(eval_field(model, np.zeros(model.kappa), r), np.zeros(3))


def test_first_order_modes_are_symmetric_traceless_gradients(rng):
    model = build_model(1)
    for mode in range(3, model.kappa):
        theta = np.zeros(model.kappa)
        theta[mode] = 1.0
        r = rng.uniform(-1, 1, 3)
        G = field_jacobian_stack(model, theta, r[None, :])[0]
        np.testing.assert_allclose(G, G.T, atol=1e-12)
        assert abs(np.trace(G)) < 1e-12
        # linear in r with no offset
        np.testing.assert_allclose(eval_field(model, theta, r), G @ r, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_field_is_divergence_and_curl_free(rng, order):
    model = build_model(order)
    for _ in range(20):
        theta = rng.standard_normal(model.kappa)
        scale = np.linalg.norm(theta)
        points = rng.uniform(-0.5, 0.5, (50, 3))
        exact = field_jacobian_stack(model, theta, points)
        assert np.max(np.abs(np.trace(exact, axis1=1, axis2=2))) <= 1e-9 * scale
        numeric = fd_field_jacobian(model, theta, points)
        np.testing.assert_allclose(numeric, exact, atol=1e-6 * scale)
        curl = numeric - numeric.transpose(0, 2, 1)
        assert np.max(np.abs(curl)) <= 1e-6 * scale


# ----- FITTING --------------------------------------------------------------#
def test_fit_recovers_noiseless_coefficients(rng, rect_geometry):
    model = build_model(1)
    theta = rng.standard_normal(model.kappa) * 10
    y = stacked_phi(model, rect_geometry.positions) @ theta
    theta_hat, sigma2 = fit_theta(model, rect_geometry.positions, y)
    np.testing.assert_allclose(theta_hat, theta, atol=1e-10)
    assert sigma2 <= 1e-20


@pytest.mark.parametrize("order", [1, 2])
def test_fit_residual_is_orthogonal_to_regressor(rng, order):
    positions = cloud_geometry(rng).positions
    model = build_model(order)
    X = stacked_phi(model, positions)
    y = rng.standard_normal(X.shape[0]) * 20
    theta_hat, sigma2 = fit_theta(model, positions, y)
    residual = y - X @ theta_hat
    assert np.linalg.norm(X.T @ residual) <= 1e-10 * np.linalg.norm(X) * np.linalg.norm(y)
    assert sigma2 == pytest.approx(residual @ residual / X.shape[0])


def test_fit_rejects_underdetermined_array():
    model = build_model(1)
    positions = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]])
    with pytest.raises(DegenerateGeometryError):
        fit_theta(model, positions, np.zeros(6))


def test_fit_rejects_rank_deficient_array():
    model = build_model(1)
    positions = np.column_stack([np.linspace(-0.1, 0.1, 4), np.zeros(4), np.zeros(4)])
    with pytest.raises(DegenerateGeometryError):
        fit_theta(model, positions, np.zeros(12))


def test_residual_variance_monte_carlo(rect_geometry):
    model = build_model(1)
    X = stacked_phi(model, rect_geometry.positions)
    Xdag = np.linalg.pinv(X)
    rng = np.random.default_rng(7)
    theta = rng.standard_normal(model.kappa) * 10
    n_rows, dof = X.shape[0], X.shape[0] - model.kappa
    sigma = 0.1
    noise = rng.standard_normal((10_000, n_rows))
    y = X @ theta + sigma * noise
    s2 = np.array([residual_variance(X, Xdag, row) for row in y])

    expected = sigma ** 2 * dof / n_rows
    assert np.mean(s2) == pytest.approx(expected, rel=0.01)
    lo, hi = chi2.ppf([0.005, 0.995], dof) * sigma ** 2 / n_rows
    inside = np.mean((s2 >= lo) & (s2 <= hi))
    assert inside > 0.98

    doubled = np.array([residual_variance(X, Xdag, row) for row in X @ theta + 2 * sigma * noise])
    assert np.mean(doubled) / np.mean(s2) == pytest.approx(4.0, rel=0.1)


def test_residual_variance_matches_fit(rng, rect_geometry):
    model = build_model(1)
    X = stacked_phi(model, rect_geometry.positions)
    y = X @ rng.standard_normal(model.kappa) + 0.05 * rng.standard_normal(X.shape[0])
    _, sigma2 = fit_theta(model, rect_geometry.positions, y)
    assert residual_variance(X, np.linalg.pinv(X), y) == pytest.approx(sigma2, rel=1e-9)
    assert SIGMA_MIN > 0


# ----- ANCHORS --------------------------------------------------------------#
def test_default_geometry_anchors(rect_geometry):
    model = build_model(1)
    anchors = make_anchors(model, rect_geometry, "all")
    assert anchors.S == 30
    assert anchors.A.shape == (90, 8)
    assert np.linalg.matrix_rank(anchors.A) == 8
    np.testing.assert_allclose(anchors.Adag @ anchors.A, np.eye(8), atol=1e-8)


def test_minimal_anchor_policy(rect_geometry):
    model = build_model(1)
    anchors = make_anchors(model, rect_geometry, "minimal")
    assert 3 <= anchors.S < 30
    assert np.linalg.matrix_rank(anchors.A) == model.kappa


def test_explicit_anchor_points(rng):
    model = build_model(1)
    points = rng.uniform(-0.2, 0.2, (6, 3))
    geometry = ArrayGeometry(positions=np.zeros((1, 3)), anchors=points)
    anchors = make_anchors(model, geometry)
    np.testing.assert_array_equal(anchors.positions, points)


def test_collinear_anchors_rejected():
    model = build_model(1)
    points = np.column_stack([np.linspace(-0.1, 0.1, 3), np.zeros(3), np.zeros(3)])
    with pytest.raises(DegenerateAnchorError):
        anchor_set_from_points(model, points)
    with pytest.raises(DegenerateAnchorError):
        make_anchors(model, ArrayGeometry(positions=points))


def test_ill_conditioned_anchors_rejected(rect_geometry):
    model = build_model(1)
    with pytest.raises(DegenerateAnchorError):
        make_anchors(model, rect_geometry, "all", max_condition=1.0)


def test_unknown_anchor_policy(rect_geometry):
    with pytest.raises(ValueError):
        make_anchors(build_model(1), rect_geometry, "random")


# ----- TRANSPORT ------------------------------------------------------------#
def test_zero_motion_keeps_coefficients(rng, rect_geometry):
    model = build_model(1)
    anchors = make_anchors(model, rect_geometry)
    theta = rng.standard_normal(model.kappa)
    np.testing.assert_allclose(transport_matrix(model, anchors, PoseDelta.zero()), anchors.A, atol=1e-15)
    np.testing.assert_allclose(transport_theta(model, anchors, PoseDelta.zero(), theta), theta, atol=1e-10)


def test_uniform_field_under_translation_and_rotation(rng, rect_geometry):
    model = build_model(1)
    anchors = make_anchors(model, rect_geometry)
    m = np.array([15.0, 2.0, -40.0])
    theta = uniform_theta(model, m)
    moved = transport_theta(model, anchors, PoseDelta(dp=np.array([0.3, -0.1, 0.05]), dphi=np.zeros(3)), theta)
    np.testing.assert_allclose(moved, theta, atol=1e-10)

    dphi = np.array([0.02, -0.05, 0.3])
    turned = transport_theta(model, anchors, PoseDelta(dp=np.zeros(3), dphi=dphi), theta)
    for r in rng.uniform(-0.3, 0.3, (10, 3)):
        np.testing.assert_allclose(eval_field(model, turned, r), rot_exp(dphi).T @ m, atol=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_transport_matches_direct_reevaluation(rng, order):
    model = build_model(order)
    anchors = make_anchors(model, cloud_geometry(rng))
    theta = rng.standard_normal(model.kappa) * 5
    psi = PoseDelta(dp=rng.uniform(-0.05, 0.05, 3), dphi=rng.uniform(-0.1, 0.1, 3))
    moved = transport_theta(model, anchors, psi, theta)
    R = rot_exp(psi.dphi).T
    for r in rng.uniform(-0.3, 0.3, (10, 3)):
        expected = R @ eval_field(model, theta, R.T @ r + psi.dp)
        np.testing.assert_allclose(eval_field(model, moved, r), expected, atol=1e-8)

    back = transport_theta(model, anchors, inverse_delta(psi), moved)
    np.testing.assert_allclose(back, theta, atol=1e-8)


@pytest.mark.parametrize("order", [1, 2])
def test_transport_is_linear_in_coefficients(rng, order):
    model = build_model(order)
    anchors = make_anchors(model, cloud_geometry(rng))
    psi = PoseDelta(dp=rng.uniform(-0.05, 0.05, 3), dphi=rng.uniform(-0.1, 0.1, 3))
    theta_a, theta_b = rng.standard_normal((2, model.kappa)) * 10
    a, b = 2.5, -0.7
    combined = transport_theta(model, anchors, psi, a * theta_a + b * theta_b)
    separate = (a * transport_theta(model, anchors, psi, theta_a)
                + b * transport_theta(model, anchors, psi, theta_b))
    np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12 * np.abs(separate).max())


def test_transport_jacobians_match_finite_differences(rng, square_geometry):
    model = build_model(1)
    anchors = make_anchors(model, square_geometry)
    h = 1e-6
    for _ in range(100):
        theta = np.concatenate([rng.uniform(-40, 40, 3), rng.uniform(-5, 5, model.kappa - 3)])
        psi = PoseDelta(dp=rng.uniform(-0.02, 0.02, 3), dphi=rng.uniform(-0.05, 0.05, 3))
        J1, J2 = transport_jacobians(model, anchors, psi, theta)
        fd1, fd2 = np.empty_like(J1), np.empty_like(J2)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd1[:, j] = (transport_matrix(model, anchors, PoseDelta(psi.dp + e, psi.dphi)) @ theta
                         - transport_matrix(model, anchors, PoseDelta(psi.dp - e, psi.dphi)) @ theta) / (2 * h)
            fd2[:, j] = (transport_matrix(model, anchors, PoseDelta(psi.dp, psi.dphi + e)) @ theta
                         - transport_matrix(model, anchors, PoseDelta(psi.dp, psi.dphi - e)) @ theta) / (2 * h)
        np.testing.assert_allclose(J1, fd1, atol=1e-5 * max(1.0, np.abs(fd1).max()))
        np.testing.assert_allclose(J2, fd2, atol=1e-5 * max(1.0, np.abs(fd2).max()))


def test_transport_jacobians_degenerate_cases(rng, square_geometry):
    model = build_model(1)
    anchors = make_anchors(model, square_geometry)
    psi = PoseDelta(dp=rng.uniform(-0.02, 0.02, 3), dphi=rng.uniform(-0.05, 0.05, 3))
    J1, _ = transport_jacobians(model, anchors, psi, uniform_theta(model, [15.0, 0.0, -40.0]))
    np.testing.assert_array_equal(J1, np.zeros_like(J1))
    J1, J2 = transport_jacobians(model, anchors, psi, np.zeros(model.kappa))
    np.testing.assert_array_equal(J1, np.zeros_like(J1))
    np.testing.assert_array_equal(J2, np.zeros_like(J2))
