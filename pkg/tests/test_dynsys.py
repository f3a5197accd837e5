import numpy as np
import pytest

from orbstab.dynsys import (
    ControlAffineSystem,
    OrbitParameterization,
    a_matrix,
    build_system,
    check_jacobians,
    fd_jacobian,
    orbit_tangent,
    registered_systems,
    verify_orbit,
)
from orbstab.errors import DegenerateTangent, MissingJacobian, OrbitNotClosed


def test_tangent_hand_values(bh1):
    _, orbit = bh1
    np.testing.assert_allclose(orbit_tangent(orbit, 0.0), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(orbit_tangent(orbit, np.pi / 2), [0, -1, 0], atol=1e-15)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_circle_tangent_has_constant_speed(a):
    _, orbit = build_system("bh-circle", {"a": a})
    for s in np.linspace(0, 2 * np.pi, 17):
        assert np.linalg.norm(orbit.tangent(s)) == pytest.approx(a, abs=1e-14)


def test_fd_tangent_matches_analytic():
    orbit = OrbitParameterization(xs=lambda s: np.array([2 * np.sin(s), 2 * np.cos(s), 0.0]), s_T=2 * np.pi)
    for s in (0.0, 1.0, 4.0):
        np.testing.assert_allclose(orbit.tangent(s), [2 * np.cos(s), -2 * np.sin(s), 0], atol=1e-9)
        np.testing.assert_allclose(orbit.curvature(s), [-2 * np.sin(s), -2 * np.cos(s), 0], atol=1e-6)


def test_degenerate_tangent():
    orbit = OrbitParameterization(xs=lambda s: np.array([np.sin(s) ** 3, np.cos(s), 0.0]),
                                  dxs=lambda s: np.array([3 * np.sin(s) ** 2 * np.cos(s), -np.sin(s), 0.0]),
                                  s_T=2 * np.pi)
    with pytest.raises(DegenerateTangent):
        orbit_tangent(orbit, 0.0)


def test_open_curve_rejected():
    with pytest.raises(OrbitNotClosed):
        OrbitParameterization(xs=lambda s: np.array([s, 0.0]), s_T=1.0)


@pytest.mark.parametrize("a", [1.0, 2.0])
def test_verify_orbit_on_true_orbit(a):
    rep = verify_orbit(*build_system("bh-circle", {"a": a}))
    assert rep.max_residual < 1e-10
    assert rep.certified


def test_verify_orbit_detects_wrong_system(bh1):
    system, orbit = bh1
    wrong = ControlAffineSystem(3, 1, lambda x: system.drift(x) + np.array([0, 0, 1.0]), system.g)
    rep = verify_orbit(wrong, orbit)
    assert rep.max_residual == pytest.approx(1.0, abs=1e-12)
    assert not rep.certified


def test_a_matrix_hand_values(bh1):
    system, orbit = bh1
    for s in np.linspace(0, 2 * np.pi, 9):
        expected = [[0, 1, np.sin(s)], [-1, 0, np.cos(s)], [0, 0, 0]]
        np.testing.assert_allclose(a_matrix(system, orbit, None, s), expected, atol=1e-14)


def test_a_matrix_linear_system():
    M = np.array([[0.0, 1.0], [-1.0, 0.0]])
    system = ControlAffineSystem(2, 1, lambda x: M @ x, lambda x: np.array([[0.0], [1.0]]))
    orbit = OrbitParameterization(xs=lambda s: np.array([np.sin(s), np.cos(s)]), s_T=2 * np.pi)
    for s in (0.0, 2.0):
        np.testing.assert_allclose(a_matrix(system, orbit, None, s), M, atol=1e-8)


def test_upsilon_prime_flag_no_effect_without_input(bh1):
    system, orbit = bh1
    np.testing.assert_array_equal(
        a_matrix(system, orbit, None, 0.7, True), a_matrix(system, orbit, None, 0.7, False)
    )


def test_driven_system_orbit_and_upsilon_prime():
    system, orbit = build_system("di-circle", {"a": 1.0})
    assert verify_orbit(system, orbit).certified
    A0 = a_matrix(system, orbit, None, 0.3)
    A1 = a_matrix(system, orbit, None, 0.3, include_upsilon_prime=True)
    t = orbit.tangent(0.3)
    # extra term is g upsilon' Gamma
    expected = np.outer([0.0, -np.cos(0.3)], t / (t @ t))
    np.testing.assert_allclose(A1 - A0, expected, atol=1e-12)


def test_fd_jacobian_and_missing_jacobian():
    J = fd_jacobian(lambda x: np.array([x[0] * x[1], np.sin(x[0])]), np.array([0.4, 2.0]))
    np.testing.assert_allclose(J, [[2.0, 0.4], [np.cos(0.4), 0.0]], atol=1e-8)
    with pytest.raises(MissingJacobian):
        fd_jacobian(lambda x: np.array([np.nan]), np.zeros(2))


def test_registered_jacobians_match_fd(bh1):
    system, orbit = bh1
    pts = [orbit.point(s) + 0.1 for s in np.linspace(0, 6, 5)]
    assert check_jacobians(system, pts) < 1e-7
    hs, ho = build_system("hopf")
    assert check_jacobians(hs, [ho.point(1.0), np.array([0.3, -0.8])]) < 1e-7


def test_registry():
    assert {"bh-circle", "hopf", "di-circle"} <= set(registered_systems())
    with pytest.raises(KeyError, match="unknown system"):
        build_system("nope")
    with pytest.raises(KeyError):
        build_system("bh-circle", {"b": 1.0})
    with pytest.raises(ValueError):
        build_system("bh-circle", {"a": -1.0})
