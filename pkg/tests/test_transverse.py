import warnings

import numpy as np
import pytest

from orbstab.dynsys import ControlAffineSystem, build_system
from orbstab.errors import NotAnOrbit, RankDeficient
from orbstab.floquet import closed_loop_spectrum, controllability_gramian
from orbstab.periodic import GainSchedule, periodic_derivative
from orbstab.projection import frame_at
from orbstab.sim import simulate_linear
from orbstab.transverse import (
    TransverseCoordinateMap,
    a_perp_orthogonal,
    b_perp,
    comparison_system,
    first_approximation,
    minimal_tvl,
    phase_variation_system,
    pi_dagger,
    reduced_pair,
    transverse_frame,
    tvl_general,
    tvl_orthogonal,
    validate_transverse_coords,
    z_perp_map,
)


def sigma_map(a):
    return TransverseCoordinateMap(
        2, lambda s, x: np.array([0.5 * np.log(x[0] ** 2 + x[1] ** 2) - np.log(a) - x[2], x[2]]), name="sigma"
    )


def eq20_drift(a, s):
    return np.array([[0, 1, a * np.sin(s)], [-1, 0, a * np.cos(s)], [0, 0, 0]])


def eq21_drift(a, s):
    return np.array(
        [
            [-np.sin(2 * s) / 2, np.sin(s) ** 2, a * np.sin(s)],
            [-np.cos(s) ** 2, np.sin(2 * s) / 2, a * np.cos(s)],
            [0, 0, 0],
        ]
    )


def test_a_perp_hand_values(bh1):
    system, orbit = bh1
    for s, expected in ((np.pi / 2, [[0, 1, 1], [-1, 0, 0], [0, 0, 0]]), (0.0, [[0, 1, 0], [-1, 0, 1], [0, 0, 0]])):
        np.testing.assert_allclose(a_perp_orthogonal(system, orbit, frame_at(system, orbit, s), s), expected,
                                   atol=1e-14)


def test_gamma_a_perp_identity(bh1, rng):
    system, orbit = bh1
    for s in rng.uniform(0, 2 * np.pi, 5):
        fr = frame_at(system, orbit, s)
        A = system.jacobian_f(fr.x_on_orbit)
        v = rng.normal(size=3)
        t = fr.tangent
        lhs = fr.gamma @ a_perp_orthogonal(system, orbit, fr, s) @ v
        assert lhs == pytest.approx(-(t @ A.T @ v) / (t @ t), abs=1e-13)


def test_b_perp(bh1, rng):
    system, orbit = bh1
    for s in rng.uniform(0, 2 * np.pi, 5):
        fr = frame_at(system, orbit, s)
        B = b_perp(system, orbit, fr, s)
        np.testing.assert_allclose(B[:, 0], [np.sin(s), np.cos(s), 1.0], atol=1e-14)
        assert abs(fr.gamma @ B[:, 0]) < 1e-14
    # input along the tangent is annihilated
    tang = ControlAffineSystem(3, 1, system.f, lambda x: np.array([[x[1]], [-x[0]], [0.0]]))
    fr = frame_at(tang, orbit, 0.4)
    np.testing.assert_allclose(b_perp(tang, orbit, fr, 0.4), 0.0, atol=1e-14)


@pytest.mark.parametrize("a", [1.0, 2.0])
def test_tvl_matches_closed_form(a):
    tvl = tvl_orthogonal(*build_system("bh-circle", {"a": a}), 128)
    for s, A, B in zip(tvl.s_grid, tvl.A, tvl.B):
        np.testing.assert_allclose(A, eq20_drift(a, s), atol=1e-10)
        np.testing.assert_allclose(B[:, 0], [a * np.sin(s), a * np.cos(s), 1.0], atol=1e-10)
    np.testing.assert_allclose(tvl.rho, 1.0, atol=1e-14)


def test_comparison_matches_closed_form(cmp1):
    np.testing.assert_allclose(cmp1.A_at(0.0), [[0, 0, 0], [-1, 0, 1], [0, 0, 0]], atol=1e-12)
    h = np.sqrt(2) / 2
    np.testing.assert_allclose(cmp1.A_at(np.pi / 4), [[-0.5, 0.5, h], [-0.5, 0.5, h], [0, 0, 0]], atol=1e-10)
    for s, A in zip(cmp1.s_grid[::37], cmp1.A[::37]):
        np.testing.assert_allclose(A, eq21_drift(1.0, s), atol=1e-12)


def _periodic_solution_residual(plin, samples):
    d = periodic_derivative(plin.s_grid, samples)
    res = [np.linalg.norm(plin.rho[i] * d[i] - plin.A[i] @ samples[i]) for i in range(len(plin.s_grid))]
    return max(res)


def test_y_parallel_solves_undriven_tvl(bh1, tvl1):
    system, orbit = bh1
    y = np.array([orbit.tangent(s) / (orbit.tangent(s) @ system.drift(orbit.point(s))) for s in tvl1.s_grid])
    assert _periodic_solution_residual(tvl1, y) < 1e-9


def test_tangent_solves_undriven_comparison(bh1, cmp1):
    _, orbit = bh1
    t = np.array([orbit.tangent(s) for s in cmp1.s_grid])
    assert _periodic_solution_residual(cmp1, t) < 1e-9


def test_constraint_preserved_without_input(tvl1):
    trace = simulate_linear(tvl1, None, np.array([0.0, 0.3, -0.4]), periods=1)
    assert trace.max_constraint_drift < 1e-6


def test_not_an_orbit(bh1):
    system, orbit = bh1
    wrong = ControlAffineSystem(3, 1, lambda x: system.drift(x) + np.array([0, 0, 1.0]), system.g)
    with pytest.raises(NotAnOrbit):
        tvl_orthogonal(wrong, orbit, 64)


def test_first_approximation(bh1):
    fa = first_approximation(*bh1, 64)
    np.testing.assert_allclose(fa.A[3], eq20_drift(1.0, fa.s_grid[3]), atol=1e-14)


# --- general coordinates ---


def test_pi_dagger_cases(rng):
    W = np.diag([0.0, 1.0, 1.0])
    np.testing.assert_allclose(pi_dagger(np.eye(3), W), np.eye(3))
    stacked = np.vstack([np.eye(3), np.zeros((2, 3))])
    np.testing.assert_allclose(pi_dagger(stacked, W), np.hstack([np.eye(3), np.zeros((3, 2))]), atol=1e-15)
    G = np.array([1.0, 0.0, 0.0])
    for _ in range(10):
        Pi = rng.normal(size=(2, 3))
        Pd = pi_dagger(Pi, W, 2)
        np.testing.assert_allclose(Pi @ W @ Pd, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(G @ Pd, 0.0, atol=1e-14)
    with pytest.raises(RankDeficient):
        pi_dagger(np.ones((1, 3)), W, 1)


def test_validate_coordinates(bh1):
    system, orbit = bh1
    assert validate_transverse_coords(z_perp_map(orbit), system, orbit).passed
    assert validate_transverse_coords(sigma_map(1.0), system, orbit).passed
    tangential = TransverseCoordinateMap(1, lambda s, x: np.array([orbit.tangent(s) @ (x - orbit.point(s))]))
    rep = validate_transverse_coords(tangential, system, orbit)
    assert not rep.passed and "N=1" in rep.failures[0]


def test_general_tvl_recovers_orthogonal(bh1, tvl1):
    gen = tvl_general(z_perp_map(bh1[1]), *bh1, 512)
    np.testing.assert_allclose(gen.A, tvl1.A, atol=1e-6)
    np.testing.assert_allclose(gen.B, tvl1.B, atol=1e-12)


def test_general_tvl_minimal_pair(bh1):
    gen = tvl_general(sigma_map(1.0), *bh1, 128)
    np.testing.assert_allclose(gen.A, np.broadcast_to([[0, 1], [0, 0]], gen.A.shape), atol=1e-6)
    np.testing.assert_allclose(gen.constraint, 0.0, atol=1e-12)
    spec = closed_loop_spectrum(gen)
    np.testing.assert_allclose(spec.exponents, 0.0, atol=1e-6)


def test_minimal_tvl_double_integrator(bh1):
    mt = minimal_tvl(sigma_map(1.0), *bh1, 128)
    np.testing.assert_allclose(mt.drift_s_domain, np.broadcast_to([[0, 1], [0, 0]], mt.A.shape), atol=1e-6)
    np.testing.assert_allclose(mt.input_s_domain[:, :, 0], np.broadcast_to([0, 1], (129, 2)), atol=1e-10)
    gen = tvl_general(sigma_map(1.0), *bh1, 128)
    np.testing.assert_allclose(mt.drift_s_domain, gen.drift_s_domain, atol=1e-6)


def test_minimal_tvl_time_scaling(bh1):
    system, orbit = bh1
    fast = ControlAffineSystem(3, 1, lambda x: 2 * system.drift(x), system.g, name="fast")
    slow = minimal_tvl(sigma_map(1.0), system, orbit, 64)
    quick = minimal_tvl(sigma_map(1.0), fast, orbit, 64)
    np.testing.assert_allclose(quick.rho, 2 * slow.rho)
    # the drift Df_perp / rho is invariant, the input g_perp / rho halves
    np.testing.assert_allclose(quick.drift_s_domain, slow.drift_s_domain, atol=1e-6)
    np.testing.assert_allclose(quick.input_s_domain, slow.input_s_domain / 2, atol=1e-10)


def test_phase_variation(bh1):
    pv = phase_variation_system(*bh1, grid_size=64)
    assert np.all(np.isfinite(pv.state_row)) and np.all(np.isfinite(pv.input_row))
    np.testing.assert_allclose(pv.input_row, 0.0, atol=1e-14)
    assert pv.rate(3, np.zeros(3), np.zeros(1)) == 0.0


# --- kernel frame and reduced pair ---


def test_transverse_frame(bh1):
    system, orbit = bh1
    fr = transverse_frame(system, orbit, 256)
    assert fr.orientable
    basis0 = fr.Phi[0]
    # columns span {(0,1,0), (0,0,1)} at s = 0
    np.testing.assert_allclose(np.abs(basis0[0]), 0.0, atol=1e-14)
    for s, Ph in zip(fr.s_grid, fr.Phi):
        np.testing.assert_allclose(Ph.T @ Ph, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(frame_at(system, orbit, s).gamma @ Ph, 0.0, atol=1e-12)
    np.testing.assert_allclose(fr.Phi[-1], fr.Phi[0], atol=1e-6)


def test_reduced_pair_spectrum(bh1, K1):
    system, orbit = bh1
    fr = transverse_frame(system, orbit, 512)
    red = reduced_pair(system, orbit, fr)
    assert red.k == 2
    Kred = GainSchedule(fr.s_grid, np.array([K1.at(s) @ Ph for s, Ph in zip(fr.s_grid, fr.Phi)]))
    ex = np.sort(closed_loop_spectrum(red, Kred).real_parts)
    np.testing.assert_allclose(ex, [-np.sqrt(3), -1.0], atol=0.05)
    W = controllability_gramian(red)
    assert np.min(np.linalg.eigvalsh(W)) > 1e-6


def test_reduced_pair_planar_is_scalar():
    system, orbit = build_system("hopf", {"mu": 1.0})
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fr = transverse_frame(system, orbit, 128)
    red = reduced_pair(system, orbit, fr)
    assert red.A.shape[1:] == (1, 1)
    # the Hopf cycle attracts with exponent -2 mu
    assert closed_loop_spectrum(red).real_parts[0] == pytest.approx(-2.0, abs=1e-6)
