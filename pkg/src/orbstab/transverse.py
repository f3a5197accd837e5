"""Linearized transverse dynamics along a periodic orbit.

Constructions provided:

* the orthogonal-coordinate TVL ``dz = A_perp dz + B_perp u`` with the
  constraint ``Gamma dz = 0``;
* the unconstrained comparison system ``dw = Omega A w + Omega B v``;
* the linearization for an arbitrary (minimal or excessive) set of transverse
  coordinates ``y(s, x)`` paired with a projection operator;
* the minimal-coordinate form in the ``d/ds`` domain;
* the phase-variation rows, the kernel frame ``Phi`` of ``Gamma`` and the
  reduced ``(n-1)``-dimensional pair.

All periodic matrix functions are sampled on a uniform grid and returned as
:class:`~orbstab.periodic.PeriodicLinearSystem` values in the time domain
(``d/dt``) together with ``rho = ds/dt``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm, logm

from .dynsys import ControlAffineSystem, OrbitParameterization, a_matrix, fd_jacobian, state_step, verify_orbit
from .errors import FrameHolonomy, NotAnOrbit, RankDeficient
from .periodic import PeriodicLinearSystem, periodic_derivative
from .projection import ProjectionFrame, frame_at, projection_jacobian

Array = np.ndarray

DEFAULT_GRID = 512


def _ortho_tangent_projector(frame: ProjectionFrame) -> Array:
    t = frame.tangent
    return np.outer(t, t) / float(t @ t)


def a_perp_orthogonal(
    system: ControlAffineSystem, orbit: OrbitParameterization, frame: ProjectionFrame, s: float
) -> Array:
    """``Omega A - (xs' xs'^T / |xs'|^2) A^T`` for the orthogonal projection."""
    A = a_matrix(system, orbit, frame, s)
    return frame.omega @ A - _ortho_tangent_projector(frame) @ A.T


def b_perp(
    system: ControlAffineSystem, orbit: OrbitParameterization, frame: ProjectionFrame, s: float
) -> Array:
    return frame.omega @ system.input_matrix(frame.x_on_orbit)


def _check_orbit(system, orbit, grid_size):
    rep = verify_orbit(system, orbit, max(8, min(grid_size, 256)))
    if not rep.certified:
        raise NotAnOrbit(
            f"orbit residual {rep.max_residual:.3e} at s={rep.s_at_max:.4g} exceeds 1e-8",
            rep.max_residual,
        )


def _frames(system, orbit, grid_size):
    grid = orbit.grid(grid_size)
    return grid, [frame_at(system, orbit, s) for s in grid]


def tvl_orthogonal(
    system: ControlAffineSystem, orbit: OrbitParameterization, grid_size: int = DEFAULT_GRID
) -> PeriodicLinearSystem:
    """Constrained TVL of the orthogonal coordinates, constraint rows ``Gamma``."""
    _check_orbit(system, orbit, grid_size)
    grid, frames = _frames(system, orbit, grid_size)
    A = np.array([a_perp_orthogonal(system, orbit, fr, s) for s, fr in zip(grid, frames)])
    B = np.array([b_perp(system, orbit, fr, s) for s, fr in zip(grid, frames)])
    return PeriodicLinearSystem(
        grid,
        A,
        B,
        np.array([fr.rho for fr in frames]),
        constraint=np.array([fr.gamma[None, :] for fr in frames]),
        omega=np.array([fr.omega for fr in frames]),
        name="tvl",
    )


def comparison_system(
    system: ControlAffineSystem, orbit: OrbitParameterization, grid_size: int = DEFAULT_GRID
) -> PeriodicLinearSystem:
    """Unconstrained comparison system ``dw/dt = Omega A w + Omega B v``."""
    _check_orbit(system, orbit, grid_size)
    grid, frames = _frames(system, orbit, grid_size)
    A = np.array([fr.omega @ a_matrix(system, orbit, fr, s) for s, fr in zip(grid, frames)])
    B = np.array([b_perp(system, orbit, fr, s) for s, fr in zip(grid, frames)])
    return PeriodicLinearSystem(
        grid,
        A,
        B,
        np.array([fr.rho for fr in frames]),
        omega=np.array([fr.omega for fr in frames]),
        name="comparison",
    )


def first_approximation(
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    grid_size: int = DEFAULT_GRID,
    include_upsilon_prime: bool = True,
) -> PeriodicLinearSystem:
    """Variational system ``d/dt dx = A dx + B u`` along the orbit (no constraint)."""
    grid, frames = _frames(system, orbit, grid_size)
    A = np.array(
        [a_matrix(system, orbit, fr, s, include_upsilon_prime) for s, fr in zip(grid, frames)]
    )
    B = np.array([system.input_matrix(fr.x_on_orbit) for fr in frames])
    return PeriodicLinearSystem(
        grid,
        A,
        B,
        np.array([fr.rho for fr in frames]),
        omega=np.array([fr.omega for fr in frames]),
        name="first-approximation",
    )


# --- general transverse coordinates ---


def _rank(M: Array, rtol: float) -> int:
    sv = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def pi_dagger(Pi: Array, omega: Array, N: int | None = None) -> Array:
    """Right inverse of ``Pi`` compatible with the transversality constraint.

    ``N = n-1``: ``Omega Psi^T (Psi Psi^T)^-1`` with ``Psi = Pi Omega``;
    ``N = n``: ``Pi^-1``; ``N > n``: ``(Pi^T Pi)^-1 Pi^T``.
    """
    Pi = np.atleast_2d(np.asarray(Pi, dtype=float))
    omega = getattr(omega, "omega", omega)
    N = Pi.shape[0] if N is None else N
    n = Pi.shape[1]
    if N < n - 1:
        raise RankDeficient(f"N={N} coordinates cannot span the {n - 1}-dimensional transverse plane")
    if _rank(Pi, 1e-9) != min(N, n):
        raise RankDeficient(f"rank(Pi) != min(N, n) = {min(N, n)}")
    if N == n - 1:
        Psi = Pi @ omega
        if _rank(Psi, 1e-9) != n - 1:
            raise RankDeficient("Pi Omega is rank deficient")
        return omega @ Psi.T @ np.linalg.inv(Psi @ Psi.T)
    if N == n:
        return np.linalg.inv(Pi)
    return np.linalg.solve(Pi.T @ Pi, Pi.T)


@dataclass(frozen=True)
class TransverseCoordinateMap:
    """Coordinates ``y(s, x)`` in ``R^N`` paired with a projection operator.

    Missing derivatives fall back to central differences. ``dp`` / ``d2p`` are
    the Jacobian row and Hessian of the projection operator as functions of
    the state; the default is the orthogonal projection onto the orbit.
    """

    N: int
    y: Callable[[float, Array], Array]
    dy_dx: Callable[[float, Array], Array] | None = None
    dy_ds: Callable[[float, Array], Array] | None = None
    dp: Callable[[Array], Array] | None = None
    d2p: Callable[[Array], Array] | None = None
    name: str = ""

    def value(self, s, x) -> Array:
        return np.asarray(self.y(s, x), dtype=float).reshape(self.N)

    def jac_x(self, s, x) -> Array:
        if self.dy_dx is not None:
            return np.asarray(self.dy_dx(s, x), dtype=float).reshape(self.N, -1)
        return fd_jacobian(lambda z: self.value(s, z), x)

    def jac_s(self, s, x, h: float = 1e-5) -> Array:
        if self.dy_ds is not None:
            return np.asarray(self.dy_ds(s, x), dtype=float).reshape(self.N)
        f = lambda t: self.value(t, x)
        return (-f(s + 2 * h) + 8 * f(s + h) - 8 * f(s - h) + f(s - 2 * h)) / (12 * h)

    def gamma(self, orbit: OrbitParameterization, x: Array, hint: float) -> Array:
        if self.dp is not None:
            return np.asarray(self.dp(x), dtype=float).reshape(-1)
        return projection_jacobian(orbit, x, hint)

    def hessian_p(self, orbit: OrbitParameterization, x: Array, hint: float) -> Array:
        if self.d2p is not None:
            return np.asarray(self.d2p(x), dtype=float)
        H = fd_jacobian(lambda z: self.gamma(orbit, z, hint), x, state_step(x, 1e-5))
        return 0.5 * (H + H.T)


def z_perp_map(orbit: OrbitParameterization) -> TransverseCoordinateMap:
    """The excessive coordinates ``z = x - xs(s)`` (N = n) as a coordinate map."""
    n = orbit.dim
    return TransverseCoordinateMap(
        N=n,
        y=lambda s, x: np.asarray(x, dtype=float) - orbit.point(s),
        dy_dx=lambda s, x: np.eye(n),
        dy_ds=lambda s, x: -orbit.tangent(s),
        name="z_perp",
    )


@dataclass
class CoordinateValidation:
    s_grid: Array
    vanishing: Array
    rank_pi: Array
    rank_dy: Array
    passed: bool
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_vanishing_residual": float(np.max(self.vanishing)) if self.vanishing.size else None,
            "min_rank_pi": int(np.min(self.rank_pi)) if self.rank_pi.size else None,
            "min_rank_dy": int(np.min(self.rank_dy)) if self.rank_dy.size else None,
            "failures": self.failures[:20],
        }


def validate_transverse_coords(
    cmap: TransverseCoordinateMap,
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    grid_size: int = 64,
) -> CoordinateValidation:
    """Numerical check that ``cmap`` is a valid set of transverse coordinates."""
    n = orbit.dim
    empty = np.array([])
    if cmap.N < n - 1:
        return CoordinateValidation(
            empty, empty, empty, empty, False, [f"N={cmap.N} < n-1={n - 1}"]
        )
    grid = orbit.grid(grid_size, endpoint=False)
    van, rpi, rdy, fails = [], [], [], []
    for s in grid:
        x = orbit.point(s)
        van.append(float(np.linalg.norm(cmap.value(s, x))))
        Pi = cmap.jac_x(s, x)
        Dy = Pi + np.outer(cmap.jac_s(s, x), cmap.gamma(orbit, x, s))
        rpi.append(_rank(Pi, 1e-7))
        rdy.append(_rank(Dy, 1e-7))
        if van[-1] > 1e-10:
            fails.append(f"s={s:.6g}: y does not vanish on the orbit ({van[-1]:.3e})")
        if rpi[-1] != min(cmap.N, n):
            fails.append(f"s={s:.6g}: rank dy/dx = {rpi[-1]} != {min(cmap.N, n)}")
        if rdy[-1] != n - 1:
            fails.append(f"s={s:.6g}: rank Dy = {rdy[-1]} != {n - 1}")
    return CoordinateValidation(grid, np.array(van), np.array(rpi), np.array(rdy), not fails, fails)


def _general_pieces(cmap, system, orbit, s):
    x = orbit.point(s)
    t = orbit.tangent(s)
    gamma = cmap.gamma(orbit, x, s)
    omega = np.eye(x.size) - np.outer(t, gamma)
    A = a_matrix(system, orbit, None, s)
    rho = float(gamma @ (system.drift(x) + system.input_matrix(x) @ system.upsilon(s)))
    H = cmap.hessian_p(orbit, x, s)
    a_perp = omega @ A - rho * np.outer(t, t @ H)
    Pi = cmap.jac_x(s, x)
    return x, t, gamma, omega, A, rho, a_perp, Pi


def tvl_general(
    cmap: TransverseCoordinateMap,
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    grid_size: int = DEFAULT_GRID,
) -> PeriodicLinearSystem:
    """Linearized dynamics of arbitrary transverse coordinates ``y(s, x)``.

    ``d/dt dy = (Pi A_perp + Xi) Pi^+ dy + Pi B_perp u`` subject to
    ``Gamma Pi^+ dy = 0``, where the Hessian of ``p`` inside ``A_perp`` is taken
    by central differences of its Jacobian.
    """
    _check_orbit(system, orbit, grid_size)
    grid = orbit.grid(grid_size)
    A_s, B_s, C_s, R_s = [], [], [], []
    for s in grid:
        x, t, gamma, omega, A, rho, a_perp, Pi = _general_pieces(cmap, system, orbit, s)
        Pd = pi_dagger(Pi, omega, cmap.N)
        inner = lambda z: cmap.jac_x(s, z) @ t + cmap.jac_s(s, z)
        Xi = rho * fd_jacobian(inner, x, state_step(x, 1e-4))
        A_s.append((Pi @ a_perp + Xi) @ Pd)
        B_s.append(Pi @ omega @ system.input_matrix(x))
        C_s.append((gamma @ Pd)[None, :])
        R_s.append(rho)
    return PeriodicLinearSystem(
        grid, np.array(A_s), np.array(B_s), np.array(R_s), constraint=np.array(C_s), name=f"tvl[{cmap.name}]"
    )


def minimal_tvl(
    cmap: TransverseCoordinateMap,
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    grid_size: int = DEFAULT_GRID,
) -> PeriodicLinearSystem:
    """Linearization of minimal coordinates ``y(x)`` that do not depend on ``s``.

    Returned in the time domain; ``drift_s_domain`` / ``input_s_domain`` give
    ``Df_perp Psi^+ / rho`` and ``g_perp / rho``.
    """
    n = orbit.dim
    if cmap.N != n - 1:
        raise ValueError(f"minimal coordinates need N = n-1 = {n - 1}, got {cmap.N}")
    _check_orbit(system, orbit, grid_size)
    grid = orbit.grid(grid_size)
    A_s, B_s, R_s = [], [], []
    for s in grid:
        x = orbit.point(s)
        if np.linalg.norm(cmap.jac_s(s, x)) > 1e-8:
            raise ValueError("minimal_tvl requires coordinates independent of s")
        ups = system.upsilon(s)
        f_perp = lambda z: cmap.jac_x(s, z) @ (system.drift(z) + system.input_matrix(z) @ ups)
        Psi = cmap.jac_x(s, x)
        if _rank(Psi, 1e-9) != n - 1:
            raise RankDeficient(f"Dy has rank < n-1 at s={s}")
        gamma = cmap.gamma(orbit, x, s)
        A_s.append(fd_jacobian(f_perp, x, state_step(x, 1e-4)) @ np.linalg.pinv(Psi))
        B_s.append(Psi @ system.input_matrix(x))
        R_s.append(float(gamma @ (system.drift(x) + system.input_matrix(x) @ ups)))
    return PeriodicLinearSystem(grid, np.array(A_s), np.array(B_s), np.array(R_s), name=f"minimal[{cmap.name}]")


@dataclass(frozen=True)
class PhaseVariation:
    """Rows of ``d/dt dpsi = state_row(s) dy + input_row(s) u``."""

    s_grid: Array
    state_row: Array
    input_row: Array

    def rate(self, k: int, dy: Array, u: Array) -> float:
        return float(self.state_row[k] @ dy + self.input_row[k] @ u)


def phase_variation_system(
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    cmap: TransverseCoordinateMap | None = None,
    grid_size: int = DEFAULT_GRID,
) -> PhaseVariation:
    """First approximation of the phase drift ``psi = int (sdot - rho(s))``."""
    cmap = z_perp_map(orbit) if cmap is None else cmap
    grid = orbit.grid(grid_size)
    rows, inrows = [], []
    for s in grid:
        x, t, gamma, omega, A, rho, a_perp, Pi = _general_pieces(cmap, system, orbit, s)
        Pd = pi_dagger(Pi, omega, cmap.N)
        rows.append(gamma @ (A - a_perp) @ Pd)
        inrows.append(gamma @ system.input_matrix(x))
    return PhaseVariation(grid, np.array(rows), np.array(inrows))


# --- kernel frame and reduced subsystem ---


@dataclass(frozen=True)
class TransverseFrame:
    """Orthonormal bases ``Phi(s)`` of ``ker Gamma(s)`` on the grid.

    ``holonomy`` is ``Phi(s0)^T Phi_raw(s0 + s_T)`` of the uncorrected
    continuation; when it is a rotation it has been spread over the period so
    that the stored frame closes.
    """

    s_grid: Array
    Phi: Array
    holonomy: Array
    holonomy_angle: float
    orientable: bool

    @property
    def closes(self) -> bool:
        return self.orientable


def _kernel_basis(gamma: Array) -> Array:
    _, _, vt = np.linalg.svd(gamma[None, :])
    return vt[1:].T


def transverse_frame(
    system: ControlAffineSystem, orbit: OrbitParameterization, grid_size: int = DEFAULT_GRID
) -> TransverseFrame:
    """Continuation Gram-Schmidt frame of ``ker Gamma(s)``.

    Each basis is seeded from the previous sample, re-orthonormalized and
    sign-aligned. Any residual rotation after one lap is reported and, if it
    is orientation preserving, distributed smoothly so the frame is periodic.
    """
    grid, frames = _frames(system, orbit, grid_size)
    n = orbit.dim
    Phi = np.empty((grid.size, n, n - 1))
    Phi[0] = _kernel_basis(frames[0].gamma)
    for i in range(1, grid.size):
        g = frames[i].gamma
        P = np.eye(n) - np.outer(g, g) / float(g @ g)
        Q, R = np.linalg.qr(P @ Phi[i - 1])
        Q = Q * np.sign(np.diag(R))[None, :]
        Phi[i] = Q
    H = Phi[0].T @ Phi[-1]
    orientable = bool(np.linalg.det(H) > 0)
    angle = 0.0
    if orientable:
        L = np.real(logm(H.T)) if n > 2 else np.zeros((1, 1))
        angle = float(np.linalg.norm(L) / np.sqrt(2)) if n > 2 else 0.0
        frac = (grid - grid[0]) / (grid[-1] - grid[0])
        for i, c in enumerate(frac):
            Phi[i] = Phi[i] @ expm(c * L)
        Phi[-1] = Phi[0]
    else:
        warnings.warn("kernel frame is not orientable over one period", stacklevel=2)
    return TransverseFrame(grid, Phi, H, angle, orientable)


def reduced_pair(
    system: ControlAffineSystem, orbit: OrbitParameterization, frame: TransverseFrame
) -> PeriodicLinearSystem:
    """``(n-1)``-dimensional transverse subsystem in the coordinates ``xi = Phi^T dz``.

    The drift is ``Phi^T A Phi`` plus the frame connection ``rho Phi'^T Phi``,
    which vanishes for a solution-based frame and makes the geometric frame
    an exact restriction of the constrained TVL.
    """
    if not frame.orientable:
        raise FrameHolonomy("reduced_pair needs a frame that closes over one period")
    grid = frame.s_grid
    dPhi = periodic_derivative(grid, frame.Phi)
    A_s, B_s, R_s = [], [], []
    for i, s in enumerate(grid):
        fr = frame_at(system, orbit, s)
        Ph = frame.Phi[i]
        A_s.append(Ph.T @ a_perp_orthogonal(system, orbit, fr, s) @ Ph + fr.rho * dPhi[i].T @ Ph)
        B_s.append(np.linalg.pinv(Ph) @ system.input_matrix(fr.x_on_orbit))
        R_s.append(fr.rho)
    return PeriodicLinearSystem(grid, np.array(A_s), np.array(B_s), np.array(R_s), name="reduced")
