"""Orthogonal projection onto the orbit and the moving frame Gamma, Omega, rho.

``p(x)`` returns the parameter ``s`` of the nearest orbit point, characterized
locally by ``xs'(s)^T (x - xs(s)) = 0``. On the orbit its Jacobian is
``Gamma(s) = xs'(s)^T / |xs'(s)|^2`` and ``Omega(s) = I - xs'(s) Gamma(s)`` is
the rank ``n-1`` projector that maps state variations to transverse ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynsys import ControlAffineSystem, OrbitParameterization, orbit_tangent
from .errors import FocalPointReached, NewtonDiverged, ProjectionAmbiguous

Array = np.ndarray

SCAN_POINTS = 256
MAX_NEWTON = 50


@dataclass(frozen=True)
class ProjectionFrame:
    s: float
    x_on_orbit: Array
    tangent: Array
    curvature: Array
    gamma: Array
    omega: Array
    rho: float
    theta: float

    @property
    def n(self) -> int:
        return self.x_on_orbit.size


def _orth_residual(orbit, x, s):
    d = x - orbit.point(s)
    t = orbit.tangent(s)
    r = float(t @ d)
    dr = float(orbit.curvature(s) @ d - t @ t)
    return r, dr


def _newton(orbit: OrbitParameterization, x: Array, s: float) -> float:
    """Newton on the orthogonality residual starting from ``s``; ``s`` is not wrapped."""
    tol = 1e-10 * (1.0 + np.linalg.norm(x))
    for _ in range(MAX_NEWTON):
        r, dr = _orth_residual(orbit, x, s)
        if dr == 0.0 or not np.isfinite(dr):
            raise FocalPointReached(f"orthogonality residual has zero slope at s={s}")
        step = r / dr
        s = s - step
        if abs(r) < tol:
            # one extra step: quadratic convergence takes s to machine precision,
            # which the finite-difference Hessian of p relies on
            r, dr = _orth_residual(orbit, x, s)
            if dr != 0.0:
                s = s - r / dr
            return s
    raise NewtonDiverged(f"projection Newton did not converge from x={x}")


def project_lifted(orbit: OrbitParameterization, x: Array, hint: float | None = None) -> float:
    """Like :func:`project` but returns an unwrapped parameter near ``hint``."""
    x = np.asarray(x, dtype=float)
    if hint is not None:
        return _newton(orbit, x, float(hint))
    grid = orbit.grid(SCAN_POINTS, endpoint=False)
    dist = np.array([np.linalg.norm(x - orbit.point(s)) for s in grid])
    prev, nxt = np.roll(dist, 1), np.roll(dist, -1)
    minima = np.flatnonzero((dist <= prev) & (dist <= nxt))
    best = int(minima[np.argmin(dist[minima])])
    sep = np.abs(minima - best)
    remote = minima[np.minimum(sep, SCAN_POINTS - sep) > 1]
    if remote.size:
        second = int(remote[np.argmin(dist[remote])])
        if dist[second] - dist[best] <= 0.01 * dist[best]:
            raise ProjectionAmbiguous(
                f"two nearest orbit points at s={grid[best]:.6g} and s={grid[second]:.6g} "
                f"are within 1% in distance"
            )
    return _newton(orbit, x, float(grid[best]))


def project(orbit: OrbitParameterization, x: Array, hint: float | None = None) -> float:
    """Orthogonal projection ``p(x)`` reduced into ``[s0, s0 + s_T)``.

    With a ``hint`` Newton starts there and wins even if another orbit point is
    globally closer; without one a coarse scan seeds Newton.
    """
    return orbit.wrap(project_lifted(orbit, x, hint))


def gamma_at(orbit: OrbitParameterization, x: Array, s: float) -> Array:
    """Jacobian row ``Dp(x)`` of the orthogonal projection, with ``s = p(x)``."""
    t = orbit_tangent(orbit, s)
    tt = float(t @ t)
    den = tt - float(orbit.curvature(s) @ (np.asarray(x, dtype=float) - orbit.point(s)))
    if abs(den) < 1e-9 * tt:
        raise FocalPointReached(f"x is at a focal point of the orbit (s={s})")
    return t / den


def projection_jacobian(orbit: OrbitParameterization, x: Array, hint: float | None = None) -> Array:
    """``Dp(x)`` as a function of ``x`` alone (projects first)."""
    s = project_lifted(orbit, x, hint)
    return gamma_at(orbit, x, s)


def frame_at(system: ControlAffineSystem, orbit: OrbitParameterization, s: float) -> ProjectionFrame:
    x = orbit.point(s)
    t = orbit_tangent(orbit, s)
    gamma = t / float(t @ t)
    omega = np.eye(x.size) - np.outer(t, gamma)
    vel = system.drift(x) + system.input_matrix(x) @ system.upsilon(s)
    rho = float(gamma @ vel)
    c = 1.0 / (np.linalg.norm(gamma) * np.linalg.norm(t))
    theta = float(np.arccos(np.clip(c, -1.0, 1.0)))
    return ProjectionFrame(
        s=float(s),
        x_on_orbit=x,
        tangent=t,
        curvature=orbit.curvature(s),
        gamma=gamma,
        omega=omega,
        rho=rho,
        theta=theta,
    )


def transverse_coords(
    orbit: OrbitParameterization, x: Array, hint: float | None = None
) -> tuple[float, Array]:
    """``(s, z)`` with ``s = p(x)`` and ``z = x - xs(s)``."""
    x = np.asarray(x, dtype=float)
    s = project(orbit, x, hint)
    return s, x - orbit.point(s)


def tube_radius(orbit: OrbitParameterization, grid_size: int = 512) -> float:
    """Smallest radius of curvature ``|xs'|^2 / |xs''|`` along the orbit.

    This is where the focal denominator of ``Dp`` can first vanish, so it bounds
    the tube on which the orthogonal projection is smooth. It ignores global
    self-approach of the curve.
    """
    best = np.inf
    for s in orbit.grid(grid_size, endpoint=False):
        t = orbit.tangent(s)
        k = np.linalg.norm(orbit.curvature(s))
        if k > 0:
            best = min(best, float(t @ t) / k)
    return float(best)
