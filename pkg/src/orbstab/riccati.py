"""Periodic Riccati synthesis of transverse feedback gains.

The periodic Riccati differential equation (in the ``s`` domain)

    dR/ds + (A^T R + R A + Q - R B Rw^-1 B^T R) / rho = 0

is solved by sweeping it backward over one period repeatedly until the
solution closes; the stabilizing periodic solution attracts under backward
flow. Also hosts the closed-form quantities of the built-in ``bh-circle``
example: the analytic gain, the auxiliary matrix ``K_hat`` and the family of
solutions of the projected equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import BlowUp, NotConverged
from .periodic import GainSchedule, PeriodicLinearSystem, periodic_derivative

Array = np.ndarray

BLOWUP_NORM = 1e12


@dataclass(frozen=True)
class RiccatiSolution:
    s_grid: Array
    R: Array
    residual_max: float
    converged: bool
    sweeps: int
    gap: float
    Q: Array
    Rw: Array

    @property
    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.R - np.swapaxes(self.R, 1, 2))))

    def min_restricted_eigenvalue(self, Phi: Array | None = None) -> float:
        """Smallest eigenvalue of ``Phi^T R Phi`` over the grid.

        ``Phi`` holds one basis per grid sample, e.g. the kernel frame of
        ``Gamma``; without it the full matrices are used.
        """
        R = 0.5 * (self.R + np.swapaxes(self.R, 1, 2))
        if Phi is not None:
            R = np.swapaxes(Phi, 1, 2) @ R @ Phi
        return float(np.min(np.linalg.eigvalsh(R)))


def _weights(plin, Q, Rw):
    Q = np.eye(plin.k) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    Rw = np.eye(plin.m) if Rw is None else np.atleast_2d(np.asarray(Rw, dtype=float))
    if Q.shape != (plin.k, plin.k) or Rw.shape != (plin.m, plin.m):
        raise ValueError("weight shapes do not match the system")
    if np.min(np.linalg.eigvalsh(0.5 * (Rw + Rw.T))) <= 0:
        raise ValueError("Rw must be positive definite")
    return Q, Rw


def _riccati_rhs(plin, Q, Rw_inv):
    k = plin.k

    def rhs(s, y):
        R = y.reshape(k, k)
        A, B = plin.A_at(s), plin.B_at(s)
        RB = R @ B
        dR = -(A.T @ R + R @ A + Q - RB @ Rw_inv @ RB.T) / plin.rho_at(s)
        return dR.ravel()

    return rhs


def solve_prde(
    plin: PeriodicLinearSystem,
    Q=None,
    Rw=None,
    max_sweeps: int = 200,
    tol: float = 1e-8,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> RiccatiSolution:
    """Periodic stabilizing solution of the Riccati equation for ``(A, B)`` of ``plin``.

    Raises :class:`NotConverged` if the periodicity gap ``|R(s0) - R(s0+s_T)|_F``
    does not drop below ``tol`` within ``max_sweeps``, and :class:`BlowUp` on a
    finite escape during a sweep.
    """
    Q, Rw = _weights(plin, Q, Rw)
    Rw_inv = np.linalg.inv(Rw)
    k = plin.k
    s0, s1 = plin.s0, plin.s0 + plin.period
    rhs = _riccati_rhs(plin, Q, Rw_inv)

    def escape(s, y):
        return BLOWUP_NORM - np.max(np.abs(y))

    escape.terminal = True

    R_end = np.eye(k) * (1.0 + np.linalg.norm(Q))
    gap = np.inf
    sol = None
    for sweep in range(1, max_sweeps + 1):
        sol = solve_ivp(rhs, (s1, s0), R_end.ravel(), method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True, events=escape)
        if sol.status == 1 or not np.all(np.isfinite(sol.y[:, -1])):
            where = float(sol.t[-1])
            raise BlowUp(f"Riccati solution escapes near s={where:.6g} in sweep {sweep}", where)
        if not sol.success:
            raise NotConverged(f"integration failed: {sol.message}", gap, sweep)
        R0 = sol.y[:, -1].reshape(k, k)
        R0 = 0.5 * (R0 + R0.T)
        gap = float(np.linalg.norm(R0 - R_end))
        R_end = R0
        if gap < tol:
            break
    else:
        raise NotConverged(
            f"Riccati sweeps did not close after {max_sweeps} sweeps (gap {gap:.3e})", gap, max_sweeps
        )
    R = np.array([sol.sol(s).reshape(k, k) for s in plin.s_grid])
    R = 0.5 * (R + np.swapaxes(R, 1, 2))
    R[-1] = R[0]
    res = prde_residual(R, plin, projected=False, Q=Q, Rw=Rw)
    return RiccatiSolution(plin.s_grid, R, res, True, sweep, gap, Q, Rw)


def gain_from_riccati(sol: RiccatiSolution, plin: PeriodicLinearSystem) -> GainSchedule:
    """``K(s) = -Rw^-1 B^T(s) R(s)`` on the grid."""
    Rw_inv = np.linalg.inv(sol.Rw)
    K = np.array([-Rw_inv @ B.T @ R for B, R in zip(plin.B, sol.R)])
    return GainSchedule(plin.s_grid, K, "riccati")


def prde_residual(
    R_samples: Array, plin: PeriodicLinearSystem, projected: bool = False, Q=None, Rw=None
) -> float:
    """Max over the grid of the Frobenius norm of the Riccati residual.

    With ``projected`` the residual is sandwiched as ``Omega^T [...] Omega`` using
    the system's ``omega`` samples. ``dR/ds`` is a spectral derivative of the
    samples, so the grid must be uniform.
    """
    Q, Rw = _weights(plin, Q, Rw)
    Rw_inv = np.linalg.inv(Rw)
    R_samples = np.asarray(R_samples, dtype=float)
    dR = periodic_derivative(plin.s_grid, R_samples)
    if projected and plin.omega is None:
        raise ValueError("projected residual needs omega samples")
    worst = 0.0
    for i in range(len(plin.s_grid) - 1):
        A, B, R, rho = plin.A[i], plin.B[i], R_samples[i], plin.rho[i]
        RB = R @ B
        E = dR[i] + (A.T @ R + R @ A + Q - RB @ Rw_inv @ RB.T) / rho
        if projected:
            W = plin.omega[i]
            E = W.T @ E @ W
        worst = max(worst, float(np.linalg.norm(E)))
    return worst


# --- closed forms for the bh-circle example ---


def analytic_example_gain(a: float, grid_size: int = 512) -> GainSchedule:
    """``K(s) = -[sin s, cos s, 1]`` for the bh-circle system (independent of ``a``).

    Closed-loop transverse exponents are ``-1`` and ``-a``.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    s = 2 * np.pi * np.arange(grid_size + 1) / grid_size
    K = -np.stack([np.sin(s), np.cos(s), np.ones_like(s)], axis=1)[:, None, :]
    return GainSchedule(s, K, "analytic")


def example_khat(a: float, s_grid: Array) -> Array:
    """Samples of ``K_hat(s)`` with ``B B^T R_perp = K_hat Omega`` for bh-circle."""
    s = np.asarray(s_grid)
    out = np.zeros((s.size, 3, 3))
    out[:, 0, 0] = a
    out[:, 1, 1] = a
    out[:, 0, 2] = a * np.sin(s)
    out[:, 1, 2] = a * np.cos(s)
    out[:, 2, 0] = np.sin(s)
    out[:, 2, 1] = np.cos(s)
    out[:, 2, 2] = 1.0
    return out


def closed_form_riccati_family(a: float, k: float, i: int, j: int, s_grid: Array) -> Array:
    """``Omega^i diag(1/a, 1/a, 1) Omega^j + k t t^T`` with ``t = (cos s, -sin s, 0)``.

    Each member solves the Omega-projected Riccati equation of the bh-circle
    transverse linearization with unit weights.
    """
    if i not in (0, 1) or j not in (0, 1):
        raise ValueError("i and j must be 0 or 1")
    s = np.asarray(s_grid)
    D = np.diag([1.0 / a, 1.0 / a, 1.0])
    out = np.empty((s.size, 3, 3))
    for n, sv in enumerate(s):
        t = np.array([np.cos(sv), -np.sin(sv), 0.0])
        W = np.eye(3) - np.outer(t, t)
        out[n] = np.linalg.matrix_power(W, i) @ D @ np.linalg.matrix_power(W, j) + k * np.outer(t, t)
    return out
