"""Monodromy matrices, characteristic multipliers/exponents and stability verdicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from .dynsys import ControlAffineSystem, OrbitParameterization, a_matrix
from .errors import IntegrationFailure
from .periodic import GainSchedule, PeriodicLinearSystem, periodic_mean
from .projection import frame_at
from .serialize import dumps
from .transverse import _ortho_tangent_projector

Array = np.ndarray

RTOL = 1e-10
ATOL = 1e-12
ZERO_TOL = 1e-6
SEGMENTS = 8


def closed_loop_matrix(plin: PeriodicLinearSystem, gain, closure: str, s: float) -> Array:
    A = plin.A_at(s)
    if gain is None:
        return A
    K = gain.at(s) if isinstance(gain, GainSchedule) else np.asarray(gain(s))
    if closure == "direct":
        return A + plin.B_at(s) @ K
    if closure == "gain_times_omega":
        W = plin.omega_at(s)
        if W is None:
            raise ValueError("closure 'gain_times_omega' needs a system with omega samples")
        return A + plin.B_at(s) @ K @ W
    raise ValueError(f"unknown closure {closure!r}")


def _propagate(plin, gain, closure, X0, s_span, rtol, atol, dense=False):
    k = plin.k
    cols = X0.shape[1]

    def rhs(s, y):
        return (closed_loop_matrix(plin, gain, closure, s) @ y.reshape(k, cols)).ravel() / plin.rho_at(s)

    sol = solve_ivp(rhs, s_span, X0.ravel(), method="DOP853", rtol=rtol, atol=atol, dense_output=dense)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    return sol


def _segments(plin, segments):
    edges = plin.s0 + plin.period * np.arange(segments + 1) / segments
    return list(zip(edges[:-1], edges[1:]))


def monodromy(
    plin: PeriodicLinearSystem,
    gain=None,
    closure: str = "direct",
    rtol: float = RTOL,
    atol: float = ATOL,
    segments: int = SEGMENTS,
) -> Array:
    """State-transition matrix over one lap of ``s``.

    Integrates ``dX/ds = A_cl(s) X / rho(s)`` with ``A_cl = A + B K``
    (``direct``) or ``A + B K Omega`` (``gain_times_omega``). The lap is split
    into segments, each started from the identity, and the segment transition
    matrices are multiplied; strongly contracting modes then keep their
    relative accuracy instead of sinking below the absolute tolerance.
    """
    M = np.eye(plin.k)
    for a, b in _segments(plin, segments):
        sol = _propagate(plin, gain, closure, np.eye(plin.k), (a, b), rtol, atol)
        M = sol.y[:, -1].reshape(plin.k, plin.k) @ M
    return M


def fundamental_matrix(
    plin, gain=None, closure="direct", s_eval=None, rtol=RTOL, atol=ATOL, segments: int = SEGMENTS
) -> Array:
    """``X(s)`` with ``X(s0) = I`` on ``s_eval`` (default: the system grid), shape ``(len, k, k)``."""
    s_eval = plin.s_grid if s_eval is None else np.asarray(s_eval)
    out = np.empty((len(s_eval), plin.k, plin.k))
    done = np.zeros(len(s_eval), dtype=bool)
    M = np.eye(plin.k)
    for j, (a, b) in enumerate(_segments(plin, segments)):
        sol = _propagate(plin, gain, closure, np.eye(plin.k), (a, b), rtol, atol, dense=True)
        last = j == segments - 1
        sel = np.flatnonzero(~done & (s_eval <= b if not last else np.ones(len(s_eval), dtype=bool)))
        for i in sel:
            out[i] = sol.sol(min(max(s_eval[i], a), b)).reshape(plin.k, plin.k) @ M
        done[sel] = True
        M = sol.y[:, -1].reshape(plin.k, plin.k) @ M
    return out


def constraint_basis(plin: PeriodicLinearSystem, s: float | None = None) -> Array:
    """Orthonormal basis of the admissible subspace ``ker C(s)``."""
    s = plin.s0 if s is None else s
    C = plin.constraint_at(s)
    if C is None:
        return np.eye(plin.k)
    _, sv, vt = np.linalg.svd(C)
    r = int(np.sum(sv > 1e-12 * max(sv.max(), 1.0)))
    return vt[r:].T


def restricted_monodromy(plin: PeriodicLinearSystem, M: Array) -> Array:
    """Monodromy restricted to ``ker C(s0)`` in an orthonormal basis of that kernel."""
    V = constraint_basis(plin)
    return V.T @ M @ V


@dataclass(frozen=True)
class FloquetSpectrum:
    multipliers: Array
    exponents: Array
    T_period: float
    zero_exponent_index: int | None
    tolerances: dict = field(default_factory=dict)

    @property
    def real_parts(self) -> Array:
        return np.real(self.exponents)

    def without_structural_zero(self) -> Array:
        if self.zero_exponent_index is None:
            return self.exponents
        return np.delete(self.exponents, self.zero_exponent_index)

    def to_dict(self) -> dict:
        return {
            "multipliers": [[float(z.real), float(z.imag)] for z in self.multipliers],
            "exponents": [[float(z.real), float(z.imag)] for z in self.exponents],
            "T_period": self.T_period,
            "zero_exponent_index": self.zero_exponent_index,
            "tolerances": dict(self.tolerances),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FloquetSpectrum":
        return cls(
            np.array([complex(*p) for p in doc["multipliers"]]),
            np.array([complex(*p) for p in doc["exponents"]]),
            doc["T_period"],
            doc["zero_exponent_index"],
            doc.get("tolerances", {}),
        )

    def to_json(self) -> str:
        return dumps(self.to_dict())


def spectrum(M: Array, T_period: float, zero_tol: float = ZERO_TOL) -> FloquetSpectrum:
    """Multipliers (sorted by descending modulus) and exponents ``Log(mu) / T``.

    Multipliers on the negative real axis sit on the branch cut of the
    principal logarithm; they are paired and reported as ``+-i pi / T``.
    """
    mu = np.linalg.eigvals(np.asarray(M, dtype=float)).astype(complex)
    order = np.lexsort((-mu.imag, -np.abs(mu)))
    mu = mu[order]
    lam = np.log(mu) / T_period
    cut = np.flatnonzero((mu.real < 0) & (np.abs(mu.imag) <= 1e-9 * np.abs(mu)))
    for j, idx in enumerate(cut):
        sign = 1.0 if j % 2 == 0 else -1.0
        lam[idx] = complex(lam[idx].real, sign * np.pi / T_period)
    zero = None
    dist = np.abs(mu - 1.0)
    if dist.size and dist.min() < zero_tol:
        zero = int(np.argmin(dist))
    return FloquetSpectrum(mu, lam, float(T_period), zero, {"zero_multiplier": zero_tol})


class Verdict(str, Enum):
    ORBITALLY_STABLE = "orbitally_stable"
    INCONCLUSIVE = "inconclusive"
    UNSTABLE = "unstable"


def andronov_vitt_verdict(spec: FloquetSpectrum, tol: float = ZERO_TOL) -> Verdict:
    """One simple zero exponent and all others strictly in the left half plane."""
    re = np.real(spec.exponents)
    if np.any(re > tol):
        return Verdict.UNSTABLE
    zeros = np.abs(re) < tol
    if zeros.sum() == 1 and np.all(re[~zeros] < -tol):
        return Verdict.ORBITALLY_STABLE
    return Verdict.INCONCLUSIVE


def asymptotic_verdict(spec: FloquetSpectrum, tol: float = ZERO_TOL) -> Verdict:
    """All exponents strictly negative (no structural zero expected)."""
    re = np.real(spec.exponents)
    if np.all(re < -tol):
        return Verdict.ORBITALLY_STABLE
    if np.any(re > tol):
        return Verdict.UNSTABLE
    return Verdict.INCONCLUSIVE


def closed_loop_spectrum(plin, gain=None, closure="direct", restrict=False) -> FloquetSpectrum:
    M = monodromy(plin, gain, closure)
    if restrict:
        M = restricted_monodromy(plin, M)
    return spectrum(M, plin.time_period)


def comparison_verdict(plin_cmp: PeriodicLinearSystem, gain) -> Verdict:
    """Verdict on the comparison system closed with ``v = K Omega w``."""
    return andronov_vitt_verdict(closed_loop_spectrum(plin_cmp, gain, "gain_times_omega"))


@dataclass(frozen=True)
class UnitMultiplierWitness:
    multiplier: complex
    distance: float
    cosine: float

    def to_dict(self) -> dict:
        return {
            "multiplier": [self.multiplier.real, self.multiplier.imag],
            "distance": self.distance,
            "cosine": self.cosine,
        }


def unit_multiplier_witness(
    plin: PeriodicLinearSystem, gain, direction, closure: str = "gain_times_omega"
) -> UnitMultiplierWitness:
    """Multiplier closest to 1 of the unconstrained closed loop and its alignment with ``direction``."""
    M = monodromy(plin, gain, closure)
    mu, V = np.linalg.eig(M)
    j = int(np.argmin(np.abs(mu - 1.0)))
    v = V[:, j]
    d = np.asarray(direction, dtype=float)
    cos = float(np.abs(np.vdot(v, d)) / (np.linalg.norm(v) * np.linalg.norm(d)))
    return UnitMultiplierWitness(complex(mu[j]), float(abs(mu[j] - 1.0)), cos)


def controllability_gramian(plin: PeriodicLinearSystem, rtol=RTOL, atol=ATOL) -> Array:
    """``int X(T, t) B B^T X(T, t)^T dt`` over one lap."""
    k = plin.k

    def rhs(s, y):
        W = y.reshape(k, k)
        A, B = plin.A_at(s), plin.B_at(s)
        return ((A @ W + W @ A.T + B @ B.T) / plin.rho_at(s)).ravel()

    sol = solve_ivp(rhs, (plin.s0, plin.s0 + plin.period), np.zeros(k * k), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationFailure(sol.message)
    W = sol.y[:, -1].reshape(k, k)
    return 0.5 * (W + W.T)


# --- trace sums ---


def trace_integral(plin: PeriodicLinearSystem, gain=None, closure="direct") -> float:
    """``oint Tr(A_cl(s)) / rho(s) ds``, the exponent sum times the lap duration."""
    tr = np.array([np.trace(closed_loop_matrix(plin, gain, closure, s)) for s in plin.s_grid])
    return float(periodic_mean(tr / plin.rho) * plin.period)


@dataclass(frozen=True)
class TraceSumReport:
    tvl_sum: float
    first_approximation_sum: float
    comparison_sum: float
    vanishing_term: float
    log_speed_gap: float
    tolerance: float

    @property
    def passed(self) -> bool:
        sums = [self.tvl_sum, self.first_approximation_sum, self.comparison_sum]
        spread = max(sums) - min(sums)
        return spread < self.tolerance and abs(self.vanishing_term) < self.tolerance

    def to_dict(self) -> dict:
        return {
            "tvl_sum": self.tvl_sum,
            "first_approximation_sum": self.first_approximation_sum,
            "comparison_sum": self.comparison_sum,
            "vanishing_term": self.vanishing_term,
            "log_speed_gap": self.log_speed_gap,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def exponent_sum_check(
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    gain: GainSchedule | None = None,
    grid_size: int = 512,
) -> TraceSumReport:
    """Compare the period integrals of the closed-loop traces of the three systems.

    The closed loops are ``A_perp + B_perp K Omega`` (unconstrained TVL),
    ``A + B K Omega`` (first approximation) and ``Omega A + Omega B K Omega``
    (comparison). Their integrals differ only by the period integral of
    ``xs'^T A xs' / |xs'|^2 / rho``, which equals the change of ``log |f|`` over
    one lap and hence vanishes.
    """
    grid = orbit.grid(grid_size)
    tv, fa, cp, van, rho = [], [], [], [], []
    for s in grid:
        fr = frame_at(system, orbit, s)
        A = a_matrix(system, orbit, fr, s)
        B = system.input_matrix(fr.x_on_orbit)
        W = fr.omega
        P = _ortho_tangent_projector(fr)
        BKW = np.zeros_like(A) if gain is None else B @ gain.at(s) @ W
        tv.append(np.trace(W @ A - P @ A.T + W @ BKW))
        fa.append(np.trace(A + BKW))
        cp.append(np.trace(W @ A + W @ BKW @ W))
        van.append(np.trace(P @ A.T))
        rho.append(fr.rho)
    rho = np.array(rho)

    def integral(v):
        return float(periodic_mean(np.array(v) / rho) * orbit.s_T)

    def log_speed(s):
        x = orbit.point(s)
        return np.log(np.linalg.norm(system.drift(x) + system.input_matrix(x) @ system.upsilon(s)))

    return TraceSumReport(
        tvl_sum=integral(tv),
        first_approximation_sum=integral(fa),
        comparison_sum=integral(cp),
        vanishing_term=integral(van),
        log_speed_gap=float(log_speed(orbit.s0) - log_speed(orbit.s0 + orbit.s_T)),
        tolerance=1e-6 * orbit.s_T,
    )


# --- growth constants ---


@dataclass(frozen=True)
class GrowthEstimate:
    """Grid estimate of ``C`` in ``|W(t) W(tau)^-1| <= C exp(lambda_M (t - tau))``.

    ``heuristic`` is always true: ``C`` is a lower bound from sampling with a
    constant rate function, so ``condition_holds`` can refute the sufficient
    condition ``lambda_M < -C alpha`` but never certify it.
    """

    C: float
    lambda_M: float
    alpha: float
    condition_holds: bool
    heuristic: bool = True

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "lambda_M": self.lambda_M,
            "alpha": self.alpha,
            "condition_holds": self.condition_holds,
            "heuristic": self.heuristic,
        }


def estimate_growth_constants(
    plin: PeriodicLinearSystem,
    horizon_periods: int = 3,
    gain=None,
    closure: str = "direct",
    alpha: float | None = None,
    tau_samples: int = 32,
) -> GrowthEstimate:
    """Estimate ``C``, ``lambda_M`` and test ``lambda_M < -C alpha``.

    ``alpha`` bounds ``|A(s)|`` of the first approximation; by default the
    largest spectral norm of the open-loop drift of ``plin`` is used.
    """
    if horizon_periods < 1:
        raise ValueError("horizon_periods must be >= 1")
    X = fundamental_matrix(plin, gain, closure)
    M = X[-1]
    spec = spectrum(M, plin.time_period)
    lam = float(np.max(spec.real_parts))
    if alpha is None:
        alpha = float(max(np.linalg.norm(A, 2) for A in plin.A))
    # time elapsed at each grid sample
    inv = 1.0 / plin.rho
    t_grid = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(plin.s_grid))])
    T = t_grid[-1]
    K = len(plin.s_grid) - 1
    taus = np.unique(np.linspace(0, K - 1, min(tau_samples, K)).astype(int))
    powers = [np.eye(plin.k)]
    for _ in range(horizon_periods):
        powers.append(M @ powers[-1])
    C = 0.0
    for i in taus:
        Xtau_inv = np.linalg.inv(X[i])
        for p in range(horizon_periods + 1):
            j0 = i if p == 0 else 0
            prop = X[j0:K] @ powers[p] @ Xtau_inv
            dt = t_grid[j0:K] + p * T - t_grid[i]
            vals = np.linalg.norm(prop, 2, axis=(1, 2)) * np.exp(-lam * dt)
            C = max(C, float(vals.max()))
    return GrowthEstimate(C, lam, alpha, bool(lam < -C * alpha))
