"""Closed-loop simulation with transverse feedback ``u = K(p(x)) (x - xs(p(x)))``."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dynsys import ControlAffineSystem, OrbitParameterization
from .errors import InsufficientData, IntegrationFailure, LeftTube, ProjectionError
from .periodic import GainSchedule, PeriodicLinearSystem, periodic_mean
from .serialize import fmt_float
from .projection import frame_at, project_lifted, tube_radius

Array = np.ndarray

TRUSTED_TUBE_FRACTION = 0.2


def orbit_time_period(system: ControlAffineSystem, orbit: OrbitParameterization, grid_size: int = 256) -> float:
    """Duration of one lap along the nominal motion, ``int ds / rho``."""
    rho = np.array([frame_at(system, orbit, s).rho for s in orbit.grid(grid_size)])
    return float(periodic_mean(1.0 / rho) * orbit.s_T)


@dataclass
class SimulationTrace:
    times: Array
    states: Array
    s_values: Array
    z_norms: Array
    inputs: Array
    rho_integral: Array
    period_time: float
    s_T: float
    noise_floor: float
    events: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(n)] + ["s", "znorm"] + [f"u_{i + 1}" for i in range(m)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self.times)):
                row = [self.times[k], *self.states[k], self.s_values[k], self.z_norms[k], *self.inputs[k]]
                w.writerow([fmt_float(v) for v in row])

    def per_period(self) -> Array:
        """``|z|`` sampled once per lap, at ``t = t0 + k T``."""
        idx = [int(np.argmin(np.abs(self.times - (self.times[0] + k * self.period_time))))
               for k in range(int(round((self.times[-1] - self.times[0]) / self.period_time)) + 1)]
        return self.z_norms[idx]


def _empty_trace(x0, m, T, s_T, floor, events):
    x0 = np.asarray(x0, dtype=float)
    return SimulationTrace(np.array([0.0]), x0[None, :], np.array([np.nan]), np.array([np.nan]),
                           np.zeros((1, m)), np.array([0.0]), T, s_T, floor, events)


def simulate_closed_loop(
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    gain: GainSchedule | None,
    x0,
    horizon_periods: int = 10,
    dt_max: float | None = None,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    samples_per_period: int = 64,
    sample_times: Array | None = None,
) -> SimulationTrace:
    """Integrate the nonlinear closed loop from ``x0``.

    The projection is re-solved at every right-hand-side call, seeded with the
    previous parameter so ``s(t)`` stays continuous (it is never wrapped).
    Raises :class:`LeftTube` when the state reaches the focal distance of the
    orbit or the projection fails; the exception carries the truncated trace.
    """
    x0 = np.asarray(x0, dtype=float)
    n, m = system.n, system.m
    T = orbit_time_period(system, orbit)
    r_tube = tube_radius(orbit)
    floor = 1e3 * (atol + rtol * (1.0 + float(np.linalg.norm(x0))))
    events: list = []
    try:
        s_init = project_lifted(orbit, x0)
    except ProjectionError as exc:
        events.append({"t": 0.0, "event": type(exc).__name__, "detail": str(exc)})
        raise LeftTube(f"initial state cannot be projected: {exc}", 0.0,
                       _empty_trace(x0, m, T, orbit.s_T, floor, events)) from exc
    z0 = float(np.linalg.norm(x0 - orbit.point(s_init)))
    if z0 >= r_tube:
        events.append({"t": 0.0, "event": "LeftTube", "detail": f"|z|={z0:.4g} >= tube radius {r_tube:.4g}"})
        raise LeftTube(f"initial state is outside the projection tube (|z|={z0:.4g})", 0.0,
                       _empty_trace(x0, m, T, orbit.s_T, floor, events))

    hint = {"s": s_init}

    def control(x, s):
        z = x - orbit.point(s)
        u = system.upsilon(s)
        if gain is not None:
            u = u + gain.at(s) @ z
        return u, z

    def rho_at(s):
        xs = orbit.point(s)
        t = orbit.tangent(s)
        return float(t @ (system.drift(xs) + system.input_matrix(xs) @ system.upsilon(s))) / float(t @ t)

    def rhs(t, y):
        x = y[:n]
        s = project_lifted(orbit, x, hint["s"])
        hint["s"] = s
        u, _ = control(x, s)
        return np.concatenate([system.vector_field(x, u), [rho_at(s)]])

    def tube_exit(t, y):
        s = hint["s"]
        return r_tube - float(np.linalg.norm(y[:n] - orbit.point(s)))

    tube_exit.terminal = True

    if sample_times is None:
        sample_times = np.linspace(0.0, horizon_periods * T, horizon_periods * samples_per_period + 1)
    sample_times = np.asarray(sample_times, dtype=float)

    ts, xs_, ss, zs, us, refs = [], [], [], [], [], []
    warned = False
    y = np.concatenate([x0, [0.0]])
    chunk_edges = np.unique(np.concatenate([sample_times[::samples_per_period], sample_times[-1:]]))
    failure = None
    for c0, c1 in zip(chunk_edges[:-1], chunk_edges[1:]):
        t_eval = sample_times[(sample_times >= c0) & (sample_times <= c1)]
        if ts and t_eval.size and t_eval[0] == ts[-1]:
            t_eval = t_eval[1:]
        try:
            sol = solve_ivp(rhs, (c0, c1), y, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol,
                            max_step=np.inf if dt_max is None else dt_max, events=tube_exit)
        except ProjectionError as exc:
            failure = (float(c0), exc)
            break
        if sol.status == -1:
            raise IntegrationFailure(sol.message)
        for k in range(sol.t.size):
            x = sol.y[:n, k]
            s = project_lifted(orbit, x, ss[-1] if ss else s_init)
            u, z = control(x, s)
            ts.append(sol.t[k]); xs_.append(x); ss.append(s); zs.append(np.linalg.norm(z))
            us.append(u); refs.append(sol.y[n, k])
            if not warned and zs[-1] > TRUSTED_TUBE_FRACTION * r_tube:
                events.append({"t": float(sol.t[k]), "event": "outside_trusted_tube",
                               "detail": f"|z|={zs[-1]:.4g} > {TRUSTED_TUBE_FRACTION} * {r_tube:.4g}"})
                warned = True
        y = sol.y[:, -1]
        hint["s"] = project_lifted(orbit, y[:n], ss[-1] if ss else s_init)
        if sol.status == 1:
            failure = (float(sol.t_events[0][0]), None)
            break
    trace = SimulationTrace(np.array(ts), np.array(xs_).reshape(-1, n), np.array(ss), np.array(zs),
                            np.array(us).reshape(-1, m), np.array(refs), T, orbit.s_T, floor, events)
    if failure is not None:
        t_fail, exc = failure
        detail = str(exc) if exc is not None else "state reached the focal distance of the orbit"
        events.append({"t": t_fail, "event": "LeftTube", "detail": detail})
        raise LeftTube(f"trajectory left the projection tube near t={t_fail:.4g}: {detail}", t_fail, trace)
    return trace


@dataclass(frozen=True)
class ConvergenceMetrics:
    final_distance: float
    fitted_decay_rate: float
    phase_drift: float
    fit_window: tuple

    def to_dict(self) -> dict:
        return {
            "final_distance": self.final_distance,
            "fitted_decay_rate": self.fitted_decay_rate,
            "phase_drift": self.phase_drift,
            "fit_window": list(self.fit_window),
        }


def orbital_convergence_metrics(trace: SimulationTrace, floor: float | None = None) -> ConvergenceMetrics:
    """Final distance, exponential decay rate of ``|z|`` and accumulated phase drift.

    The decay rate is a log-linear fit over the last half of the samples whose
    ``|z|`` lies above the integration noise floor; once the error sinks into
    integrator round-off the logarithm carries no information. ``nan`` if fewer
    than 8 such samples exist.
    """
    span = trace.times[-1] - trace.times[0]
    if span < 3 * trace.period_time * (1 - 1e-9):
        raise InsufficientData("trace must span at least 3 periods")
    floor = trace.noise_floor if floor is None else floor
    usable = np.flatnonzero(trace.z_norms > floor)
    rate = float("nan")
    window = (float("nan"), float("nan"))
    if usable.size >= 16:
        sel = usable[usable.size // 2 :]
        slope, _ = np.polyfit(trace.times[sel], np.log(trace.z_norms[sel]), 1)
        rate = float(-slope)
        window = (float(trace.times[sel[0]]), float(trace.times[sel[-1]]))
    drift = float(trace.s_values[-1] - trace.s_values[0] - (trace.rho_integral[-1] - trace.rho_integral[0]))
    return ConvergenceMetrics(float(trace.z_norms[-1]), rate, drift, window)


@dataclass
class LinearTrace:
    s_values: Array
    times: Array
    dz: Array
    constraint_drift: Array
    events: list = field(default_factory=list)

    @property
    def norms(self) -> Array:
        return np.linalg.norm(self.dz, axis=1)

    @property
    def max_constraint_drift(self) -> float:
        return float(np.max(self.constraint_drift)) if self.constraint_drift.size else 0.0


def simulate_linear(
    plin: PeriodicLinearSystem,
    gain: GainSchedule | None,
    dz0,
    periods: int = 1,
    samples_per_period: int = 64,
    closure: str = "direct",
    rtol: float = 1e-10,
    atol: float = 1e-14,
) -> LinearTrace:
    """Integrate a constrained linear periodic system with per-step re-projection.

    Between samples the state follows ``d/ds dz = A_cl dz / rho``; at each
    sample the constraint violation ``|C dz|`` is recorded and the state is
    projected back onto the admissible subspace.
    """
    from .floquet import closed_loop_matrix

    dz = np.asarray(dz0, dtype=float).copy()
    events = []
    C0 = plin.constraint_at(plin.s0)
    if C0 is not None and np.linalg.norm(C0 @ dz) > 1e-12 * (1 + np.linalg.norm(dz)):
        events.append({"s": plin.s0, "event": "initial_state_projected",
                       "detail": f"|C dz0| = {np.linalg.norm(C0 @ dz):.3e}"})
        dz = plin.projector_at(plin.s0) @ dz
    k = plin.k
    s_samples = plin.s0 + plin.period * np.arange(periods * samples_per_period + 1) / samples_per_period

    def rhs(s, y):
        A = closed_loop_matrix(plin, gain, closure, s)
        return np.concatenate([A @ y[:k], [1.0]]) / plin.rho_at(s)

    out, times, drift = [dz.copy()], [0.0], []
    y = np.concatenate([dz, [0.0]])
    for a, b in zip(s_samples[:-1], s_samples[1:]):
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationFailure(sol.message)
        y = sol.y[:, -1].copy()
        C = plin.constraint_at(b)
        if C is not None:
            drift.append(float(np.linalg.norm(C @ y[:k])))
            y[:k] = plin.projector_at(b) @ y[:k]
        out.append(y[:k].copy())
        times.append(y[k])
    return LinearTrace(s_samples, np.array(times), np.array(out), np.array(drift), events)
