"""Analyze / synthesize / simulate stages operating on one :class:`JobConfig`.

Each stage writes its artifacts into an output directory and returns the
report document it wrote. Stages never share in-memory state; simulate and
report read what earlier stages left on disk.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import __version__
from .config import JobConfig
from .dynsys import build_system, verify_orbit
from .errors import ConfigError, InsufficientData, LeftTube
from .floquet import (
    andronov_vitt_verdict,
    asymptotic_verdict,
    closed_loop_spectrum,
    estimate_growth_constants,
    exponent_sum_check,
    unit_multiplier_witness,
)
from .periodic import GainSchedule
from .projection import frame_at
from .riccati import analytic_example_gain, gain_from_riccati, solve_prde
from .serialize import dumps
from .sim import orbital_convergence_metrics, simulate_closed_loop
from .transverse import comparison_system, transverse_frame, tvl_orthogonal

ANALYZE_JSON = "analyze.json"
SYNTH_JSON = "synthesize.json"
GAIN_CSV = "gain.csv"
TRACE_CSV = "trace.csv"
METRICS_JSON = "metrics.json"


def _header(job: JobConfig, kind: str) -> dict:
    return {"kind": kind, "version": __version__, "config_hash": job.config_hash, "config": job.to_dict()}


def _write(out: Path, name: str, doc: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(dumps(doc))
    return doc


def frame_invariants(system, orbit, grid_size: int) -> dict:
    """Worst deviations of the projection-frame identities along the orbit."""
    worst = {"gamma_omega": 0.0, "omega_idempotent": 0.0, "omega_tangent": 0.0, "gamma_tangent": 0.0}
    theta = 0.0
    for s in orbit.grid(grid_size, endpoint=False):
        fr = frame_at(system, orbit, s)
        W, G, t = fr.omega, fr.gamma, fr.tangent
        worst["gamma_omega"] = max(worst["gamma_omega"], float(np.linalg.norm(G @ W)))
        worst["omega_idempotent"] = max(worst["omega_idempotent"], float(np.linalg.norm(W @ W - W)))
        worst["omega_tangent"] = max(worst["omega_tangent"], float(np.linalg.norm(W @ t)))
        worst["gamma_tangent"] = max(worst["gamma_tangent"], float(abs(G @ t - 1.0)))
        theta = max(theta, float(fr.theta))
    worst["max_theta"] = theta
    return worst


def _spectrum_doc(spec, verdict) -> dict:
    doc = spec.to_dict()
    doc["verdict"] = verdict.value
    return doc


def run_analyze(job: JobConfig, out: Path) -> dict:
    system, orbit = build_system(job.system_name, job.params)
    residual = verify_orbit(system, orbit, min(job.grid_size, 512))
    tvl = tvl_orthogonal(system, orbit, job.grid_size)
    cmp_ = comparison_system(system, orbit, job.grid_size)
    out.mkdir(parents=True, exist_ok=True)
    tvl.to_json(out / "tvl.json")
    cmp_.to_json(out / "comparison.json")
    spectra = {}
    for label, plin, restrict, verdict in (
        ("tvl_unconstrained", tvl, False, andronov_vitt_verdict),
        ("tvl_restricted", tvl, True, asymptotic_verdict),
        ("comparison", cmp_, False, andronov_vitt_verdict),
    ):
        spec = closed_loop_spectrum(plin, restrict=restrict)
        spectra[label] = _spectrum_doc(spec, verdict(spec))
    doc = _header(job, "analyze")
    doc.update(
        {
            "orbit_residual": residual.to_dict(),
            "frame_invariants": frame_invariants(system, orbit, job.grid_size),
            "time_period": tvl.time_period,
            "artifacts": {"tvl": "tvl.json", "comparison": "comparison.json"},
            "undriven_spectra": spectra,
        }
    )
    return _write(out, ANALYZE_JSON, doc)


def _gain_block(system, orbit, tvl, cmp_, gain: GainSchedule, grid_size: int) -> dict:
    tangent = orbit.tangent(orbit.s0)
    spectra = {}
    for label, plin, closure, restrict, verdict in (
        ("tvl", tvl, "gain_times_omega", False, andronov_vitt_verdict),
        ("tvl_restricted", tvl, "direct", True, asymptotic_verdict),
        ("comparison", cmp_, "direct", False, asymptotic_verdict),
        ("comparison_gain_times_omega", cmp_, "gain_times_omega", False, andronov_vitt_verdict),
    ):
        spec = closed_loop_spectrum(plin, gain, closure, restrict)
        doc = _spectrum_doc(spec, verdict(spec))
        doc["closure"] = closure
        spectra[label] = doc
    return {
        "spectra": spectra,
        "trace_sums": exponent_sum_check(system, orbit, gain, grid_size).to_dict(),
        "growth_heuristic": estimate_growth_constants(cmp_, 3, gain, "gain_times_omega").to_dict(),
        "unit_multiplier": unit_multiplier_witness(tvl, gain, tangent).to_dict(),
    }


def _riccati_gain(job: JobConfig, cmp_):
    Q = None if job.Q is None else np.diag(job.Q)
    Rw = None if job.Rw is None else np.diag(job.Rw)
    sol = solve_prde(cmp_, Q, Rw, max_sweeps=job.max_sweeps, tol=job.riccati_tol)
    return sol, gain_from_riccati(sol, cmp_)


def run_synthesize(job: JobConfig, out: Path) -> dict:
    system, orbit = build_system(job.system_name, job.params)
    tvl = tvl_orthogonal(system, orbit, job.grid_size)
    cmp_ = comparison_system(system, orbit, job.grid_size)
    sol, gain = _riccati_gain(job, cmp_)
    out.mkdir(parents=True, exist_ok=True)
    gain.to_csv(out / GAIN_CSV)
    gains = {"riccati": _gain_block(system, orbit, tvl, cmp_, gain, job.grid_size)}
    if job.system_name == "bh-circle":
        analytic = analytic_example_gain(job.params["a"], job.grid_size)
        gains["analytic"] = _gain_block(system, orbit, tvl, cmp_, analytic, job.grid_size)
    doc = _header(job, "synthesize")
    doc.update(
        {
            "riccati": {
                "sweeps": sol.sweeps,
                "periodicity_gap": sol.gap,
                "residual_max": sol.residual_max,
                "symmetry_error": sol.symmetry_error,
                "min_restricted_eigenvalue": sol.min_restricted_eigenvalue(
                    transverse_frame(system, orbit, job.grid_size).Phi
                ),
            },
            "time_period": tvl.time_period,
            "artifacts": {"gain": GAIN_CSV},
            "gains": gains,
        }
    )
    return _write(out, SYNTH_JSON, doc)


def _resolve_gain(job: JobConfig, system, orbit, config_dir: Path | None) -> GainSchedule:
    if job.gain == "analytic":
        return analytic_example_gain(job.params["a"], job.grid_size)
    if job.gain == "riccati":
        return _riccati_gain(job, comparison_system(system, orbit, job.grid_size))[1]
    path = Path(job.gain)
    if not path.is_absolute() and config_dir is not None:
        path = config_dir / path
    if not path.exists():
        raise ConfigError(f"gain file {str(path)!r} not found")
    gain = GainSchedule.from_csv(path, "file")
    if gain.shape != (system.m, system.n):
        raise ConfigError(f"gain file has shape {gain.shape}, expected {(system.m, system.n)}")
    return gain


def run_simulate(job: JobConfig, out: Path, config_dir: Path | None = None) -> dict:
    """Returns the metrics document; re-raises :class:`LeftTube` after writing the partial trace."""
    if job.x0 is None:
        raise ConfigError("simulate needs simulation.x0")
    system, orbit = build_system(job.system_name, job.params)
    gain = _resolve_gain(job, system, orbit, config_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = _header(job, "simulate")
    doc["artifacts"] = {"trace": TRACE_CSV}
    try:
        trace = simulate_closed_loop(
            system, orbit, gain, job.x0, job.horizon_periods, rtol=job.rtol, atol=job.atol,
            samples_per_period=job.samples_per_period,
        )
    except LeftTube as exc:
        if exc.trace is not None:
            exc.trace.to_csv(out / TRACE_CSV)
        doc.update({"status": "left_tube", "event_time": exc.time,
                    "events": exc.trace.events if exc.trace is not None else []})
        _write(out, METRICS_JSON, doc)
        raise
    trace.to_csv(out / TRACE_CSV)
    try:
        metrics = orbital_convergence_metrics(trace).to_dict()
    except InsufficientData as exc:
        metrics = {"final_distance": float(trace.z_norms[-1]), "note": str(exc)}
    doc.update(
        {
            "status": "ok",
            "gain": job.gain if job.gain in ("riccati", "analytic") else "file",
            "time_period": trace.period_time,
            "metrics": metrics,
            "per_period_distance": trace.per_period().tolist(),
            "noise_floor": trace.noise_floor,
            "events": trace.events,
        }
    )
    return _write(out, METRICS_JSON, doc)
