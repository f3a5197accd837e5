"""Figures and summary tables built from artifacts already on disk."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from . import __version__
from .config import JobConfig
from .errors import ConfigError
from .periodic import GainSchedule
from .pipeline import ANALYZE_JSON, GAIN_CSV, METRICS_JSON, SYNTH_JSON, TRACE_CSV
from .serialize import dumps, fmt_float

PNG_META = {"Software": None}


def _load_json(path: Path) -> dict | None:
    return json.loads(path.read_text()) if path.exists() else None


def _read_trace(path: Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return {name: body[:, i] for i, name in enumerate(header)}


def plot_gain(gain: GainSchedule, path: Path) -> None:
    m, k = gain.shape
    fig = Figure(figsize=(6, 3.5))
    ax = fig.subplots()
    for i in range(m):
        for j in range(k):
            ax.plot(gain.s_grid, gain.K[:, i, j], label=f"K[{i}][{j}]")
    ax.set_xlabel("s")
    ax.set_ylabel("gain entry")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)


def plot_spectra(synth: dict, path: Path) -> None:
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    markers = iter("os^vD<>p")
    for gname, block in sorted(synth["gains"].items()):
        for sname in ("tvl", "comparison"):
            ex = np.array(block["spectra"][sname]["exponents"])
            ax.scatter(ex[:, 0], ex[:, 1], marker=next(markers, "x"), label=f"{sname} / {gname}")
    ax.axvline(0.0, color="k", lw=0.5)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title("closed-loop characteristic exponents")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)


def plot_trace(trace: dict, path: Path) -> None:
    fig = Figure(figsize=(6, 3.5))
    ax = fig.subplots()
    z = np.maximum(trace["znorm"], 1e-300)
    ax.semilogy(trace["t"], z)
    ax.set_xlabel("t")
    ax.set_ylabel("|z|")
    ax.set_title("distance to the orbit")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_META)


def _summary_rows(analyze, synth, metrics) -> list[tuple[str, object]]:
    rows = []
    if analyze:
        rows.append(("orbit_residual", analyze["orbit_residual"]["max_residual"]))
        rows.append(("time_period", analyze["time_period"]))
    if synth:
        rows.append(("riccati_sweeps", synth["riccati"]["sweeps"]))
        rows.append(("riccati_gap", synth["riccati"]["periodicity_gap"]))
        for gname, block in sorted(synth["gains"].items()):
            for sname in ("tvl", "comparison"):
                spec = block["spectra"][sname]
                for i, (re, im) in enumerate(spec["exponents"]):
                    rows.append((f"{gname}.{sname}.exponent_{i}.re", re))
                    rows.append((f"{gname}.{sname}.exponent_{i}.im", im))
                rows.append((f"{gname}.{sname}.verdict", spec["verdict"]))
            rows.append((f"{gname}.trace_sums_passed", block["trace_sums"]["passed"]))
            rows.append((f"{gname}.growth_condition_holds", block["growth_heuristic"]["condition_holds"]))
    if metrics:
        rows.append(("simulation_status", metrics["status"]))
        for key, val in sorted(metrics.get("metrics", {}).items()):
            if not isinstance(val, list):
                rows.append((f"simulation.{key}", val))
    return rows


def run_report(job: JobConfig, out: Path) -> dict:
    """Render PNG figures and ``summary.csv`` / ``summary.json`` from the artifacts in ``out``."""
    analyze = _load_json(out / ANALYZE_JSON)
    synth = _load_json(out / SYNTH_JSON)
    metrics = _load_json(out / METRICS_JSON)
    if analyze is None and synth is None and metrics is None:
        raise ConfigError(f"no artifacts in {str(out)!r}; run analyze, synthesize or simulate first")
    figures = []
    if (out / GAIN_CSV).exists():
        plot_gain(GainSchedule.from_csv(out / GAIN_CSV), out / "gain.png")
        figures.append("gain.png")
    if synth:
        plot_spectra(synth, out / "spectra.png")
        figures.append("spectra.png")
    if (out / TRACE_CSV).exists():
        plot_trace(_read_trace(out / TRACE_CSV), out / "trace.png")
        figures.append("trace.png")
    rows = _summary_rows(analyze, synth, metrics)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "value"])
        for key, val in rows:
            w.writerow([key, fmt_float(val) if isinstance(val, float) else val])
    hashes = {name: doc["config_hash"] for name, doc in
              (("analyze", analyze), ("synthesize", synth), ("simulate", metrics)) if doc}
    doc = {
        "kind": "report",
        "version": __version__,
        "config_hash": job.config_hash,
        "config": job.to_dict(),
        "source_hashes": hashes,
        "stale_sources": sorted(k for k, h in hashes.items() if h != job.config_hash),
        "figures": figures,
        "summary": dict(rows),
    }
    (out / "summary.json").write_text(dumps(doc))
    return doc
