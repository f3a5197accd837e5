"""Command line front end: ``orbstab analyze|synthesize|simulate|report --config C --out D``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (including
a trajectory leaving the projection tube), 4 Riccati sweeps not converging.
Failures print one JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import JobConfig, load_config
from .errors import BlowUp, ConfigError, LeftTube, NotConverged, OrbstabError
from .pipeline import run_analyze, run_simulate, run_synthesize
from .report import run_report

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 2, 3, 4


def _error(kind: str, message: str, code: int, **extra) -> dict:
    doc = {"error": kind, "message": message, "exit_code": code}
    doc.update(extra)
    return doc


def run_job(command: str, job: JobConfig, out: Path, config_dir: Path) -> tuple[int, dict | None]:
    """Run one stage for one job; returns ``(exit_code, error_doc)``."""
    try:
        if command == "analyze":
            run_analyze(job, out)
        elif command == "synthesize":
            run_synthesize(job, out)
        elif command == "simulate":
            run_simulate(job, out, config_dir)
        else:
            run_report(job, out)
    except ConfigError as exc:
        return EXIT_CONFIG, _error("ConfigError", str(exc), EXIT_CONFIG)
    except NotConverged as exc:
        return EXIT_NOT_CONVERGED, _error("NotConverged", str(exc), EXIT_NOT_CONVERGED,
                                          periodicity_gap=exc.gap, sweeps=exc.sweeps)
    except LeftTube as exc:
        return EXIT_NUMERIC, _error("LeftTube", str(exc), EXIT_NUMERIC, event_time=exc.time)
    except BlowUp as exc:
        return EXIT_NUMERIC, _error("BlowUp", str(exc), EXIT_NUMERIC, location=exc.location)
    except (OrbstabError, ArithmeticError, ValueError, RuntimeError) as exc:
        return EXIT_NUMERIC, _error(type(exc).__name__, str(exc), EXIT_NUMERIC)
    return EXIT_OK, None


def _run_star(args):
    return run_job(*args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"orbstab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "orbit residual, frame invariants, transverse linearizations and open-loop spectra",
        "synthesize": "periodic Riccati gain, closed-loop spectra, trace sums and growth heuristic",
        "simulate": "nonlinear closed-loop simulation from simulation.x0",
        "report": "figures and summary tables from artifacts in --out",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, required=True, help="YAML job configuration")
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        jobs, workers = load_config(args.config)
    except ConfigError as exc:
        print(json.dumps(_error("ConfigError", str(exc), EXIT_CONFIG)), file=sys.stderr)
        return EXIT_CONFIG
    config_dir = args.config.resolve().parent
    tasks = [(args.command, job, args.out / job.label if job.label else args.out, config_dir) for job in jobs]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_star, tasks))
    else:
        results = [run_job(*t) for t in tasks]
    code = EXIT_OK
    for (_, job, _, _), (rc, err) in zip(tasks, results):
        if err is not None:
            if job.label:
                err["job"] = job.label
            print(json.dumps(err), file=sys.stderr)
        code = max(code, rc)
    return code


if __name__ == "__main__":
    sys.exit(main())
