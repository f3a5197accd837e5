"""Job configuration: YAML documents validated before any numerics run.

A document looks like::

    system: bh-circle
    params: {a: 1.0}          # a list value, e.g. {a: [0.5, 2.0]}, makes a sweep
    grid_size: 512
    weights: {Q: [1, 1, 1], Rw: [1]}
    gain: riccati             # riccati | analytic | path to a gain CSV
    simulation: {x0: [1.2, 0, 0.1], horizon_periods: 10}
    tolerances: {rtol: 1.0e-9, atol: 1.0e-11}

List-valued parameters expand to the cartesian product of jobs, each with its
own label used as output subdirectory name.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .dynsys import build_system, registered_systems, system_defaults
from .errors import ConfigError
from .serialize import dumps

TOP_LEVEL_KEYS = {"system", "params", "grid_size", "weights", "gain", "simulation", "tolerances", "seed", "workers"}
SIM_KEYS = {"x0", "horizon_periods", "samples_per_period"}
TOL_KEYS = {"rtol", "atol", "riccati_tol", "max_sweeps"}


@dataclass(frozen=True)
class JobConfig:
    system_name: str
    params: dict = field(default_factory=dict)
    grid_size: int = 512
    Q: list | None = None
    Rw: list | None = None
    gain: str = "riccati"
    x0: list | None = None
    horizon_periods: int = 10
    samples_per_period: int = 64
    rtol: float = 1e-9
    atol: float = 1e-11
    riccati_tol: float = 1e-8
    max_sweeps: int = 200
    seed: int = 0
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("label")
        return hashlib.sha256(dumps(doc).encode()).hexdigest()


def _float(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None
    return out


def _int(value, what: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(f"{what} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{what} must be >= {minimum}, got {value}")
    return int(value)


def _diag(value, size: int, what: str) -> list | None:
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != size:
        raise ConfigError(f"{what} must be a list of {size} diagonal entries")
    return [_float(v, what) for v in value]


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    extra = sorted(set(doc) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _sweep_label(params: dict, swept: list) -> str:
    return ",".join(f"{k}={params[k]:g}" for k in swept)


def expand_jobs(doc) -> list[JobConfig]:
    """Validate a parsed document and expand parameter sweeps."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(doc, TOP_LEVEL_KEYS, "config")
    name = doc.get("system")
    if not isinstance(name, str):
        raise ConfigError("config needs a 'system' name")
    if name not in registered_systems():
        raise ConfigError(f"unknown system {name!r}; known: {', '.join(registered_systems())}")
    defaults = system_defaults(name)
    raw_params = doc.get("params") or {}
    if not isinstance(raw_params, dict):
        raise ConfigError("params must be a mapping")
    unknown = sorted(set(raw_params) - set(defaults))
    if unknown:
        raise ConfigError(f"system {name!r} has no parameter(s) {', '.join(unknown)}")
    axes = {}
    for key, val in raw_params.items():
        vals = val if isinstance(val, list) else [val]
        if not vals:
            raise ConfigError(f"parameter {key!r} has an empty sweep list")
        axes[key] = [_float(v, f"params.{key}") for v in vals]
    swept = [k for k in sorted(axes) if isinstance(raw_params[k], list)]

    grid = _int(doc.get("grid_size", 512), "grid_size", 64)
    sim = doc.get("simulation") or {}
    tol = doc.get("tolerances") or {}
    weights = doc.get("weights") or {}
    for part, allowed, where in ((sim, SIM_KEYS, "simulation"), (tol, TOL_KEYS, "tolerances"),
                                 (weights, {"Q", "Rw"}, "weights")):
        if not isinstance(part, dict):
            raise ConfigError(f"{where} must be a mapping")
        _check_keys(part, allowed, where)
    gain = doc.get("gain", "riccati")
    if not isinstance(gain, str):
        raise ConfigError("gain must be 'riccati', 'analytic' or a CSV path")
    if gain == "analytic" and name != "bh-circle":
        raise ConfigError("the analytic gain is only available for bh-circle")

    jobs = []
    keys = sorted(axes)
    for combo in itertools.product(*(axes[k] for k in keys)):
        params = dict(defaults)
        params.update(dict(zip(keys, combo)))
        try:
            system, _ = build_system(name, params)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"invalid parameters {params}: {exc}") from None
        x0 = sim.get("x0")
        if x0 is not None:
            if not isinstance(x0, list) or len(x0) != system.n:
                raise ConfigError(f"simulation.x0 must list {system.n} numbers")
            x0 = [_float(v, "simulation.x0") for v in x0]
        jobs.append(
            JobConfig(
                system_name=name,
                params=params,
                grid_size=grid,
                Q=_diag(weights.get("Q"), system.n, "weights.Q"),
                Rw=_diag(weights.get("Rw"), system.m, "weights.Rw"),
                gain=gain,
                x0=x0,
                horizon_periods=_int(sim.get("horizon_periods", 10), "simulation.horizon_periods", 1),
                samples_per_period=_int(sim.get("samples_per_period", 64), "simulation.samples_per_period", 8),
                rtol=_float(tol.get("rtol", 1e-9), "tolerances.rtol"),
                atol=_float(tol.get("atol", 1e-11), "tolerances.atol"),
                riccati_tol=_float(tol.get("riccati_tol", 1e-8), "tolerances.riccati_tol"),
                max_sweeps=_int(tol.get("max_sweeps", 200), "tolerances.max_sweeps", 1),
                seed=_int(doc.get("seed", 0), "seed", 0),
                label=_sweep_label(params, swept),
            )
        )
    return jobs


def load_config(path) -> tuple[list[JobConfig], int]:
    """Parse and validate a config file; returns the jobs and the worker count."""
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    jobs = expand_jobs(doc)
    workers = _int(doc.get("workers", 1), "workers", 1)
    return jobs, workers
