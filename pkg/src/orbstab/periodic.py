"""Grid-sampled periodic matrix functions: linear periodic systems and gain schedules.

Samples live on ``s0 + s_T * k / K`` for ``k = 0..K`` (the last sample closes
the period) and are interpolated with periodic cubic splines.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .serialize import dumps, fmt_float

Array = np.ndarray

PERIODIC_TOL = 1e-9


def _close_period(samples: Array, what: str) -> Array:
    samples = np.array(samples, dtype=float, copy=True)
    gap = float(np.max(np.abs(samples[0] - samples[-1]))) if samples.size else 0.0
    if gap > PERIODIC_TOL:
        raise ValueError(f"{what}: first and last samples differ by {gap:.3e}")
    samples[-1] = samples[0]
    return samples


def _spline(s_grid: Array, samples: Array) -> CubicSpline:
    return CubicSpline(s_grid, samples, axis=0, bc_type="periodic", extrapolate="periodic")


def periodic_mean(values: Array) -> Array:
    """Mean over one period of samples that include the closing endpoint."""
    return np.mean(np.asarray(values)[:-1], axis=0)


def periodic_derivative(s_grid: Array, samples: Array) -> Array:
    """Spectral derivative along axis 0 of uniformly spaced periodic samples."""
    y = np.asarray(samples, dtype=float)[:-1]
    K = y.shape[0]
    period = s_grid[-1] - s_grid[0]
    freqs = np.fft.fftfreq(K, d=period / K) * 2j * np.pi
    if K % 2 == 0:
        freqs[K // 2] = 0.0
    shape = (K,) + (1,) * (y.ndim - 1)
    d = np.real(np.fft.ifft(np.fft.fft(y, axis=0) * freqs.reshape(shape), axis=0))
    return np.concatenate([d, d[:1]], axis=0)


@dataclass(frozen=True)
class PeriodicLinearSystem:
    """``d/dt x = A(s) x + B(s) u`` with ``ds/dt = rho(s)``, optionally constrained.

    ``constraint`` rows ``C(s)`` define the admissible subspace ``C(s) x = 0``;
    ``omega`` is the projector used for ``K Omega`` gain closures and for
    re-projection onto that subspace.
    """

    s_grid: Array
    A: Array
    B: Array
    rho: Array
    constraint: Array | None = None
    omega: Array | None = None
    name: str = ""

    def __post_init__(self):
        s = np.asarray(self.s_grid, dtype=float)
        if s.ndim != 1 or s.size < 4 or np.any(np.diff(s) <= 0):
            raise ValueError("s_grid must be strictly increasing with at least 4 samples")
        object.__setattr__(self, "s_grid", s)
        object.__setattr__(self, "A", _close_period(self.A, "A"))
        object.__setattr__(self, "B", _close_period(self.B, "B"))
        rho = _close_period(self.rho, "rho")
        if np.any(rho <= 0):
            raise ValueError("rho must be strictly positive")
        object.__setattr__(self, "rho", rho)
        if self.constraint is not None:
            object.__setattr__(self, "constraint", _close_period(self.constraint, "constraint"))
        if self.omega is not None:
            object.__setattr__(self, "omega", _close_period(self.omega, "omega"))

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def s0(self) -> float:
        return float(self.s_grid[0])

    @property
    def period(self) -> float:
        return float(self.s_grid[-1] - self.s_grid[0])

    @property
    def time_period(self) -> float:
        """Duration of one lap, the integral of ``ds / rho``."""
        return float(periodic_mean(1.0 / self.rho) * self.period)

    @cached_property
    def _splines(self) -> dict:
        sp = {
            "A": _spline(self.s_grid, self.A),
            "B": _spline(self.s_grid, self.B),
            "rho": _spline(self.s_grid, self.rho),
        }
        if self.constraint is not None:
            sp["C"] = _spline(self.s_grid, self.constraint)
        if self.omega is not None:
            sp["omega"] = _spline(self.s_grid, self.omega)
        return sp

    def A_at(self, s: float) -> Array:
        return self._splines["A"](s)

    def B_at(self, s: float) -> Array:
        return self._splines["B"](s)

    def rho_at(self, s: float) -> float:
        return float(self._splines["rho"](s))

    def constraint_at(self, s: float) -> Array | None:
        return None if self.constraint is None else self._splines["C"](s)

    def omega_at(self, s: float) -> Array | None:
        return None if self.omega is None else self._splines["omega"](s)

    def projector_at(self, s: float) -> Array:
        """Projector onto the admissible subspace (``omega`` if stored, else orthogonal)."""
        if self.omega is not None:
            return self.omega_at(s)
        C = self.constraint_at(s)
        if C is None:
            return np.eye(self.k)
        return np.eye(self.k) - C.T @ np.linalg.solve(C @ C.T, C)

    @property
    def drift_s_domain(self) -> Array:
        """Drift samples of the ``d/ds`` form, ``A(s) / rho(s)``."""
        return self.A / self.rho[:, None, None]

    @property
    def input_s_domain(self) -> Array:
        return self.B / self.rho[:, None, None]

    def with_matrices(self, A=None, B=None, name=None) -> "PeriodicLinearSystem":
        return PeriodicLinearSystem(
            self.s_grid,
            self.A if A is None else A,
            self.B if B is None else B,
            self.rho,
            self.constraint,
            self.omega,
            self.name if name is None else name,
        )

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "period": self.period,
            "s_grid": self.s_grid.tolist(),
            "A": self.A.reshape(len(self.s_grid), -1).tolist(),
            "B": self.B.reshape(len(self.s_grid), -1).tolist(),
            "shape": {"k": self.k, "m": self.m},
            "rho": self.rho.tolist(),
        }
        if self.constraint is not None:
            out["constraint"] = self.constraint.reshape(len(self.s_grid), -1).tolist()
            out["shape"]["c"] = self.constraint.shape[1]
        if self.omega is not None:
            out["omega"] = self.omega.reshape(len(self.s_grid), -1).tolist()
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "PeriodicLinearSystem":
        K = len(doc["s_grid"])
        k, m = doc["shape"]["k"], doc["shape"]["m"]
        C = None
        if "constraint" in doc:
            C = np.array(doc["constraint"]).reshape(K, doc["shape"]["c"], k)
        W = np.array(doc["omega"]).reshape(K, k, k) if "omega" in doc else None
        return cls(
            np.array(doc["s_grid"]),
            np.array(doc["A"]).reshape(K, k, k),
            np.array(doc["B"]).reshape(K, k, m),
            np.array(doc["rho"]),
            C,
            W,
            doc.get("name", ""),
        )

    def to_json(self, path) -> None:
        Path(path).write_text(dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path) -> "PeriodicLinearSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class GainSchedule:
    """Periodic feedback matrix ``K(s)`` of shape ``(m, k)``."""

    s_grid: Array
    K: Array
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "s_grid", np.asarray(self.s_grid, dtype=float))
        K = _close_period(self.K, "K")
        if not np.all(np.isfinite(K)):
            raise ValueError("gain samples must be finite")
        object.__setattr__(self, "K", K)

    @property
    def period(self) -> float:
        return float(self.s_grid[-1] - self.s_grid[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.K.shape[1], self.K.shape[2]

    @cached_property
    def _spline(self) -> CubicSpline:
        return _spline(self.s_grid, self.K)

    def at(self, s: float) -> Array:
        return self._spline(s)

    def to_csv(self, path) -> None:
        m, k = self.shape
        header = ["s"] + [f"K[{i}][{j}]" for i in range(m) for j in range(k)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for s, Ks in zip(self.s_grid, self.K):
                w.writerow([fmt_float(s)] + [fmt_float(v) for v in Ks.ravel()])

    @classmethod
    def from_csv(cls, path, name: str = "") -> "GainSchedule":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        last = header[-1]
        m = int(last[2 : last.index("]")]) + 1
        k = int(last[last.rindex("[") + 1 : -1]) + 1
        return cls(body[:, 0], body[:, 1:].reshape(-1, m, k), name)
