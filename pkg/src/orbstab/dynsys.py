"""Control-affine systems, periodic orbit parameterizations and a system registry.

A system is ``xdot = f(x) + g(x) u``. An orbit is a closed, regular curve
``s -> xs(s)`` with ``xs(s + s_T) = xs(s)``. Derivatives that are not supplied
analytically are replaced by 5-point central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateTangent, MissingJacobian, OrbitNotClosed

Array = np.ndarray


def _stencil1(fun: Callable[[float], Array], s: float, h: float) -> Array:
    return (-fun(s + 2 * h) + 8 * fun(s + h) - 8 * fun(s - h) + fun(s - 2 * h)) / (12 * h)


def _stencil2(fun: Callable[[float], Array], s: float, h: float) -> Array:
    return (
        -fun(s + 2 * h) + 16 * fun(s + h) - 30 * fun(s) + 16 * fun(s - h) - fun(s - 2 * h)
    ) / (12 * h * h)


def state_step(x: Array, scale: float = 1e-5) -> float:
    """FD step for derivatives with respect to the state."""
    return scale * (1.0 + float(np.linalg.norm(x)))


def fd_jacobian(fun: Callable[[Array], Array], x: Array, h: float | None = None) -> Array:
    """5-point central-difference Jacobian of a vector (or matrix) valued map.

    The result has shape ``fun(x).shape + (n,)``.
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        h = state_step(x)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = 1.0
        cols.append(_stencil1(lambda t: np.asarray(fun(x + t * e), dtype=float), 0.0, h))
    jac = np.stack(cols, axis=-1)
    if not np.all(np.isfinite(jac)):
        raise MissingJacobian("finite-difference Jacobian produced non-finite values")
    return jac


@dataclass(frozen=True)
class ControlAffineSystem:
    """``xdot = f(x) + g(x) u`` with optional analytic derivatives.

    ``dg`` is a list of ``m`` callables returning the Jacobian of each input
    column. ``nominal_input`` is the periodic feed-forward ``upsilon(s)`` needed
    when the orbit only exists under a non-zero input.
    """

    n: int
    m: int
    f: Callable[[Array], Array]
    g: Callable[[Array], Array]
    df: Callable[[Array], Array] | None = None
    dg: Sequence[Callable[[Array], Array]] | None = None
    nominal_input: Callable[[float], Array] | None = None
    dnominal_input: Callable[[float], Array] | None = None
    name: str = ""

    def __post_init__(self):
        if self.n < 2 or self.m < 1:
            raise ValueError("need n >= 2 and m >= 1")
        if self.dg is not None and len(self.dg) != self.m:
            raise ValueError("dg must hold one Jacobian per input column")

    def drift(self, x: Array) -> Array:
        return np.asarray(self.f(x), dtype=float).reshape(self.n)

    def input_matrix(self, x: Array) -> Array:
        return np.asarray(self.g(x), dtype=float).reshape(self.n, self.m)

    def jacobian_f(self, x: Array) -> Array:
        if self.df is not None:
            return np.asarray(self.df(x), dtype=float).reshape(self.n, self.n)
        return fd_jacobian(self.drift, x)

    def jacobian_g(self, x: Array, i: int) -> Array:
        if self.dg is not None:
            return np.asarray(self.dg[i](x), dtype=float).reshape(self.n, self.n)
        return fd_jacobian(lambda y: self.input_matrix(y)[:, i], x)

    def upsilon(self, s: float) -> Array:
        if self.nominal_input is None:
            return np.zeros(self.m)
        return np.asarray(self.nominal_input(s), dtype=float).reshape(self.m)

    def dupsilon(self, s: float, h: float) -> Array:
        if self.nominal_input is None:
            return np.zeros(self.m)
        if self.dnominal_input is not None:
            return np.asarray(self.dnominal_input(s), dtype=float).reshape(self.m)
        return _stencil1(self.upsilon, s, h)

    def vector_field(self, x: Array, u: Array | None = None) -> Array:
        dx = self.drift(x)
        if u is not None:
            dx = dx + self.input_matrix(x) @ np.atleast_1d(u)
        return dx


@dataclass(frozen=True)
class OrbitParameterization:
    """Closed regular curve ``s -> xs(s)`` of period ``s_T`` starting at ``s0``."""

    xs: Callable[[float], Array]
    s_T: float
    s0: float = 0.0
    dxs: Callable[[float], Array] | None = None
    d2xs: Callable[[float], Array] | None = None

    def __post_init__(self):
        if not self.s_T > 0:
            raise ValueError("s_T must be positive")
        gap = np.linalg.norm(self.point(self.s0) - self.point(self.s0 + self.s_T))
        if gap > 1e-10:
            raise OrbitNotClosed(f"xs(s0) and xs(s0 + s_T) differ by {gap:.3e}")

    @property
    def fd_step(self) -> float:
        return self.s_T * 1e-4

    def point(self, s: float) -> Array:
        return np.asarray(self.xs(s), dtype=float)

    def tangent(self, s: float) -> Array:
        if self.dxs is not None:
            return np.asarray(self.dxs(s), dtype=float)
        return _stencil1(self.point, s, self.fd_step)

    def curvature(self, s: float) -> Array:
        if self.d2xs is not None:
            return np.asarray(self.d2xs(s), dtype=float)
        if self.dxs is not None:
            return _stencil1(self.tangent, s, self.fd_step)
        return _stencil2(self.point, s, self.fd_step)

    def wrap(self, s: float) -> float:
        """Reduce ``s`` into ``[s0, s0 + s_T)``."""
        r = self.s0 + np.mod(s - self.s0, self.s_T)
        return float(self.s0 if r >= self.s0 + self.s_T else r)

    def grid(self, size: int, endpoint: bool = True) -> Array:
        k = np.arange(size + 1 if endpoint else size)
        return self.s0 + self.s_T * k / size

    @property
    def dim(self) -> int:
        return self.point(self.s0).size


def orbit_tangent(orbit: OrbitParameterization, s: float) -> Array:
    """Tangent ``xs'(s)``; raises :class:`DegenerateTangent` on a singular point."""
    if not np.isfinite(s):
        raise ValueError("s must be finite")
    t = orbit.tangent(s)
    if np.linalg.norm(t) < 1e-12:
        raise DegenerateTangent(f"|xs'({s})| < 1e-12, parameterization is not regular")
    return t


@dataclass(frozen=True)
class OrbitResidualReport:
    s_grid: Array
    residuals: Array
    max_residual: float
    s_at_max: float
    tolerance: float = 1e-8

    @property
    def certified(self) -> bool:
        return self.max_residual < self.tolerance

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "s_at_max": self.s_at_max,
            "certified": self.certified,
            "tolerance": self.tolerance,
        }


def verify_orbit(
    system: ControlAffineSystem, orbit: OrbitParameterization, grid_size: int = 256
) -> OrbitResidualReport:
    """Max over a grid of ``|Omega(s) (f + g upsilon)(xs(s))|``.

    A vanishing residual means the velocity field is tangent to the curve
    everywhere, i.e. the curve is an orbit of the (driven) system.
    """
    from .projection import frame_at

    if grid_size < 8:
        raise ValueError("grid_size must be at least 8")
    grid = orbit.grid(grid_size, endpoint=False)
    res = np.empty(grid.size)
    for i, s in enumerate(grid):
        fr = frame_at(system, orbit, s)
        v = system.drift(fr.x_on_orbit) + system.input_matrix(fr.x_on_orbit) @ system.upsilon(s)
        res[i] = np.linalg.norm(fr.omega @ v)
    k = int(np.argmax(res))
    return OrbitResidualReport(grid, res, float(res[k]), float(grid[k]))


def a_matrix(
    system: ControlAffineSystem,
    orbit: OrbitParameterization,
    frame,
    s: float,
    include_upsilon_prime: bool = False,
) -> Array:
    """First-approximation matrix ``A(s)`` along the orbit.

    With a nominal input this is ``Df + sum_i Dg_i upsilon_i``, plus
    ``g upsilon' Gamma`` when ``include_upsilon_prime`` is set. That last term
    drops out of every transverse construction because ``Gamma dz = 0``.
    """
    x = orbit.point(s) if frame is None else frame.x_on_orbit
    A = system.jacobian_f(x)
    if system.nominal_input is not None:
        ups = system.upsilon(s)
        for i in range(system.m):
            A = A + system.jacobian_g(x, i) * ups[i]
        if include_upsilon_prime:
            if frame is None:
                from .projection import frame_at

                frame = frame_at(system, orbit, s)
            dups = system.dupsilon(s, orbit.fd_step)
            A = A + np.outer(system.input_matrix(x) @ dups, frame.gamma)
    if not np.all(np.isfinite(A)):
        raise MissingJacobian(f"non-finite Jacobian at s={s}")
    return A


def check_jacobians(
    system: ControlAffineSystem,
    points: Sequence[Array],
    rtol: float = 1e-5,
) -> float:
    """Largest relative mismatch between analytic and FD Jacobians over ``points``."""
    worst = 0.0
    for x in points:
        pairs = []
        if system.df is not None:
            pairs.append((system.jacobian_f(x), fd_jacobian(system.drift, x)))
        if system.dg is not None:
            for i in range(system.m):
                pairs.append(
                    (system.jacobian_g(x, i), fd_jacobian(lambda y: system.input_matrix(y)[:, i], x))
                )
        for exact, approx in pairs:
            scale = max(1.0, float(np.max(np.abs(exact))))
            worst = max(worst, float(np.max(np.abs(exact - approx))) / scale)
    return worst


# --- registry ---

SystemFactory = Callable[[Mapping[str, float]], "tuple[ControlAffineSystem, OrbitParameterization]"]


@dataclass
class _Entry:
    factory: SystemFactory
    defaults: dict = field(default_factory=dict)
    doc: str = ""


_REGISTRY: dict[str, _Entry] = {}


def register_system(name: str, defaults: Mapping[str, float] | None = None):
    """Decorator registering ``factory(params) -> (system, orbit)`` under ``name``."""

    def deco(factory: SystemFactory) -> SystemFactory:
        _REGISTRY[name] = _Entry(factory, dict(defaults or {}), (factory.__doc__ or "").strip())
        return factory

    return deco


def registered_systems() -> list[str]:
    return sorted(_REGISTRY)


def system_defaults(name: str) -> dict:
    if name not in _REGISTRY:
        raise KeyError(f"unknown system {name!r}")
    return dict(_REGISTRY[name].defaults)


def build_system(
    name: str, params: Mapping[str, float] | None = None
) -> tuple[ControlAffineSystem, OrbitParameterization]:
    if name not in _REGISTRY:
        raise KeyError(f"unknown system {name!r}")
    entry = _REGISTRY[name]
    merged = dict(entry.defaults)
    for key, val in (params or {}).items():
        if key not in entry.defaults:
            raise KeyError(f"system {name!r} has no parameter {key!r}")
        merged[key] = float(val)
    return entry.factory(merged)


@register_system("bh-circle", defaults={"a": 1.0})
def _bh_circle(params):
    """Three-state system with a family of circular orbits of radius ``a`` in x3 = 0.

    x1' = x2 + x1 x3 + x1 u, x2' = -x1 + x2 x3 + x2 u, x3' = u.
    """
    a = params["a"]
    if a <= 0:
        raise ValueError("a must be positive")

    def f(x):
        return np.array([x[1] + x[0] * x[2], -x[0] + x[1] * x[2], 0.0])

    def g(x):
        return np.array([[x[0]], [x[1]], [1.0]])

    def df(x):
        return np.array([[x[2], 1.0, x[0]], [-1.0, x[2], x[1]], [0.0, 0.0, 0.0]])

    def dg0(x):
        return np.diag([1.0, 1.0, 0.0])

    system = ControlAffineSystem(3, 1, f, g, df=df, dg=[dg0], name="bh-circle")
    orbit = OrbitParameterization(
        xs=lambda s: np.array([a * np.sin(s), a * np.cos(s), 0.0]),
        dxs=lambda s: np.array([a * np.cos(s), -a * np.sin(s), 0.0]),
        d2xs=lambda s: np.array([-a * np.sin(s), -a * np.cos(s), 0.0]),
        s_T=2 * np.pi,
    )
    return system, orbit


@register_system("hopf", defaults={"mu": 1.0, "omega": 1.0})
def _hopf(params):
    """Planar Hopf normal form with a stable limit cycle of radius sqrt(mu); input on x2."""
    mu, w = params["mu"], params["omega"]
    if mu <= 0 or w <= 0:
        raise ValueError("mu and omega must be positive")
    r = np.sqrt(mu)

    def f(x):
        q = mu - x[0] ** 2 - x[1] ** 2
        return np.array([-w * x[1] + x[0] * q, w * x[0] + x[1] * q])

    def df(x):
        q = mu - x[0] ** 2 - x[1] ** 2
        return np.array(
            [
                [q - 2 * x[0] ** 2, -w - 2 * x[0] * x[1]],
                [w - 2 * x[0] * x[1], q - 2 * x[1] ** 2],
            ]
        )

    system = ControlAffineSystem(
        2, 1, f, lambda x: np.array([[0.0], [1.0]]), df=df, dg=[lambda x: np.zeros((2, 2))], name="hopf"
    )
    orbit = OrbitParameterization(
        xs=lambda s: r * np.array([np.cos(s), np.sin(s)]),
        dxs=lambda s: r * np.array([-np.sin(s), np.cos(s)]),
        d2xs=lambda s: -r * np.array([np.cos(s), np.sin(s)]),
        s_T=2 * np.pi,
    )
    return system, orbit


@register_system("di-circle", defaults={"a": 1.0})
def _di_circle(params):
    """Double integrator x1' = x2, x2' = u following a circle under the feed-forward -a sin(s)."""
    a = params["a"]
    if a <= 0:
        raise ValueError("a must be positive")
    system = ControlAffineSystem(
        2,
        1,
        f=lambda x: np.array([x[1], 0.0]),
        g=lambda x: np.array([[0.0], [1.0]]),
        df=lambda x: np.array([[0.0, 1.0], [0.0, 0.0]]),
        dg=[lambda x: np.zeros((2, 2))],
        nominal_input=lambda s: np.array([-a * np.sin(s)]),
        dnominal_input=lambda s: np.array([-a * np.cos(s)]),
        name="di-circle",
    )
    orbit = OrbitParameterization(
        xs=lambda s: a * np.array([np.sin(s), np.cos(s)]),
        dxs=lambda s: a * np.array([np.cos(s), -np.sin(s)]),
        d2xs=lambda s: -a * np.array([np.sin(s), np.cos(s)]),
        s_T=2 * np.pi,
    )
    return system, orbit
