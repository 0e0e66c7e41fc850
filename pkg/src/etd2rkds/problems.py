"""Benchmark reaction-diffusion problems on the unit square/cube.

* Allen-Cahn with a manufactured solution ``u = exp(-lam t) prod sin(pi x_i)``,
* a source ``rho u / (1 - u)`` that is only locally Lipschitz,
* the FitzHugh-Nagumo activator-inhibitor system.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .operators import Grid, build_grid
from .stepper import SourceFunction


class DomainError(FloatingPointError):
    """The solution left the region where the source is defined."""


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    bounds: Tuple[Tuple[float, float], ...]
    kappa: Tuple[float, ...]
    q: float
    T: float
    initial: Callable[[Tuple[np.ndarray, ...]], object]
    source: SourceFunction
    exact: Optional[Callable[[Tuple[np.ndarray, ...], float], np.ndarray]] = None
    reference_N: Optional[int] = None
    coarse: int = 16
    params: Dict[str, float] = field(default_factory=dict)
    # components entering E(N); None means all of them
    error_components: Optional[Tuple[int, ...]] = None

    @property
    def components(self) -> int:
        return len(self.kappa)

    def grid(self, m) -> Grid:
        return build_grid(self.dim, self.bounds, m)

    def initial_state(self, grid: Grid):
        return self.initial(grid.mesh())

    def exact_on(self, grid: Grid, t: float) -> np.ndarray:
        if self.exact is None:
            raise ValueError(f"{self.name} has no exact solution")
        return self.exact(grid.mesh(), t)


def _sine_product(coords) -> np.ndarray:
    out = np.sin(np.pi * coords[0])
    for c in coords[1:]:
        out = out * np.sin(np.pi * c)
    return out


def allen_cahn(dim: int = 2, lam: float = 1.0, kappa: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """``u_t - kappa Lap u = u(1 - u^2) + psi`` with exact ``exp(-lam t) u0``.

    ``-Lap u0 = dim pi^2 u0`` for the sine product, which fixes ``psi``.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    lap_coef = kappa * dim * np.pi**2

    # psi = (lap_coef - lam) e u0 - e u0 + e^3 u0^3, with u0 and u0^3 cached per grid
    def forcing(u0, t):
        e = np.exp(-lam * t)
        return (lap_coef - lam - 1.0) * e * u0 + e**3 * u0**3

    def func(t, u, cache):
        u0, u0_cubed = cache
        e = np.exp(-lam * t)
        out = u * u
        np.subtract(1.0, out, out=out)
        out *= u
        out += ((lap_coef - lam - 1.0) * e) * u0
        out += (e**3) * u0_cubed
        return out

    def prepare(coords):
        u0 = _sine_product(coords)
        return u0, u0**3

    source = SourceFunction(func, prepare=prepare)
    source.forcing = forcing
    return ProblemSpec(
        name=f"allen-cahn-{dim}d",
        dim=dim,
        bounds=((0.0, 1.0),) * dim,
        kappa=(float(kappa),),
        q=0.0,
        T=float(T),
        initial=_sine_product,
        source=source,
        exact=lambda coords, t: np.exp(-lam * t) * _sine_product(coords),
        coarse=16 if dim == 2 else 10,
        params={"lam": lam, "kappa": kappa, "T": T},
    )


def singular_source(
    dim: int = 2, rho: float = 0.1, kappa: float = 1.0, q: float = 1.0, T: float = 1.0, amplitude: float = 0.99
) -> ProblemSpec:
    """``f(u) = rho u / (1 - u)``; raises :class:`DomainError` once ``u >= 1``."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")

    def func(t, u, _):
        umax = float(np.max(u))
        if umax >= 1.0:
            raise DomainError(f"u reached {umax:.6g} >= 1 at t={t:.6g}; source undefined")
        return rho * u / (1.0 - u)

    return ProblemSpec(
        name=f"singular-source-{dim}d",
        dim=dim,
        bounds=((0.0, 1.0),) * dim,
        kappa=(float(kappa),),
        q=float(q),
        T=float(T),
        initial=lambda coords: amplitude * _sine_product(coords),
        source=SourceFunction(func, autonomous=True),
        reference_N=512 if dim == 2 else 320,
        coarse=16 if dim == 2 else 10,
        params={"rho": rho, "kappa": kappa, "q": q, "T": T, "amplitude": amplitude},
    )


def fhn(
    alpha: float = 1.0,
    eps: float = 1.0,
    kappa_u: float = 0.01,
    kappa_v: float = 10.0,
    sigma: float = 0.55,
    T: float = 1.0,
) -> ProblemSpec:
    """FitzHugh-Nagumo: ``u - u^3/3 - v`` and ``eps (u - alpha v)``; Gaussian bump for ``u``."""

    def initial(coords):
        x, y = coords
        u0 = np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / sigma**2)
        return (u0, np.zeros_like(u0))

    def func(t, uv, _):
        u, v = uv
        return (u - u**3 / 3.0 - v, eps * (u - alpha * v))

    return ProblemSpec(
        name="fhn-2d",
        dim=2,
        bounds=((0.0, 1.0),) * 2,
        kappa=(float(kappa_u), float(kappa_v)),
        q=0.0,
        T=float(T),
        initial=initial,
        source=SourceFunction(func, autonomous=True, components=2),
        reference_N=512,
        coarse=16,
        params={"alpha": alpha, "eps": eps, "kappa_u": kappa_u, "kappa_v": kappa_v, "sigma": sigma, "T": T},
        error_components=(0,),
    )


_ALIASES = {
    "allen-cahn-2d": (allen_cahn, {"dim": 2}),
    "allencahn2d": (allen_cahn, {"dim": 2}),
    "allen-cahn-3d": (allen_cahn, {"dim": 3}),
    "allencahn3d": (allen_cahn, {"dim": 3}),
    "singular-source-2d": (singular_source, {"dim": 2}),
    "singularsource2d": (singular_source, {"dim": 2}),
    "singular-source-3d": (singular_source, {"dim": 3}),
    "singularsource3d": (singular_source, {"dim": 3}),
    "fhn-2d": (fhn, {}),
    "fhn2d": (fhn, {}),
    "fhn": (fhn, {}),
}

PROBLEM_NAMES = ("allen-cahn-2d", "allen-cahn-3d", "singular-source-2d", "singular-source-3d", "fhn-2d")


def get_problem(name: str, **overrides) -> ProblemSpec:
    """Look up a problem by name; keyword overrides go to its constructor."""
    key = name.lower().replace("_", "-")
    if key not in _ALIASES:
        raise KeyError(f"unknown problem {name!r}; choose from {PROBLEM_NAMES}")
    ctor, fixed = _ALIASES[key]
    accepted = inspect.signature(ctor).parameters
    unknown = set(overrides) - set(accepted)
    if unknown:
        raise KeyError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    return ctor(**fixed, **overrides)


def manufactured_residual(problem: ProblemSpec, n_points: int = 20, seed: int = 0, h: float = 2e-3) -> float:
    """Max ``|u_t - kappa Lap u + q u - f(t, u)|`` of the exact solution at random interior points.

    Derivatives are central differences with one Richardson extrapolation
    (fourth order), so the check does not reuse any closed form of ``psi``.
    """
    if problem.exact is None:
        raise ValueError(f"{problem.name} has no exact solution")
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in problem.bounds]) + 0.05
    hi = np.array([b[1] for b in problem.bounds]) - 0.05
    pts = lo + (hi - lo) * rng.random((n_points, problem.dim))
    times = 0.05 + 0.9 * problem.T * rng.random(n_points)
    coords = tuple(pts[:, i] for i in range(problem.dim))
    u = lambda c, t: problem.exact(c, t)  # noqa: E731

    def d2(fn, step):
        return (fn(step) - 2 * fn(0.0) + fn(-step)) / step**2

    def richardson(deriv):
        return (4 * deriv(h / 2) - deriv(h)) / 3

    u_t = richardson(lambda s: (u(coords, times + s) - u(coords, times - s)) / (2 * s))
    lap = 0.0
    for ax in range(problem.dim):
        def shifted(s, ax=ax):
            c = list(coords)
            c[ax] = c[ax] + s
            return u(tuple(c), times)

        lap = lap + richardson(lambda s: d2(shifted, s))
    val = u(coords, times)
    # sources are pointwise, so an array of times broadcasts against the points
    cache = problem.source.prepare(coords) if problem.source.prepare else None
    f = problem.source.func(times, val, cache)
    res = u_t - problem.kappa[0] * lap + problem.q * val - f
    return float(np.max(np.abs(res)))
