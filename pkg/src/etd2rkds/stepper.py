"""ETD2RK time stepping with dimension splitting.

One step of the split scheme on ``u' + (A_1 + A_2) u = f(t, u)`` reads::

    W    = F1(tau A_1) F1(tau A_2) U + tau F2(tau A_1) F1(tau A_2) f(t_n, U)
    Unew = W + tau F3(tau A_1) [f(t_n + tau, W) - F1(tau A_2) f(t_n, U)]

with ``A_1`` the x-direction operator and ``A_2`` the sum of the remaining
directions, whose exponential factorizes into one factor per axis.  The
triple ``(F1, F2, F3)`` is either a rational family from
:mod:`etd2rkds.rational` or the exact ``(exp(-z), phi_1, phi_2)``.

The non-split baseline applies the same two stages with ``A_h`` itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .operators import Axis, Grid, build_operator, spectral_factor
from .rational import RationalScheme, get_scheme
from .tensor import SpectralSolver, from_vec, kron_axis_matrix, make_solver, to_vec

BACKENDS = ("spectral", "thomas", "sparse", "exact", "nonsplit")
REFERENCE_MAX_INTERIOR = 64
PHI_SERIES_SWITCH = 1e-4

State = Union[np.ndarray, Tuple[np.ndarray, ...]]


class StepAbort(FloatingPointError):
    """A source evaluation produced non-finite values."""


# -- source functions --------------------------------------------------------


class SourceFunction:
    """``f(t, u, grid)``; ``u`` is an array, or a tuple of arrays for systems.

    ``func`` receives ``(t, u, cache)`` where ``cache`` holds whatever
    ``prepare(coords)`` returned for the grid's mesh (e.g. a precomputed
    forcing profile), so per-step calls do not recompute grid-only data.
    """

    def __init__(self, func, prepare=None, autonomous: bool = False, components: int = 1):
        self.func = func
        self.prepare = prepare
        self.autonomous = autonomous
        self.components = components
        self._cache: Dict[Grid, object] = {}

    def _prepared(self, grid: Grid):
        if self.prepare is None:
            return None
        if grid not in self._cache:
            self._cache[grid] = self.prepare(grid.mesh())
        return self._cache[grid]

    def __call__(self, t: float, u: State, grid: Grid) -> State:
        return self.func(t, u, self._prepared(grid))


def zero_source(components: int = 1) -> SourceFunction:
    if components == 1:
        return SourceFunction(lambda t, u, c: np.zeros_like(u), autonomous=True)
    return SourceFunction(lambda t, u, c: tuple(np.zeros_like(x) for x in u), autonomous=True, components=components)


# -- phi functions -----------------------------------------------------------


def phi1(z):
    """``(1 - exp(-z)) / z``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < PHI_SERIES_SWITCH
    zs = np.where(small, 1.0, z)
    out = -np.expm1(-zs) / zs
    series = 1 - z / 2 + z**2 / 6 - z**3 / 24 + z**4 / 120
    return np.where(small, series, out)


def phi2(z):
    """``(z - 1 + exp(-z)) / z**2``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < PHI_SERIES_SWITCH
    zs = np.where(small, 1.0, z)
    out = (zs + np.expm1(-zs)) / zs**2
    series = 0.5 - z / 6 + z**2 / 24 - z**3 / 120 + z**4 / 720
    return np.where(small, series, out)


# -- plans ---------------------------------------------------------------------


@dataclass(frozen=True)
class StepperPlan:
    """Everything precomputed for one ``(grid, tau, diffusivities, q, scheme, backend)``.

    ``solvers[c][axis]`` applies ``F_ell(tau A_axis)`` for component ``c``.
    For the non-split backend ``solvers[c]`` is a single full-grid solver.
    """

    grid: Grid
    tau: float
    kappas: Tuple[float, ...]
    q: float
    scheme: Optional[RationalScheme]
    backend: str
    solvers: Tuple[object, ...]
    factors: Dict[Axis, object] = field(default_factory=dict)

    @property
    def components(self) -> int:
        return len(self.kappas)

    def matches(self, grid: Grid, tau: float, kappas, q: float) -> bool:
        return (self.grid, self.tau, tuple(kappas), self.q) == (grid, tau, tuple(kappas), q)


def _exact_solver(factor, axis, tau, eigvals):
    z = tau * eigvals
    return SpectralSolver(factor, axis, {1: np.exp(-z), 2: phi1(z), 3: phi2(z)})


def build_plan(
    grid: Grid,
    tau: float,
    kappa: Union[float, Sequence[float]] = 1.0,
    q: float = 0.0,
    scheme="p02",
    backend: str = "spectral",
) -> StepperPlan:
    """Precompute directional factors for every component.

    Per axis the eigensystem of the unit-diffusivity operator is computed once
    and shared by all components; component ``c`` uses eigenvalues
    ``kappa_c * lam + q/dim``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    backend = backend.lower()
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
    kappas = tuple(float(k) for k in np.atleast_1d(kappa))
    for k in kappas:
        if not k > 0:
            raise ValueError(f"kappa must be positive, got {k}")
    if q < 0:
        raise ValueError(f"q must be non-negative, got {q}")
    rs = None if backend == "exact" else (scheme if isinstance(scheme, RationalScheme) else get_scheme(scheme))

    if backend == "exact" and max(grid.shape) > REFERENCE_MAX_INTERIOR:
        raise ValueError(
            f"exact-exponential reference refuses interior extents above {REFERENCE_MAX_INTERIOR}: {grid.shape}"
        )
    if backend == "nonsplit":
        if grid.dim != 2:
            raise ValueError("the non-split baseline is 2D only")
        solvers = tuple(NonSplitSolver(grid, tau, rs, k, q) for k in kappas)
        return StepperPlan(grid, float(tau), kappas, float(q), rs, backend, solvers)

    factors = {}
    if backend in ("spectral", "exact"):
        factors = {ax: spectral_factor(build_operator(grid, ax, 1.0, 0.0)) for ax in grid.axes()}
    solvers = []
    for k in kappas:
        per_axis = {}
        for ax in grid.axes():
            if backend == "exact":
                lam = k * factors[ax].eigvals + q / grid.dim
                per_axis[ax] = _exact_solver(factors[ax], ax, tau, lam)
            else:
                per_axis[ax] = make_solver(backend, grid, ax, tau, rs, k, q, factor=factors.get(ax))
        solvers.append(per_axis)
    return StepperPlan(grid, float(tau), kappas, float(q), rs, backend, tuple(solvers), factors)


class NonSplitSolver:
    """``F_ell(tau A_h) g`` through sparse complex LU factors of ``tau A_h - s_l I``."""

    name = "nonsplit"

    def __init__(self, grid: Grid, tau: float, scheme: RationalScheme, kappa: float, q: float):
        import scipy.sparse as sp
        from scipy.sparse.linalg import splu

        self.shape = grid.shape
        Ah = sum(
            kron_axis_matrix(build_operator(grid, ax, kappa, q).sparse(), grid.shape, ax) for ax in grid.axes()
        )
        eye = sp.identity(Ah.shape[0], format="csc")
        self.lus = []
        for s in scheme.poles_complex:
            try:
                self.lus.append(splu((tau * Ah - s * eye).astype(complex).tocsc()))
            except RuntimeError as exc:
                raise ArithmeticError(f"factorization of tau*A_h - ({s})*I failed: {exc}") from exc
        self.residues = {ell: scheme.residues(ell) for ell in (1, 2, 3)}

    def apply(self, ell, g):
        return self.apply_combo([(ell, 1.0, g)])

    def apply_combo(self, terms):
        out = np.zeros(int(np.prod(self.shape)))
        for l, lu in enumerate(self.lus):
            rhs = sum(c * self.residues[ell][l] * to_vec(g) for ell, c, g in terms)
            out += 2.0 * lu.solve(rhs).real
        return from_vec(out, self.shape)


# -- stepping ------------------------------------------------------------------


@dataclass(frozen=True)
class StepperState:
    n: int
    t: float
    U: State


def _check(values: State, t: float, U: State) -> None:
    arrays = values if isinstance(values, tuple) else (values,)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        us = U if isinstance(U, tuple) else (U,)
        umax = max(float(np.max(np.abs(u))) for u in us)
        raise StepAbort(f"non-finite source value at t={t:.6g} (max|U|={umax:.6g})")


def _eval_source(f: SourceFunction, t: float, U: State, grid: Grid) -> State:
    try:
        out = f(t, U, grid)
    except FloatingPointError as exc:
        raise StepAbort(f"source evaluation failed at t={t:.6g}: {exc}") from exc
    _check(out, t, U)
    return out


def _split_stages(solvers, axes, U, fn, tau):
    """Predictor ``W`` (minus source at ``t_{n+1}``) and the reusable ``F1(tau A_2) f``."""
    w1, w2 = U, fn
    # remaining directions first: z, then y
    for ax in reversed(axes[1:]):
        w1 = solvers[ax].apply(1, w1)
        w2 = solvers[ax].apply(1, w2)
    W = solvers[axes[0]].apply_combo([(1, 1.0, w1), (2, tau, w2)])
    return W, w2


def _split_step(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    grid, tau = plan.grid, plan.tau
    axes = grid.axes()
    system = plan.components > 1
    Us = state.U if system else (state.U,)
    fn = _eval_source(f, state.t, state.U, grid)
    fns = fn if system else (fn,)
    stages = [_split_stages(plan.solvers[c], axes, Us[c], fns[c], tau) for c in range(plan.components)]
    W = tuple(s[0] for s in stages)
    t1 = (state.n + 1) * tau
    fW = _eval_source(f, t1, W if system else W[0], grid)
    fWs = fW if system else (fW,)
    new = tuple(
        W[c] + tau * plan.solvers[c][axes[0]].apply(3, fWs[c] - stages[c][1]) for c in range(plan.components)
    )
    return StepperState(state.n + 1, t1, new if system else new[0])


def _nonsplit_step(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    grid, tau = plan.grid, plan.tau
    system = plan.components > 1
    Us = state.U if system else (state.U,)
    fn = _eval_source(f, state.t, state.U, grid)
    fns = fn if system else (fn,)
    W = tuple(s.apply_combo([(1, 1.0, u), (2, tau, g)]) for s, u, g in zip(plan.solvers, Us, fns))
    t1 = (state.n + 1) * tau
    fW = _eval_source(f, t1, W if system else W[0], grid)
    fWs = fW if system else (fW,)
    new = tuple(
        W[c] + tau * plan.solvers[c].apply(3, fWs[c] - fns[c]) for c in range(plan.components)
    )
    return StepperState(state.n + 1, t1, new if system else new[0])


def _require(plan: StepperPlan, dim=None, backends=None, components=None):
    if dim is not None and plan.grid.dim != dim:
        raise ValueError(f"plan is {plan.grid.dim}D, expected {dim}D")
    if backends is not None and plan.backend not in backends:
        raise ValueError(f"plan backend {plan.backend!r} not one of {backends}")
    if components is not None and plan.components != components:
        raise ValueError(f"plan has {plan.components} components, expected {components}")


def _require_shape(plan: StepperPlan, state: StepperState):
    us = state.U if isinstance(state.U, tuple) else (state.U,)
    if len(us) != plan.components or any(u.shape != plan.grid.shape for u in us):
        raise ValueError(f"state does not match plan grid {plan.grid.shape} x {plan.components}")


_SPLIT = ("spectral", "thomas", "sparse")


def etd2rkds_step_2d(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    _require(plan, dim=2, backends=_SPLIT)
    _require_shape(plan, state)
    return _split_step(plan, state, f)


def etd2rkds_step_3d(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    _require(plan, dim=3, backends=_SPLIT)
    _require_shape(plan, state)
    return _split_step(plan, state, f)


def etd2rkds_reference_step(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    """Split ETD2RK with exact directional exponentials and phi-functions."""
    _require(plan, backends=("exact",))
    _require_shape(plan, state)
    return _split_step(plan, state, f)


def etd2rk_nonsplit_step(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    _require(plan, dim=2, backends=("nonsplit",))
    _require_shape(plan, state)
    return _nonsplit_step(plan, state, f)


def etd2rkds_step_system(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    _require(plan, dim=2, backends=_SPLIT + ("exact",), components=2)
    _require_shape(plan, state)
    return _split_step(plan, state, f)


def step(plan: StepperPlan, state: StepperState, f: SourceFunction) -> StepperState:
    """Advance one step with whatever scheme the plan encodes."""
    _require_shape(plan, state)
    if plan.backend == "nonsplit":
        return _nonsplit_step(plan, state, f)
    return _split_step(plan, state, f)


def integrate(
    plan: StepperPlan,
    U0: State,
    f: SourceFunction,
    N: int,
    every: int = 0,
    callback: Optional[Callable[[StepperState], None]] = None,
) -> StepperState:
    """Run ``N`` steps from ``t = 0``; ``callback`` sees the initial state and every ``every``-th one."""
    state = StepperState(0, 0.0, U0)
    if callback is not None and every:
        callback(state)
    for _ in range(N):
        state = step(plan, state, f)
        if callback is not None and every and state.n % every == 0:
            callback(state)
    return state
