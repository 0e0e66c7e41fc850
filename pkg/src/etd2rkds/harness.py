"""Convergence studies, timing sweeps and their CSV/manifest outputs.

``E(N)`` is the interior sup-norm error maximized over a fixed coarse set of
times ``{k T / C : k = 0..C}`` (``C = 16`` in 2D, ``10`` in 3D), so runs with
different ``N`` are compared at identical physical times.  The truth is
either a problem's exact solution or a reference trajectory on a finer time
grid computed with the same scheme and backend.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .problems import ProblemSpec, get_problem
from .stepper import BACKENDS, StepAbort, build_plan, integrate

Snapshot = Tuple[float, Union[np.ndarray, Tuple[np.ndarray, ...]]]

TIME_MATCH_TOL = 1e-12
DEFAULT_MEMORY_CAP = 3 * 2**30


@dataclass
class RunConfig:
    problem: str = "allen-cahn-2d"
    overrides: Dict[str, float] = field(default_factory=dict)
    m: int = 64
    Ns: Tuple[int, ...] = (16, 32, 64, 128, 256)
    scheme: str = "p02"
    backend: str = "spectral"
    coarse: Optional[int] = None
    reference_N: Optional[int] = None
    out: Optional[str] = None
    repeats: int = 3
    tau: Optional[float] = None
    snapshot_every: int = 0
    ms: Tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    memory_cap: int = DEFAULT_MEMORY_CAP

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if self.scheme not in ("p02", "p04"):
            raise ValueError(f"unknown scheme {self.scheme!r}; choose p02 or p04")
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if not self.Ns or any(n < 1 for n in self.Ns):
            raise ValueError(f"Ns must be positive integers, got {self.Ns}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def load_problem(self) -> ProblemSpec:
        return get_problem(self.problem, **self.overrides)


# -- error measure ------------------------------------------------------------


def _components(U, which: Optional[Sequence[int]]):
    us = U if isinstance(U, tuple) else (U,)
    return us if which is None else tuple(us[i] for i in which)


def compute_error_E(
    snapshots: Sequence[Snapshot],
    truth: Union[Callable[[float], object], Sequence[Snapshot]],
    components: Optional[Sequence[int]] = None,
) -> float:
    """Max over snapshot times of the sup-norm difference to ``truth``.

    ``truth`` is either a callable ``t -> U`` or a list of ``(t, U)`` pairs
    that must share the snapshot times.
    """
    if not snapshots:
        raise ValueError("no snapshots")
    if callable(truth):
        pairs = [(U, truth(t)) for t, U in snapshots]
    else:
        if len(truth) != len(snapshots):
            raise ValueError(f"time grids differ: {len(snapshots)} snapshots vs {len(truth)} truth states")
        pairs = []
        for (t, U), (tt, V) in zip(snapshots, truth):
            if abs(t - tt) > TIME_MATCH_TOL * max(1.0, abs(t)):
                raise ValueError(f"time grids differ: snapshot at t={t!r} vs truth at t={tt!r}")
            pairs.append((U, V))
    err = 0.0
    for U, V in pairs:
        for u, v in zip(_components(U, components), _components(V, components)):
            if u.shape != v.shape:
                raise ValueError(f"spatial grids differ: {u.shape} vs {v.shape}")
            err = max(err, float(np.max(np.abs(u - v))))
    return err


def coarse_trajectory(problem: ProblemSpec, m: int, N: int, scheme: str, backend: str, coarse: int):
    """Integrate ``N`` steps to ``T`` and keep the states at the coarse times."""
    if N % coarse:
        raise ValueError(f"N={N} is not a multiple of the coarse-set size {coarse}")
    grid = problem.grid(m)
    plan = build_plan(grid, problem.T / N, problem.kappa, problem.q, scheme, backend)
    snaps: List[Snapshot] = []
    every = N // coarse

    def keep(state):
        # physical time from the step index, identical across N
        snaps.append((state.n * problem.T / N, state.U))

    try:
        integrate(plan, problem.initial_state(grid), problem.source, N, every=every, callback=keep)
    except StepAbort as exc:
        raise StepAbort(f"N={N}: {exc}") from exc
    return snaps


# -- reference cache ------------------------------------------------------------

_REFERENCE_MEMO: Dict[str, List[Snapshot]] = {}


def _reference_key(problem: ProblemSpec, m, ref_N, scheme, backend, coarse) -> str:
    payload = json.dumps(
        [problem.name, sorted(problem.params.items()), m, ref_N, scheme, backend, coarse], default=str
    )
    return hashlib.sha1(payload.encode()).hexdigest()[:16]


def reference_trajectory(
    problem: ProblemSpec, m: int, ref_N: int, scheme: str, backend: str, coarse: int, cache_dir=None
) -> List[Snapshot]:
    key = _reference_key(problem, m, ref_N, scheme, backend, coarse)
    if key in _REFERENCE_MEMO:
        return _REFERENCE_MEMO[key]
    path = Path(cache_dir) / f"reference-{key}.npz" if cache_dir else None
    if path is not None and path.exists():
        with np.load(path) as z:
            times, data = z["times"], z["states"]
        snaps = [(float(t), tuple(d) if problem.components > 1 else d) for t, d in zip(times, data)]
    else:
        snaps = coarse_trajectory(problem, m, ref_N, scheme, backend, coarse)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            states = np.stack([np.stack(U) if isinstance(U, tuple) else U for _, U in snaps])
            np.savez(path, times=np.array([t for t, _ in snaps]), states=states)
    _REFERENCE_MEMO[key] = snaps
    return snaps


# -- convergence reports ----------------------------------------------------------


@dataclass
class ConvergenceRow:
    N: int
    E: float
    EOC: Optional[float]
    cpu_seconds: float


@dataclass
class ConvergenceReport:
    rows: List[ConvergenceRow]
    meta: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_errors(cls, Ns, Es, seconds=None, meta=None) -> "ConvergenceReport":
        seconds = seconds or [0.0] * len(Ns)
        rows = []
        for i, (N, E, s) in enumerate(zip(Ns, Es, seconds)):
            # each row after the first carries log2(E_prev / E) for the halved step
            eoc = None if i == 0 else eoc_value(Es[i - 1], E)
            rows.append(ConvergenceRow(int(N), float(E), eoc, float(s)))
        return cls(rows, dict(meta or {}))

    @property
    def Ns(self) -> List[int]:
        return [r.N for r in self.rows]

    @property
    def errors(self) -> List[float]:
        return [r.E for r in self.rows]

    @property
    def eocs(self) -> List[float]:
        return [r.EOC for r in self.rows[1:]]

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "E", "EOC", "cpu_seconds"])
            for r in self.rows:
                w.writerow([r.N, repr(r.E), "" if r.EOC is None else repr(r.EOC), repr(r.cpu_seconds)])
        path.with_suffix(".meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def from_csv(cls, path) -> "ConvergenceReport":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = [
                ConvergenceRow(int(d["N"]), float(d["E"]), float(d["EOC"]) if d["EOC"] else None, float(d["cpu_seconds"]))
                for d in csv.DictReader(fh)
            ]
        meta_path = path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(rows, meta)

    def format_table(self) -> str:
        lines = [f"{'N':>6} {'E(N)':>12} {'EOC':>6} {'cpu[s]':>9}"]
        for r in self.rows:
            eoc = "" if r.EOC is None else f"{r.EOC:.2f}"
            lines.append(f"{r.N:>6} {r.E:>12.3e} {eoc:>6} {r.cpu_seconds:>9.3f}")
        return "\n".join(lines)


def eoc_value(E_coarse: float, E_fine: float) -> float:
    if E_coarse <= 0 or E_fine <= 0:
        return math.nan
    return math.log2(E_coarse / E_fine)


def platform_info() -> Dict[str, str]:
    import scipy

    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "machine": platform.machine(),
        "system": platform.system(),
    }


def run_convergence(config: RunConfig, cache_dir=None) -> ConvergenceReport:
    config.validate()
    problem = config.load_problem()
    coarse = config.coarse or problem.coarse
    bad = [N for N in config.Ns if N % coarse]
    if bad:
        raise ValueError(f"N values {bad} are not multiples of the coarse-set size {coarse}")
    if cache_dir is None and config.out:
        cache_dir = Path(config.out) / "reference_cache"

    if problem.exact is not None:
        grid = problem.grid(config.m)
        truth = lambda t: problem.exact_on(grid, t)  # noqa: E731
        ref_N = None
    else:
        ref_N = config.reference_N or problem.reference_N
        if ref_N % coarse:
            raise ValueError(f"reference N={ref_N} is not a multiple of the coarse-set size {coarse}")
        truth = reference_trajectory(problem, config.m, ref_N, config.scheme, config.backend, coarse, cache_dir)

    Es, secs = [], []
    for N in config.Ns:
        t0 = time.process_time()
        snaps = coarse_trajectory(problem, config.m, N, config.scheme, config.backend, coarse)
        secs.append(time.process_time() - t0)
        Es.append(compute_error_E(snaps, truth, problem.error_components))

    meta = {
        "problem": problem.name,
        "params": problem.params,
        "m": config.m,
        "scheme": config.scheme,
        "backend": config.backend,
        "coarse": coarse,
        "reference_N": ref_N,
        "error_components": problem.error_components,
        "platform": platform_info(),
    }
    report = ConvergenceReport.from_errors(config.Ns, Es, secs, meta)
    if config.out:
        report.to_csv(Path(config.out) / f"convergence-{problem.name}-{config.scheme}-{config.backend}-m{config.m}.csv")
    return report


# -- timing sweeps ------------------------------------------------------------------


@dataclass
class TimingRow:
    m: int
    backend: str
    scheme: str
    seconds: float
    per_step_seconds: float
    setup_seconds: float


def estimate_memory(dim: int, m: int, backend: str, components: int = 1) -> int:
    """Rough peak bytes for one run; used only to refuse hopeless sizes."""
    n = m - 1
    size = n**dim
    fields = 16 * size * 8 * components
    if backend in ("spectral", "exact"):
        return fields + dim * 2 * n * n * 8
    if backend == "thomas":
        return fields + 2 * size * 16
    # sparse LU with fill-reducing ordering; fitted to observed fill on 2D grids
    return fields + int(2 * 256 * size * max(1.0, math.log2(size)))


def run_timing_scaling(
    config: RunConfig, backends: Sequence[str] = ("spectral", "thomas", "sparse"), schemes: Sequence[str] = ("p02", "p04")
) -> List[TimingRow]:
    """Median wall time over ``config.repeats`` runs of ``T/tau`` steps per (m, backend, scheme)."""
    problem = config.load_problem()
    tau = config.tau or 1.0 / 32
    steps = int(round(problem.T / tau))
    if not math.isclose(steps * tau, problem.T, rel_tol=1e-12):
        raise ValueError(f"T={problem.T} is not a multiple of tau={tau}")
    rows = []
    for m in config.ms:
        grid = problem.grid(m)
        for backend in backends:
            need = estimate_memory(problem.dim, m, backend, problem.components)
            if need > config.memory_cap:
                raise MemoryError(
                    f"m={m}, backend={backend}: estimated {need / 2**30:.1f} GiB exceeds the cap of "
                    f"{config.memory_cap / 2**30:.1f} GiB"
                )
            for scheme in schemes:
                # untimed warm-up so JIT and cache loading stay out of the medians
                integrate(build_plan(grid, tau, problem.kappa, problem.q, scheme, backend), problem.initial_state(grid), problem.source, 1)
                runs, setups = [], []
                for _ in range(config.repeats):
                    t0 = time.perf_counter()
                    plan = build_plan(grid, tau, problem.kappa, problem.q, scheme, backend)
                    t1 = time.perf_counter()
                    integrate(plan, problem.initial_state(grid), problem.source, steps)
                    t2 = time.perf_counter()
                    setups.append(t1 - t0)
                    runs.append(t2 - t1)
                run = statistics.median(runs)
                rows.append(TimingRow(m, backend, scheme, run, run / steps, statistics.median(setups)))
    if config.out:
        write_timing_csv(rows, Path(config.out) / f"timing-{problem.name}.csv")
    return rows


def write_timing_csv(rows: Sequence[TimingRow], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "backend", "scheme", "seconds", "per_step_seconds", "setup_seconds"])
        for r in rows:
            w.writerow([r.m, r.backend, r.scheme, repr(r.seconds), repr(r.per_step_seconds), repr(r.setup_seconds)])
    return path


def write_manifest(path, config: RunConfig, extra: Optional[Dict[str, object]] = None) -> Path:
    """Plain ``key = value`` record of every resolved parameter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    problem = config.load_problem()
    entries = {k: v for k, v in asdict(config).items() if k != "overrides"}
    entries.update({f"param.{k}": v for k, v in problem.params.items()})
    entries["coarse"] = config.coarse or problem.coarse
    entries.update({f"platform.{k}": v for k, v in platform_info().items()})
    entries.update(extra or {})
    fmt = lambda v: ",".join(map(str, v)) if isinstance(v, (tuple, list)) else v  # noqa: E731
    path.write_text("".join(f"{k} = {fmt(v)}\n" for k, v in sorted(entries.items())))
    return path


# -- oracle suite ------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)


def run_verification(seed: int = 0) -> List[CheckResult]:
    """Small-size oracle checks; every value must stay below its tolerance."""
    from .operators import build_grid, build_operator, spectral_factor
    from .problems import allen_cahn, manufactured_residual
    from .rational import eval_scalar, get_scheme
    from .tensor import slice_equivalence_oracle

    rng = np.random.default_rng(seed)
    out = []

    for dim, shape in ((2, (7, 8)), (3, (6, 7, 8))):
        grid = build_grid(dim, ((0.0, 1.0),) * dim, shape)
        field_ = rng.standard_normal(grid.shape)
        for scheme in ("p02", "p04"):
            worst = 0.0
            for ell in (1, 2, 3):
                rep = slice_equivalence_oracle(grid, 0.05, scheme, ell, field_, 1.3, 0.7, ("spectral", "thomas", "sparse"))
                scale = max(1.0, max(rep["reference_norm"].values()))
                worst = max(worst, rep["max_deviation"] / scale, rep["kronecker_sum_gap"] / 1e4)
            out.append(CheckResult(f"slice-equivalence {dim}D {scheme}", worst, 1e-12))

    grid = build_grid(2, ((0.0, 1.0),) * 2, 24)
    op = build_operator(grid, 0, 1.0, 0.0)
    fac = spectral_factor(op)
    out.append(CheckResult("eigensystem reconstruction", float(np.max(np.abs(fac.reconstruct() - op.dense())) / abs(op.diag)), 1e-13))

    for dim in (2, 3):
        problem = allen_cahn(dim)
        g = problem.grid(16 if dim == 2 else 10)
        finals = {}
        for backend in ("spectral", "thomas", "sparse"):
            plan = build_plan(g, 0.05, problem.kappa, problem.q, "p04", backend)
            finals[backend] = integrate(plan, problem.initial_state(g), problem.source, 20).U
        ref = finals["spectral"]
        gap = max(float(np.max(np.abs(v - ref))) for v in finals.values()) / float(np.max(np.abs(ref)))
        out.append(CheckResult(f"backend agreement {dim}D", gap, 1e-10))
        out.append(CheckResult(f"manufactured residual {dim}D", manufactured_residual(problem, seed=seed), 1e-8))

    x = np.linspace(0.0, 100.0, 2001)
    for scheme in ("p02", "p04"):
        rs = get_scheme(scheme)
        gap = 0.0
        for ell in (1, 2, 3):
            direct = rs.eval_direct(ell, x)
            gap = max(gap, float(np.max(np.abs(eval_scalar(rs, ell, x) - direct) / np.abs(direct))))
        out.append(CheckResult(f"partial fractions vs direct {scheme}", gap, 1e-12))
    return out
