"""Command line entry point: ``etd2rkds {run,converge,bench,verify}``.

A config file holds flat ``key = value`` lines using the long flag names
(``problem``, ``m``, ``Ns``, ``scheme``, ...) plus problem parameters such as
``rho`` or ``sigma``.  Flags given on the command line override the file.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .harness import (
    RunConfig,
    run_convergence,
    run_timing_scaling,
    run_verification,
    write_manifest,
)
from .stepper import BACKENDS, StepAbort, build_plan, integrate
from .tensor import Field, save_field

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2

PROBLEM_KEYS = {"rho", "kappa", "sigma", "lam", "alpha", "eps", "kappa_u", "kappa_v", "q", "amplitude", "T"}


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


_CONVERTERS = {
    "problem": str,
    "m": int,
    "Ns": _int_list,
    "ms": _int_list,
    "scheme": lambda s: str(s).lower(),
    "backend": lambda s: str(s).lower(),
    "tau": float,
    "out": str,
    "repeats": int,
    "snapshot_every": int,
    "coarse": int,
    "reference_N": int,
    "N": int,
    "memory_cap": int,
}
_ALIASES = {"ns": "Ns", "reference_n": "reference_N", "t": "T", "n": "N"}


def read_config_file(path) -> Dict[str, str]:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return {_ALIASES.get(k.lower(), k) if k not in _CONVERTERS else k: v for k, v in parser["run"].items()}


def resolve(args: argparse.Namespace) -> Dict[str, object]:
    """Merge config file and flags into typed settings (flags win)."""
    raw: Dict[str, object] = {}
    if getattr(args, "config", None):
        try:
            raw.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
    for key in list(_CONVERTERS) + ["T"]:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v.strip()

    settings: Dict[str, object] = {"overrides": {}}
    for key, val in raw.items():
        if key in _CONVERTERS:
            try:
                settings[key] = _CONVERTERS[key](val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        elif key in PROBLEM_KEYS:
            try:
                settings["overrides"][key] = float(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return settings


def build_config(settings: Dict[str, object]) -> RunConfig:
    fields = {k: v for k, v in settings.items() if k in RunConfig.__dataclass_fields__}
    cfg = RunConfig(**fields)
    try:
        cfg.validate()
        cfg.load_problem()
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


# -- subcommands ----------------------------------------------------------------


def cmd_run(cfg: RunConfig, settings) -> int:
    problem = cfg.load_problem()
    if cfg.tau is not None:
        N = int(round(problem.T / cfg.tau))
        if N < 1 or not math.isclose(N * cfg.tau, problem.T, rel_tol=1e-9):
            raise ConfigError(f"T={problem.T} is not a multiple of tau={cfg.tau}")
    else:
        N = int(settings.get("N", cfg.Ns[0]))
    grid = problem.grid(cfg.m)
    plan = build_plan(grid, problem.T / N, problem.kappa, problem.q, cfg.scheme, cfg.backend)
    out = Path(cfg.out) if cfg.out else None
    names = ("u", "v") if problem.components == 2 else ("u",)

    def emit(state):
        us = state.U if isinstance(state.U, tuple) else (state.U,)
        for name, u in zip(names, us):
            save_field(out / "snapshots" / f"{name}_{state.n:06d}.field", Field(u, state.t))

    every = cfg.snapshot_every if out is not None else 0
    if out is not None:
        (out / "snapshots").mkdir(parents=True, exist_ok=True)
    final = integrate(plan, problem.initial_state(grid), problem.source, N, every=every, callback=emit if every else None)
    us = final.U if isinstance(final.U, tuple) else (final.U,)
    print(f"{problem.name}: m={cfg.m} N={N} tau={problem.T / N:.6g} scheme={cfg.scheme} backend={cfg.backend}")
    for name, u in zip(names, us):
        print(f"  t={final.t:.6g} {name}: min={u.min():.6e} max={u.max():.6e}")
    if problem.exact is not None:
        err = float(np.max(np.abs(final.U - problem.exact_on(grid, final.t))))
        print(f"  sup-norm error vs exact at t={final.t:.6g}: {err:.6e}")
    if out is not None:
        if final.n % max(every, 1) or not every:
            emit(final)
        write_manifest(out / "run_manifest.txt", cfg, {"command": "run", "N": N})
    return EXIT_OK


def cmd_converge(cfg: RunConfig, settings) -> int:
    report = run_convergence(cfg)
    print(f"{report.meta['problem']} m={cfg.m} scheme={cfg.scheme} backend={cfg.backend}")
    print(report.format_table())
    if cfg.out:
        write_manifest(Path(cfg.out) / "run_manifest.txt", cfg, {"command": "converge"})
    return EXIT_OK


def cmd_bench(cfg: RunConfig, settings) -> int:
    problem = cfg.load_problem()
    backends = ("spectral", "thomas", "sparse") if problem.dim == 2 else ("spectral", "thomas")
    if settings.get("backend"):
        backends = (cfg.backend,)
    rows = run_timing_scaling(cfg, backends=backends)
    print(f"{'m':>6} {'backend':>9} {'scheme':>6} {'seconds':>10} {'per step':>10}")
    for r in rows:
        print(f"{r.m:>6} {r.backend:>9} {r.scheme:>6} {r.seconds:>10.4f} {r.per_step_seconds:>10.5f}")
    if cfg.out:
        write_manifest(Path(cfg.out) / "run_manifest.txt", cfg, {"command": "bench"})
    return EXIT_OK


def cmd_verify(cfg: RunConfig, settings) -> int:
    results = run_verification()
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}: {r.value:.3e} (tol {r.tol:.0e})")
    return EXIT_OK if all(r.ok for r in results) else EXIT_VERIFY


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "bench": cmd_bench, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override it")
    common.add_argument("--problem")
    common.add_argument("--m", type=int, help="subintervals per axis")
    common.add_argument("--Ns", help="comma-separated step counts")
    common.add_argument("--N", type=int, help="step count for 'run'")
    common.add_argument("--scheme", choices=("p02", "p04"))
    common.add_argument("--backend", choices=BACKENDS)
    common.add_argument("--tau", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--out")
    common.add_argument("--repeats", type=int)
    common.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    common.add_argument("--ms", help="comma-separated grid sizes for 'bench'")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="problem parameter override")

    parser = argparse.ArgumentParser(prog="etd2rkds", description="Split ETD2RK solver for reaction-diffusion problems")
    sub = parser.add_subparsers(dest="command", metavar="{run,converge,bench,verify}")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors and 0 for --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        settings = resolve(args)
        cfg = build_config(settings)
        return COMMANDS[args.command](cfg, settings)
    except StepAbort as exc:
        print(f"run aborted: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
