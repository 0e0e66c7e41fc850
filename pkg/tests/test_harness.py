import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etd2rkds.cli import main
from etd2rkds.harness import (
    ConvergenceReport,
    RunConfig,
    coarse_trajectory,
    compute_error_E,
    estimate_memory,
    reference_trajectory,
    run_convergence,
    run_timing_scaling,
    write_manifest,
)
from etd2rkds.problems import allen_cahn, get_problem


def snaps(values, times=None):
    times = times if times is not None else [i / 4 for i in range(len(values))]
    return [(t, np.full((3, 3), v)) for t, v in zip(times, values)]


def test_error_zero_for_identical_trajectories():
    s = snaps([1.0, 2.0, 3.0])
    assert compute_error_E(s, s) == 0.0


@given(c=st.floats(-10, 10))
def test_error_of_constant_shift(c):
    s = snaps([1.0, 2.0])
    shifted = [(t, u + c) for t, u in s]
    assert compute_error_E(s, shifted) == pytest.approx(abs(c), abs=1e-14)


def test_error_time_grid_mismatch():
    with pytest.raises(ValueError, match="time grids differ"):
        compute_error_E(snaps([1.0, 2.0]), snaps([1.0, 2.0], times=[0.0, 0.3]))
    with pytest.raises(ValueError, match="time grids differ"):
        compute_error_E(snaps([1.0, 2.0]), snaps([1.0]))


def test_error_component_selection():
    a = [(0.0, (np.zeros((2, 2)), np.zeros((2, 2))))]
    b = [(0.0, (np.full((2, 2), 1.0), np.full((2, 2), 5.0)))]
    assert compute_error_E(a, b) == 5.0
    assert compute_error_E(a, b, components=(0,)) == 1.0


@given(Es=st.lists(st.floats(1e-12, 1.0), min_size=2, max_size=6), c=st.floats(1e-3, 1e3))
def test_eoc_scale_invariant(Es, c):
    Ns = [16 * 2**i for i in range(len(Es))]
    a = ConvergenceReport.from_errors(Ns, Es).eocs
    b = ConvergenceReport.from_errors(Ns, [c * e for e in Es]).eocs
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_eoc_layout():
    rep = ConvergenceReport.from_errors([16, 32, 64], [4e-2, 1e-2, 2.5e-3])
    assert rep.rows[0].EOC is None
    assert rep.eocs == [pytest.approx(2.0), pytest.approx(2.0)]


@given(Es=st.lists(st.floats(1e-15, 1e3), min_size=1, max_size=5), secs=st.floats(0, 100))
@settings(max_examples=25, deadline=None)
def test_csv_round_trip(tmp_path_factory, Es, secs):
    Ns = [16 * 2**i for i in range(len(Es))]
    rep = ConvergenceReport.from_errors(Ns, Es, [secs] * len(Es), {"problem": "x", "m": 8})
    path = rep.to_csv(tmp_path_factory.mktemp("csv") / "r.csv")
    back = ConvergenceReport.from_csv(path)
    assert back.rows == rep.rows
    assert back.meta == rep.meta


def test_single_n_report(tmp_path):
    rep = run_convergence(RunConfig(problem="allen-cahn-2d", m=16, Ns=(16,), out=str(tmp_path)))
    assert len(rep.rows) == 1 and rep.rows[0].EOC is None
    assert list(tmp_path.glob("convergence-*.csv"))


def test_convergence_is_deterministic():
    cfg = RunConfig(problem="singular-source-2d", m=16, Ns=(16, 32), reference_N=128)
    a, b = run_convergence(cfg), run_convergence(cfg)
    assert a.errors == b.errors


def test_ns_must_be_multiples_of_coarse_set():
    with pytest.raises(ValueError, match="multiple"):
        run_convergence(RunConfig(problem="allen-cahn-2d", m=16, Ns=(20,)))
    with pytest.raises(ValueError):
        coarse_trajectory(allen_cahn(3), 8, 16, "p02", "spectral", 10)


def test_reference_cache_round_trip(tmp_path):
    p = get_problem("fhn-2d")
    a = reference_trajectory(p, 12, 32, "p02", "spectral", 16, cache_dir=tmp_path)
    from etd2rkds import harness

    harness._REFERENCE_MEMO.clear()
    b = reference_trajectory(p, 12, 32, "p02", "spectral", 16, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.npz"))) == 1
    assert compute_error_E(a, b) == 0.0


def test_timing_rows_and_memory_guard():
    rows = run_timing_scaling(RunConfig(problem="allen-cahn-2d", ms=(16,), repeats=1))
    assert {(r.backend, r.scheme) for r in rows} == {(b, s) for b in ("spectral", "thomas", "sparse") for s in ("p02", "p04")}
    assert all(r.seconds > 0 and math.isclose(r.per_step_seconds * 32, r.seconds) for r in rows)
    with pytest.raises(MemoryError):
        run_timing_scaling(RunConfig(problem="allen-cahn-2d", ms=(4096,), memory_cap=2**30), backends=("sparse",))
    assert estimate_memory(2, 512, "thomas") < estimate_memory(2, 512, "sparse")


def test_manifest_lists_parameters(tmp_path):
    path = write_manifest(tmp_path / "m.txt", RunConfig(problem="fhn-2d", overrides={"sigma": 0.2}))
    text = path.read_text()
    assert "param.sigma = 0.2" in text and "coarse = 16" in text


# -- CLI --------------------------------------------------------------------------


def test_cli_unknown_subcommand():
    assert main(["launch"]) == 2
    assert main([]) == 2


def test_cli_verify_passes(capsys):
    assert main(["verify"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_cli_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("problem = allen-cahn-2d\nwhatever = 3\n")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["converge", "--problem", "allen-cahn-2d", "--Ns", "10,20"]) == 2
    assert main(["run", "--problem", "no-such-problem"]) == 2
    assert main(["run", "--m", "100", "--backend", "exact"]) == 2


def test_cli_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("problem = singular-source-2d\nm = 12\nN = 8\nrho = 0.2\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--m", "10", "--snapshot-every", "4", "--out", str(out)]) == 0
    assert "m=10" in capsys.readouterr().out
    manifest = (out / "run_manifest.txt").read_text()
    assert "param.rho = 0.2" in manifest and "m = 10" in manifest
    assert sorted(p.name for p in (out / "snapshots").iterdir()) == ["u_000000.field", "u_000004.field", "u_000008.field"]


def test_cli_converge_and_bench(tmp_path, capsys):
    assert main(["converge", "--problem", "allen-cahn-2d", "--m", "16", "--Ns", "16,32", "--out", str(tmp_path)]) == 0
    rep = ConvergenceReport.from_csv(next(tmp_path.glob("convergence-*.csv")))
    assert rep.Ns == [16, 32]
    assert main(["bench", "--problem", "allen-cahn-2d", "--ms", "8", "--repeats", "1", "--backend", "thomas"]) == 0
    assert "thomas" in capsys.readouterr().out
