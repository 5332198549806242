import json

import numpy as np
import pytest

from d2d.cli import main
from d2d.config import SCHEMA, default_config_text, load_sections
from d2d.errors import ConfigError
from d2d.io import read_csv, read_density, sha256

SMALL = ["--set", "model.n_spins=1", "--set", "dims.fock_cutoff=8"]


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_print_default_round_trips(tmp_path, capsys):
    assert main(["config", "--print-default"]) == 0
    text = capsys.readouterr().out
    assert text == default_config_text()
    path = tmp_path / "default.ini"
    path.write_text(text)
    assert load_sections(str(path)) == load_sections(None)
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for name in keys:
            assert f"\n{name} = " in text


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nlamda = 0.5\n")
    with pytest.raises(ConfigError, match="lamda"):
        load_sections(str(bad))
    with pytest.raises(ConfigError):
        load_sections(None, ["model.lam=abc"])
    assert load_sections(None, ["lam=0.5"])["model"]["lam"] == 0.5
    assert run(tmp_path, "x", "ed", "--config", str(bad))[0] == 2
    assert run(tmp_path, "y", "ed", "--set", "model.lam=-1")[0] == 2


def test_ed_decoupled_is_vacuum(tmp_path):
    code, out = run(tmp_path, "ed", "ed", "--set", "model.lam=0", *SMALL)
    assert code == 0
    header, pn = read_csv(out / "pn.csv")
    assert header == ["n", "probability"]
    assert pn[0, 1] == pytest.approx(1.0, abs=1e-8)
    m = manifest(out)
    assert m["outputs"]["pn.csv"] == sha256(out / "pn.csv")
    assert m["outputs"]["ness.json"] == sha256(out / "ness.json")
    assert m["config"]["model"]["lam"] == 0.0
    assert m["warnings"]  # degenerate kernel fallback is reported
    rho, dims, kind = read_density(out / "ness.json")
    assert kind == "composite" and dims.total_dim == 16
    assert abs(np.trace(rho) - 1) < 1e-10


def test_ed_kernel_writes_parity_sectors(tmp_path):
    code, out = run(tmp_path, "k", "ed", "--kernel", "--set", "model.kappa1=0", "--set", "model.kappa2=0.1",
                    "--set", "model.lam=0.5", *SMALL)
    assert code == 0
    assert (out / "ness_0.json").exists() and (out / "ness_1.json").exists()
    _, rows = read_csv(out / "kernel.csv")
    masses = sorted(rows[:, 1:3].tolist())
    assert masses[0][0] < 1e-8 and masses[1][1] < 1e-8


def test_budget_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "b", "ed", "--set", "model.n_spins=15", "--set", "dims.fock_cutoff=120")
    assert code == 4
    assert "traj" in capsys.readouterr().err


def test_convergence_exit_code(tmp_path):
    code, _ = run(tmp_path, "c", "ed", "--set", "ed.tol=1e-30", "--set", "model.lam=0.4",
                  "--set", "model.n_spins=1", "--set", "dims.fock_cutoff=4")
    assert code == 3


def test_traj_is_reproducible(tmp_path):
    args = ["traj", *SMALL, "--set", "model.lam=0.5", "--set", "trajectory.n_traj=20",
            "--set", "trajectory.t_final=10"]
    c1, o1 = run(tmp_path, "t1", *args, "--seed", "42")
    c2, o2 = run(tmp_path, "t2", *args, "--seed", "42")
    c3, o3 = run(tmp_path, "t3", *args, "--seed", "43")
    assert c1 == c2 == c3 == 0
    assert manifest(o1)["outputs"] == manifest(o2)["outputs"]
    assert manifest(o1)["outputs"]["pn.csv"] != manifest(o3)["outputs"]["pn.csv"]
    header, conv = read_csv(o1 / "convergence.csv")
    assert header == ["n_traj", "mean_n", "stderr"] and conv[-1, 0] == 20
    c4, o4 = run(tmp_path, "t4", *args, "--set", "trajectory.save=photon")
    assert c4 == 0 and (o4 / "rho_ph.json").exists()


def test_sweep_tables(tmp_path):
    code, out = run(tmp_path, "s", "sweep", "--set", "sweep.lam_values=1.0", "--set", "model.kappa2=0.2")
    assert code == 0
    header, _ = read_csv_str(out / "branches.csv")
    assert header[:8] == ["lam", "branch", "n", "jx", "jy", "jz", "max_re_eig", "stable"]
    lines = (out / "branches.csv").read_text().splitlines()[1:]
    assert [ln.split(",")[1] for ln in lines] == ["normal", "superradiant-upper", "superradiant-lower"]
    code, out = run(tmp_path, "mf", "sweep", "--set", "sweep.model=mf", "--set", "sweep.lam_start=0.4",
                    "--set", "sweep.lam_stop=0.6", "--set", "sweep.n_points=201")
    births = manifest(out)["results"]["births"]
    assert births["symmetric/superradiant-upper"] == pytest.approx(0.5099, abs=1e-3)


def read_csv_str(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), lines[1:]


def test_wigner_from_ed_output(tmp_path, capsys):
    _, ed = run(tmp_path, "ed", "ed", "--set", "model.lam=0", *SMALL)
    code, out = run(tmp_path, "w", "wigner", "--input", str(ed / "ness.json"), "--set", "wigner.n_points=51")
    assert code == 0
    header, data = read_csv(out / "wigner.csv")
    assert header == ["x", "p", "W"] and data.shape == (51 * 51, 3)
    assert data[:, 2].max() == pytest.approx(1 / np.pi, abs=1e-12)
    assert float((out / "z4.txt").read_text()) < 1e-6
    capsys.readouterr()
    code, out = run(tmp_path, "w2", "wigner", "--input", str(ed / "ness.json"), "--set", "wigner.extent=1.5")
    assert code == 0
    assert "boundary" in capsys.readouterr().err
    assert manifest(out)["warnings"]


def test_wigner_rejects_malformed_input(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"data": [[1, 2]]}')
    assert run(tmp_path, "w", "wigner", "--input", str(bad))[0] == 2
    assert run(tmp_path, "w2", "wigner")[0] == 2


def test_spectrum_of_decoupled_cavity(tmp_path):
    code, out = run(tmp_path, "sp", "spectrum", "--set", "model.lam=0", "--set", "spectrum.k=16",
                    "--set", "model.n_spins=1", "--set", "dims.fock_cutoff=6")
    assert code == 0
    header, rows = read_csv(out / "spectrum.csv")
    assert header[:3] == ["k", "re", "im"]
    vals = rows[:, 1] + 1j * rows[:, 2]
    assert np.all(vals.real <= 1e-8)
    assert np.min(np.abs(vals + 0.4)) < 1e-9


def test_csv_round_trips_full_precision(tmp_path):
    from d2d.io import write_csv

    x = np.random.default_rng(0).normal(size=20) * 10.0 ** np.arange(-10, 10)
    write_csv(tmp_path / "x.csv", ["i", "x"], enumerate(x))
    _, back = read_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(back[:, 1], x)
