import csv
import math

import numpy as np
import pytest

import agfem.experiments as experiments
from agfem.cli import main
from agfem.experiments import (CONVERGENCE_HEADER, MOVING_HEADER, RunConfig, load_config,
                               loglog_slope, moving_domain_positions, run_case, run_convergence,
                               run_moving_domain, run_validate)
from agfem.geometry import LevelSetGeometry
from agfem.mesh import classify_cells, unit_box_mesh
from agfem.quadrature import build_cut_quadrature
from agfem.vtk import export_vtk


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# sweep\ndim = 3\nq=2  # quadratic\nflavor = standard\neps = none\n"
                 "mass-kappa = yes\nbeta = 50\n")
    cfg = load_config(p, beta=20.0, m=None)
    assert cfg.dim == 3 and cfg.q == 2 and cfg.flavor == "standard"
    assert cfg.eps is None and cfg.mass_kappa is True
    assert cfg.beta == 20.0 and cfg.m == 5
    assert cfg.shape_name == "sphere" and cfg.last_m == 6
    assert cfg.nitsche.rule == "local_eigenvalue"
    assert RunConfig().nitsche.rule == "fixed_beta_over_h"


@pytest.mark.parametrize("text", ["colour = red\n", "dim 2\n", "vtk = maybe\n", "dim = 4\n",
                                  "flavor = cutfem\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "bad.cfg"
    p.write_text(text)
    with pytest.raises(ValueError):
        load_config(p)


def test_moving_positions():
    cfg = RunConfig(n_samples=5)
    l = moving_domain_positions(cfg)
    assert l[0] == pytest.approx(0.2 * math.sqrt(2)) and l[-1] == pytest.approx(0.8 * math.sqrt(2))
    assert len(l) == 5


def test_loglog_slope():
    h = 2.0 ** -np.arange(3, 8)
    assert loglog_slope(h, h ** 2) == pytest.approx(2.0)
    assert loglog_slope(h, 3 * h ** -1.5, skip=2) == pytest.approx(-1.5)
    assert math.isnan(loglog_slope(h[:1], h[:1]))
    y = h ** 2
    y[1] = math.nan
    assert loglog_slope(h, y) == pytest.approx(2.0)


def test_moving_domain_csv(tmp_path):
    cfg = RunConfig(m=4, n_samples=3, out=str(tmp_path))
    rows = run_moving_domain(cfg)
    assert all(r["solved"] for r in rows)
    lines = read_rows(tmp_path / "moving_domain_2d_circle_q1_aggregated.csv")
    assert lines[0] == MOVING_HEADER
    assert len(lines) == 4
    assert [row[3] for row in lines[1:]] == ["true"] * 3
    assert float(lines[1][0]) == pytest.approx(rows[0]["l"])


def test_moving_domain_rows_survive_failures(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise FloatingPointError("singular")

    monkeypatch.setattr(experiments, "assemble_stiffness", broken)
    cfg = RunConfig(m=3, n_samples=2, out=str(tmp_path))
    rows = run_moving_domain(cfg)
    assert [r["solved"] for r in rows] == [False, False]
    lines = read_rows(tmp_path / "moving_domain_2d_circle_q1_aggregated.csv")
    assert len(lines) == 3
    assert lines[1][1] == "nan" and lines[1][3] == "false"


def test_convergence_csv_and_reproducibility(tmp_path):
    cfg = RunConfig(m_min=3, max_m=5, out=str(tmp_path))
    rows, slopes = run_convergence(cfg)
    path = tmp_path / "convergence_2d_circle_q1_aggregated.csv"
    first = path.read_bytes()
    lines = read_rows(path)
    assert lines[0] == CONVERGENCE_HEADER
    assert len(lines) == 2 + len(rows)
    assert lines[-1][0] == "slope" and lines[-1][-1] == ""
    # three meshes, skip two: too few left, the fit falls back to all of them
    h = [r["h"] for r in rows]
    assert slopes["energy_error"] == pytest.approx(loglog_slope(h, [r["energy_error"] for r in rows]))
    assert slopes["dofs"] == pytest.approx(-2.0, abs=0.2)
    assert all(1.5 <= r["max_aggr_ratio"] <= 3.0 for r in rows)
    run_convergence(cfg)
    assert path.read_bytes() == first


def test_run_case_standard_vs_aggregated():
    agg = run_case(RunConfig(), 4)
    std = run_case(RunConfig(flavor="standard"), 4)
    assert agg.solved and std.solved
    assert agg.dofs < std.dofs
    assert math.isnan(std.max_aggr_ratio)
    assert agg.energy_error == pytest.approx(std.energy_error, rel=0.5)


def test_run_case_records_errors():
    res = run_case(RunConfig(), 3, geom=LevelSetGeometry(psi=lambda x: np.ones(x.shape[:-1]), dim=2))
    assert not res.solved and res.error


@pytest.mark.parametrize("q", [1, 2])
def test_validate_passes(q):
    checks = run_validate(RunConfig(q=q, m=4))
    assert all(c.passed for c in checks), [c.line() for c in checks]
    assert len(checks) == 7


def test_validate_3d_coarse():
    checks = {c.name: c for c in run_validate(RunConfig(dim=3, m=4))}
    assert checks["volume rel. error"].passed
    assert checks["patch test energy error"].passed


def test_validate_catches_corrupted_constraints():
    checks = {c.name: c for c in run_validate(RunConfig(m=4, corrupt_constraints=True))}
    assert not checks["constraint row sums"].passed
    assert not checks["polynomial reproduction"].passed


def test_cli_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--m", "4", "--out", str(tmp_path)]) == 0
    assert "7/7 checks passed" in capsys.readouterr().out
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("corrupt_constraints = true\nm = 4\n")
    assert main(["validate", "--config", str(cfg), "--out", str(tmp_path)]) != 0


def test_cli_moving_domain(tmp_path, capsys):
    assert main(["moving-domain", "--m", "3", "--samples", "2", "--out", str(tmp_path)]) == 0
    assert "solved 2/2" in capsys.readouterr().out
    assert (tmp_path / "moving_domain_2d_circle_q1_aggregated.csv").exists()


def parse_vtk(path):
    lines = path.read_text().splitlines()
    out = {}
    i = 0
    while i < len(lines):
        tok = lines[i].split()
        if tok and tok[0] == "CELL_TYPES":
            n = int(tok[1])
            out["types"] = np.array(lines[i + 1:i + 1 + n], dtype=int)
        elif tok and tok[0] == "SCALARS":
            n = len(out["types"]) if tok[1] != "u" else out["n_points"]
            out[tok[1]] = np.array(lines[i + 2:i + 2 + n], dtype=float)
        elif tok and tok[0] == "POINTS":
            out["n_points"] = int(tok[1])
        i += 1
    return out


def test_vtk_all_interior_box(tmp_path):
    g = LevelSetGeometry(psi=lambda x: -np.ones(x.shape[:-1]), dim=2)
    mesh = classify_cells(unit_box_mesh(2, 8), g)
    quad = build_cut_quadrature(mesh, g)
    data = parse_vtk(export_vtk(mesh, g, quad, lambda x: x[:, 0], tmp_path / "box.vtk"))
    assert len(data["types"]) == 64 and np.all(data["types"] == 9)
    assert np.all(data["class"] == 0)
    assert data["n_points"] == 256 and data["u"].max() == pytest.approx(1.0)


def test_vtk_from_convergence_run(tmp_path):
    cfg = RunConfig(m_min=4, max_m=4, vtk=True, estimate_kappa=False, out=str(tmp_path))
    run_convergence(cfg)
    data = parse_vtk(tmp_path / "convergence_2d_q1_aggregated_m4.vtk")
    assert set(np.unique(data["types"])) == {5, 9}
    assert np.all(np.abs(data["u"]) <= 1.0 + 0.1)
    assert len(np.unique(data["root_id"][data["class"] == 1])) >= 2
    assert (tmp_path / "convergence_2d_q1_aggregated_m4_aggregates.csv").exists()
