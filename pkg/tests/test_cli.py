import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from flatspec.cli import run
from flatspec.harmonic import ThetaFourierField, save_field
from flatspec.mesh import build_mesh
from flatspec.surface import build_from_spec
from flatspec.cli import PRESETS


def _summary(out, command):
    return json.loads((out / f"{command}.summary.json").read_text())


def _csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# flatspec ")
    return list(csv.DictReader(lines[1:]))


def test_surface_command(tmp_path):
    assert run(["--out-dir", str(tmp_path), "surface", "--surface", "equilateral"]) == 0
    doc = _summary(tmp_path, "surface")
    assert doc["summary"]["genus"] == 0
    assert doc["summary"]["sum_alpha"] == pytest.approx(-2)
    rows = _csv(tmp_path / "cones.csv")
    assert len(rows) == 3


def test_bad_surface_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"triangles": [[[0, 0], [1, 0], [0, 1]]], "gluings": []}')
    assert run(["--out-dir", str(tmp_path), "surface", "--surface", str(bad)]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run(["--out-dir", str(tmp_path), "surface", "--surface", str(broken)]) == 2
    assert run(["--out-dir", str(tmp_path), "surface", "--surface", str(tmp_path / "missing.json")]) == 4


def test_seed_required(tmp_path):
    assert run(["--out-dir", str(tmp_path), "ergodicity", "--surface", "irrational", "--steps", "100"]) == 2


def test_ergodicity_is_deterministic(tmp_path):
    args = ["--seed", "5", "ergodicity", "--surface", "irrational", "--steps", "2000", "--bins", "4x4x16"]
    assert run(["--out-dir", str(tmp_path / "a")] + args) == 0
    assert run(["--out-dir", str(tmp_path / "b")] + args) == 0
    a = (tmp_path / "a" / "hist.csv").read_text()
    b = (tmp_path / "b" / "hist.csv").read_text()
    assert a == b
    assert _summary(tmp_path / "a", "ergodicity")["summary"]["steps"] == 2000


def test_diophantine_command(tmp_path):
    assert run(["--out-dir", str(tmp_path), "diophantine", "--angles", "(sqrt(5)-1)/2", "--N", "1e4"]) == 0
    s = _summary(tmp_path, "diophantine")["summary"]
    assert s["C_effective"] == pytest.approx(0.381966, abs=1e-6)
    assert 0.44 <= s["liminf_estimate"] <= 0.45
    rows = _csv(tmp_path / "dioph.csv")
    assert len(rows) == 10_000 and rows[0]["n"] == "1"
    with pytest.raises(SystemExit) as exc:
        run(["--out-dir", str(tmp_path), "diophantine", "--angles", "__import__('os')"])
    assert exc.value.code == 2


def test_spectrum_command(tmp_path):
    assert run(["--out-dir", str(tmp_path), "--json-summary", str(tmp_path / "s.json"), "spectrum",
                "--surface", "equilateral", "--nmax", "3", "--refine", "2", "--m0", "4"]) == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["summary"]["refinements"] == [4, 8]
    rows = _csv(tmp_path / "lambda.csv")
    assert len(rows) == 7 * 2
    zero = [r for r in rows if int(r["n"]) % 3 == 0 and r["n"] != "0"]
    assert all(abs(float(r["lambda_1"])) < 1e-8 for r in zero)


def _rhs(tmp_path, preset, modes_fn, N, m=6):
    surf = build_from_spec(PRESETS[preset])
    me = build_mesh(surf, m)
    f = ThetaFourierField(me, N, modes_fn(me))
    return save_field(f, tmp_path / "rhs")


def test_solve_h_command(tmp_path):
    man = _rhs(tmp_path, "torus", lambda me: {0: np.cos(2 * np.pi * me.vertex_xy[:, 0])}, 0)
    assert run(["--out-dir", str(tmp_path), "solve-h", "--surface", "torus", "--rhs", str(man),
                "--report", "res.json"]) == 0
    assert json.loads((tmp_path / "res.json").read_text())["summary"]["residual"] < 1e-9
    assert (tmp_path / "u_h" / "manifest.json").exists()
    const = _rhs(tmp_path / "c", "torus", lambda me: {0: np.ones(me.num_vertices)}, 0)
    assert run(["--out-dir", str(tmp_path), "solve-h", "--surface", "torus", "--rhs", str(const)]) == 2


def test_solve_h_wrong_surface(tmp_path):
    man = _rhs(tmp_path, "torus", lambda me: {0: np.cos(2 * np.pi * me.vertex_xy[:, 0])}, 0)
    assert run(["--out-dir", str(tmp_path), "solve-h", "--surface", "equilateral", "--rhs", str(man)]) == 2


def test_solve_x_command(tmp_path):
    def modes(me):
        from flatspec.cohomology import CROperatorPair
        x = me.vertex_xy[:, 0]
        v = ThetaFourierField.single_mode(me, 0, np.cos(2 * np.pi * x), N=1)
        return CROperatorPair(me).X(v).modes
    man = _rhs(tmp_path, "torus", modes, 3)
    assert run(["--out-dir", str(tmp_path), "solve-x", "--surface", "torus", "--rhs", str(man),
                "--nmax", "3"]) == 0
    assert _summary(tmp_path, "solve-x")["summary"]["residual"] < 1e-8
    obstructed = _rhs(tmp_path / "o", "torus", lambda me: {1: np.ones(me.num_vertices)}, 3)
    assert run(["--out-dir", str(tmp_path), "solve-x", "--surface", "torus", "--rhs", str(obstructed),
                "--nmax", "3"]) == 3


def test_apriori_command(tmp_path):
    assert run(["--out-dir", str(tmp_path), "--seed", "1", "apriori", "--surface", "irrational",
                "--samples", "2", "--r", "1", "--s", "1", "--m", "4", "--contents", "1,2"]) == 0
    s = _summary(tmp_path, "apriori")["summary"]
    assert s["max_ratio"] > 0 and set(s["by_content"]) == {"1", "2"}


def test_distributions_command(tmp_path):
    assert run(["--out-dir", str(tmp_path), "distributions", "--genus", "0", "--alphas=-2/3,-2/3,-2/3",
                "--nmax", "6"]) == 0
    s = _summary(tmp_path, "distributions")["summary"]
    assert -3 in s["nonzero_modes"] and all(n % 3 == 0 for n in s["nonzero_modes"])
    rows = _csv(tmp_path / "dims.csv")
    assert {r["n"]: r["dim"] for r in rows}["-3"] == "1"
    assert run(["--out-dir", str(tmp_path), "distributions", "--genus", "0", "--alphas=-1/2,-1/2"]) == 2


def test_header_is_reproducible(tmp_path):
    args = ["distributions", "--genus", "0", "--alphas=-1/2,-1/2,-1/2,-1/2", "--nmax", "2"]
    run(["--out-dir", str(tmp_path / "a")] + args)
    run(["--out-dir", str(tmp_path / "b")] + args)
    assert (tmp_path / "a" / "dims.csv").read_text() == (tmp_path / "b" / "dims.csv").read_text()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "flatspec", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("flatspec ")
