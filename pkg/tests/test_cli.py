import math

import pytest

from adscone.cli import main
from adscone.pipeline import VerificationReport


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "torus.ini").write_text("[input]\nfixture = torus:0\nq = const:1.2\n[run]\noutput = out\n")
    assert main(["verify", "--config", str(d / "torus.ini"), "--report", str(d / "forward.txt")]) == 0
    return d


def test_verify_writes_outputs(run_dir):
    out = run_dir / "out"
    for name in ("mesh.txt", "reference.txt", "metric.txt", "qdiff.txt", "germ.txt", "pair.txt", "g1.txt", "g2.txt"):
        assert (out / name).is_file(), name
    rep = VerificationReport.parse((run_dir / "forward.txt").read_text())
    assert rep.passed


def test_stage_commands(run_dir, capsys):
    o = run_dir / "out"
    m = str(o / "mesh.txt")
    assert main(["uniformize", "--mesh", m, "--reference", str(o / "reference.txt"), "--out", str(run_dir / "c.txt")]) == 0
    assert main(["solve-germ", "--mesh", m, "--metric", str(o / "reference.txt"), "--qdiff", str(o / "qdiff.txt"),
                 "--out", str(run_dir / "germ.txt")]) == 0
    assert main(["verify", "--mesh", m, "--germ", str(run_dir / "germ.txt")]) == 0
    assert main(["mess", "--mesh", m, "--germ", str(o / "germ.txt"), "--out", str(run_dir / "pair.txt"),
                 "--g1-out", str(run_dir / "g1.txt"), "--g2-out", str(run_dir / "g2.txt")]) == 0
    assert main(["middle", "--mesh", m, "--g1", str(run_dir / "g1.txt"), "--g2", str(run_dir / "g2.txt"),
                 "--out", str(run_dir / "middle.txt"), "--report", str(run_dir / "middle_report.txt")]) == 0
    assert (run_dir / "middle.map1.txt").is_file() and (run_dir / "middle.map2.txt").is_file()
    out = capsys.readouterr().out
    assert "residual.germ.gauss" in out and "pass = true" in out


def test_roundtrip_and_plots(run_dir, capsys):
    rep = run_dir / "rt.txt"
    assert main(["roundtrip", "--config", str(run_dir / "torus.ini"), "--report", str(rep)]) == 0
    assert main(["emit-plots", "--report", str(rep), "--dir", str(run_dir / "plots")]) == 0
    assert (run_dir / "plots" / "residuals.csv").is_file()
    assert (run_dir / "plots" / "roundtrip_refinement.csv").is_file()


def test_maxgraph_command(tmp_path, capsys):
    args = ["maxgraph", "--theta", str(math.pi / 2), "--radius", "1", "--boundary", "fourier:0,0,0.1,0"]
    assert main(args + ["--out", str(tmp_path / "u.csv"), "--report", str(tmp_path / "r.txt")]) == 0
    rep = VerificationReport.parse((tmp_path / "r.txt").read_text())
    assert rep.residuals["maxgraph.cone_angle"] < 0.02
    assert "decay" in rep.tables
    assert main(["emit-plots", "--report", str(tmp_path / "r.txt"), "--dir", str(tmp_path)]) == 0
    assert (tmp_path / "decay.csv").read_text().startswith("rho,gradNorm")
    assert main(["maxgraph", "--theta", "1", "--radius", "0.5", "--boundary", "fourier:0,0,0.1,0"]) == 2


def test_eval_model(capsys):
    assert main(["eval-model", "--theta", "1.0", "--rho", "0.5", "--t", "0.2"]) == 0
    out = capsys.readouterr().out
    assert "g.00 = -1" in out and "pass = true" in out
    assert main(["eval-model", "--theta", "1.0", "--rho", "0.5", "--epsilon", "0.1"]) == 0
    assert "residual.model.cap_curvature" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert main(["roundtrip", "--config", str(tmp_path / "none.ini")]) == 2
    (tmp_path / "noq.ini").write_text("[input]\nfixture = torus:0\n")
    assert main(["verify", "--config", str(tmp_path / "noq.ini")]) == 2
    assert "qdiff" in capsys.readouterr().err
    (tmp_path / "strict.ini").write_text(
        "[input]\nfixture = torus:0\nq = const:1.2\n[thresholds]\nmiddle.hopf_sum = 1e-6\n"
    )
    assert main(["verify", "--config", str(tmp_path / "strict.ini")]) == 1
    assert main(["verify"]) == 2
    with pytest.raises(SystemExit):
        main(["nonsense"])
