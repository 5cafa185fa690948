import json
import shutil
import subprocess
from pathlib import Path

import pytest

from openlattice.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, main
from openlattice.config import ConfigError, from_dict, load_config, num
from openlattice.hydrostatics import PhaseDiagram
from openlattice.report import ExperimentResult, emit_report

ROOT = Path(__file__).resolve().parents[1]

BASE = """\
kind = "{kind}"
seed = 7

[model]
kind = "misanthrope"
rates = "exclusion"

[domain]
a = 0.0
b = 1.0

[boundary]
lambda_a = {la}
lambda_b = 0.2

[initial]
kind = "step"
left = 0.9
right = 0.2

[run]
N = [{N}]
replicas = 2
times = [0.1]
{extra}
"""


def write(tmp_path, kind="solve", la="0.9", N=20, extra=""):
    p = tmp_path / f"{kind}.toml"
    p.write_text(BASE.format(kind=kind, la=la, N=N, extra=extra))
    return p


# ------------------------------------------------------------ config errors


def test_numbers_accept_fractions():
    assert num("1/3") == pytest.approx(1 / 3)
    assert num(2) == 2.0
    with pytest.raises(ConfigError):
        num("one")
    with pytest.raises(ConfigError):
        num(True)


@pytest.mark.parametrize(
    "kw",
    [dict(N=3), dict(la="1.5"), dict(la='"x"'), dict(kind="bogus"), dict(extra="[pde]\ncfl = 2.0")],
    ids=["small-N", "density", "not-a-number", "kind", "cfl"],
)
def test_invalid_configs_exit_with_code_two(tmp_path, kw, capsys):
    path = write(tmp_path, **kw)
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_missing_file_and_model(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG
    with pytest.raises(ConfigError):
        from_dict({"kind": "solve", "seed": 1})
    with pytest.raises(ConfigError):
        from_dict({"kind": "solve", "seed": 1, "model_file": "absent.toml"}, base_dir=tmp_path)


def test_model_failing_structural_checks(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('kind = "solve"\nseed = 1\n[model]\nkind = "overtaking"\nweights = {"+e1" = ["1", "2"]}\n'
                 '[boundary]\nlambda_a = 0.5\nlambda_b = 0.5\n')
    with pytest.raises(ConfigError, match="structural"):
        load_config(p)


def test_validate_command(tmp_path, capsys):
    path = write(tmp_path)
    assert main(["validate", "--config", str(path)]) == EXIT_OK
    line = capsys.readouterr().out.strip()
    cfg = load_config(path)
    assert line == f"ok solve {cfg.digest()}"


def test_seed_override_changes_digest(tmp_path):
    path = write(tmp_path)
    assert load_config(path).digest() != load_config(path, seed=8).digest()
    assert load_config(path).digest() == load_config(path).digest()
    with pytest.raises(SystemExit):
        main(["validate", "--config", str(path), "--seed", "-1"])


# ------------------------------------------------------------------ reports


def test_emit_report_creates_directory(tmp_path):
    res = ExperimentResult("demo", {"t": "a,b\n1,2\n"}, {"p": ([0.0, 1.0], [1.0, 2.0], [0.1, 0.1])},
                           {"x": 1.5}, {"ok": True})
    out = tmp_path / "deep" / "dir"
    paths = emit_report(res, out, "abc")
    names = sorted(p.name for p in paths)
    assert names == ["demo-abc-p.dat", "demo-abc-summary.jsonl", "demo-abc-t.csv"]
    assert (out / "demo-abc-t.csv").read_text() == "a,b\n1,2\n"
    assert (out / "demo-abc-p.dat").read_text().splitlines()[0].startswith("# x y yerr")
    json.loads((out / "demo-abc-summary.jsonl").read_text().splitlines()[0])


def test_solve_run_writes_reports(tmp_path, capsys):
    path = write(tmp_path)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(path), "--out", str(out)]) == EXIT_OK
    assert any(p.suffix == ".csv" for p in out.iterdir())
    assert "PASS" in capsys.readouterr().out


def test_phase_diagram_export_round_trip(tmp_path):
    path = write(tmp_path, kind="phases", extra="[phases]\nresolution = 20\n[tolerances]\nphases = 3\n")
    out = tmp_path / "out"
    assert main(["phases", "--config", str(path), "--out", str(out)]) == EXIT_OK
    csv_file = next(out.glob("phases-*-diagram.csv"))
    diag = PhaseDiagram.from_csv(csv_file.read_text())
    assert diag.n_phases == 3 and diag.lam.size == 21


def test_wrong_phase_count_exits_with_code_one(tmp_path):
    path = write(tmp_path, kind="phases", extra="[phases]\nresolution = 10\n[tolerances]\nphases = 5\n")
    assert main(["phases", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_FAIL


def test_simulation_is_reproducible(tmp_path):
    path = write(tmp_path, kind="simulate", N=100)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(path), "--out", str(a)]) == EXIT_OK
    assert main(["simulate", "--config", str(path), "--out", str(b)]) == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir()) and files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.skipif(shutil.which("openlattice") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = ROOT / "configs" / "small_convergence.toml"
    done = subprocess.run(["openlattice", "validate", "--config", str(cfg)], capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("ok hydro-convergence")
