import csv
import json
from pathlib import Path

import pytest

from fracgreen import cli
from fracgreen.errors import ConfigError, QuadratureError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


CF_SMALL = "kind = mc-oracle\nname = cf\nmode = stable-cf\nseed = 4\nn_paths = 20000\n"


# --- parsing and validation


@pytest.mark.parametrize(
    "text, line, field",
    [
        ("kind = kato\nalpha = 2.5\n", 2, "alpha"),
        ("kind = kato\n\n# note\nradius = -1\n", 4, "radius"),
        ("kind = kato\nbogus = 1\n", 2, "bogus"),
        ("kind = kato\nseed = 1\nseed = 2\n", 3, "seed"),
        ("kind = kato\nn_paths = 1.5\n", 2, "n_paths"),
        ("kind = kato\njust words\n", 2, None),
        ("kind = teleport\n", 1, "kind"),
    ],
)
def test_parse_errors_name_line_and_field(text, line, field):
    with pytest.raises(ConfigError) as info:
        cli.validate(*cli.parse_config(text))
    assert info.value.line == line
    assert info.value.field == field
    assert f"line {line}" in str(info.value)


@pytest.mark.parametrize(
    "text, field",
    [
        ("alpha = 1.5\n", "kind"),
        ("kind = kato\nd = 2\nx = 1, 2, 3\n", "x"),
        ("kind = series\nd = 3\n", "d"),
        ("kind = kato\ndomain = annulus\nr_in = 2\nr_out = 1\n", "r_in"),
        ("kind = kato\ndomain = union\n", "balls"),
        ("kind = kato\ndrift = zero\ndomain = union\nballs = 0, 0, 1; 1, 0, 1\n", "balls"),
        ("kind = kato\ndrift = constant\n", "drift_vector"),
        ("kind = comparability-grid\nband = 2, 1\n", "band"),
        ("kind = kato\ndrift = singular\ndrift_eps = -0.1\n", "drift_eps"),
    ],
)
def test_validation_errors(text, field):
    with pytest.raises(ConfigError) as info:
        cli.validate(*cli.parse_config(text))
    assert info.value.field == field


def test_defaults_filled():
    cfg = cli.validate(*cli.parse_config("kind = comparability-grid\n"))
    assert cfg["alpha"] == 1.5 and cfg["d"] == 2 and cfg["drift"] == "ou" and cfg["grid"] == 20
    assert cfg["name"] == "comparability-grid"


def test_shipped_configs_validate():
    files = sorted(CONFIGS.glob("*.cfg"))
    assert len(files) >= 7
    kinds = {cli.load_config(f)["kind"] for f in files}
    assert kinds == set(cli.RUNNERS)


# --- run


def test_config_error_exit_code(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", write(tmp_path, "kind = kato\nalpha = 2.5\n"))
    assert code == 2
    assert "line 2" in err and "alpha" in err


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", tmp_path / "absent.cfg")
    assert code == 2 and "cannot read" in err


def test_bad_arguments(capsys):
    assert cli.main(["run"]) == 2
    assert cli.main(["frobnicate"]) == 2
    capsys.readouterr()


def test_run_writes_results(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", write(tmp_path, CF_SMALL), "--out", tmp_path / "res")
    assert code == 0
    assert out.startswith("PASS cf: characteristic function")
    doc = json.loads((tmp_path / "res" / "cf.json").read_text())
    assert doc["schema"] == cli.SCHEMA and doc["passed"] and doc["seed"] == 4
    assert doc["config"]["n_paths"] == 20000 and len(doc["config_hash"]) == 64
    rows = list(csv.DictReader(open(tmp_path / "res" / "cf.csv")))
    assert len(rows) == doc["n_rows"] == 20
    assert list(rows[0]) == cli.COLUMNS["mc-oracle"]
    assert all(r["passed"] == "true" for r in rows)


def test_seed_override_and_determinism(tmp_path, capsys):
    cfg = write(tmp_path, CF_SMALL)
    outs = []
    for tag, threads in (("a", 1), ("b", 1), ("c", 3)):
        assert cli.main(["run", str(cfg), "--seed", "5", "--out", str(tmp_path / tag), "--threads", str(threads)]) == 0
        outs.append(((tmp_path / tag / "cf.csv").read_bytes(), (tmp_path / tag / "cf.json").read_bytes()))
    capsys.readouterr()
    assert outs[0] == outs[1] == outs[2]
    assert json.loads(outs[0][1])["seed"] == 5


def test_criterion_failure_exit_code(tmp_path, capsys):
    text = "kind = kato\ndrift = constant\ndrift_vector = 1, 0\nradii = 1, 0.1, 0.01\nexpect = not in class\n"
    code, out, _ = run_cli(capsys, "run", write(tmp_path, text))
    assert code == 3
    assert "FAIL kato: decision" in out and "PASS kato: closed form" in out
    assert json.loads((tmp_path / "kato.json").read_text())["passed"] is False


def test_numerical_failure_exit_code(tmp_path, capsys, monkeypatch):
    def broken(cfg, threads=1):
        raise QuadratureError("budget exhausted", 1.0, 0.5)

    monkeypatch.setitem(cli.RUNNERS, "kato", broken)
    code, _, err = run_cli(capsys, "run", write(tmp_path, "kind = kato\ndrift = zero\n"))
    assert code == 4 and "QuadratureError" in err
    assert not (tmp_path / "kato.csv").exists()


@pytest.mark.slow
def test_comparability_grid_small(tmp_path, capsys):
    text = "kind = comparability-grid\nname = grid\ndrift = ou\ndrift_k = 0.5\ngrid = 4\n"
    code, out, _ = run_cli(capsys, "run", write(tmp_path, text))
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "grid.csv")))
    assert len(rows) == 16
    assert all(2 / 3 - 0.05 <= float(r["ratio"]) <= 4 / 3 + 0.05 for r in rows)


# --- report


def test_report_empty(capsys):
    code, out, _ = run_cli(capsys, "report")
    assert code == 0 and out.strip() == "no rows"


def test_report_mixed_and_seeds(tmp_path, capsys):
    kato = "kind = kato\ndrift = constant\ndrift_vector = 1, 0\nradii = 1, 0.1, 0.01\nexpect = not in class\n"
    assert cli.main(["run", str(write(tmp_path, kato))]) == 3
    cf = write(tmp_path, CF_SMALL)
    for s in ("1", "2"):
        assert cli.main(["run", str(cf), "--seed", s, "--out", str(tmp_path / ("s" + s))]) == 0
    capsys.readouterr()
    code, out, _ = run_cli(capsys, "report", tmp_path / "s1" / "cf.json", tmp_path / "kato.csv", tmp_path / "s2" / "cf.csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("FAIL kato")
    first_pass = next(i for i, t in enumerate(lines) if t.startswith("PASS"))
    assert all(not t.startswith("FAIL") for t in lines[first_pass:])
    assert "3 files" in out and "1 failed" in out
    assert "seed 1" in out and "seed 2" in out
    overlap = [t for t in lines if "seeds 1 vs 2" in t]
    assert overlap and all(t.endswith("overlap") for t in overlap)


def test_report_schema_mismatch(tmp_path, capsys):
    bad = tmp_path / "other.json"
    bad.write_text(json.dumps({"schema": "something/9"}))
    code, _, err = run_cli(capsys, "report", bad)
    assert code == 2 and "schema mismatch" in err


def test_report_column_mismatch(tmp_path, capsys):
    assert cli.main(["run", str(write(tmp_path, CF_SMALL))]) == 0
    (tmp_path / "cf.csv").write_text("a,b\n1,2\n")
    capsys.readouterr()
    code, _, err = run_cli(capsys, "report", tmp_path / "cf.json")
    assert code == 2 and "column schema" in err
